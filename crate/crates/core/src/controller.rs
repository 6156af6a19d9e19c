//! PI control on the edges and the closed-loop vector field.
//!
//! With `y = ∇H(x)` and `ζ = Bᵀy` the controller is
//! `η̇ = ζ`, `μ = −Rζ − ∇H_c(η)`, and the plant sees `ẋ = B sat(μ) + E d̄`.

use nalgebra::DVector;

use crate::adaptive::AdaptiveOptions;
use crate::error::{check_len, Error, Result};
use crate::graph::NetworkGraph;
pub use crate::graph::BoxBounds;
use crate::hamiltonian::{ControllerHamiltonian, VertexHamiltonian};
use crate::linalg;
use crate::lp::FlowPolytope;

/// Closed-loop state: vertex storages and edge controller states.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub x: Vec<f64>,
    pub eta: Vec<f64>,
}

impl SystemState {
    pub fn new(x: Vec<f64>, eta: Vec<f64>) -> Self {
        Self { x, eta }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.eta).all(|v| v.is_finite())
    }

    pub fn mass(&self) -> f64 {
        self.x.iter().sum()
    }
}

/// Constant in/outflow per terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub d_bar: Vec<f64>,
}

impl Disturbance {
    pub fn new(d_bar: Vec<f64>) -> Result<Self> {
        if d_bar.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("disturbance values must be finite".into()));
        }
        Ok(Self { d_bar })
    }

    pub fn is_zero(&self) -> bool {
        self.d_bar.iter().all(|&d| d == 0.0)
    }
}

/// Element-wise clamp of `x` into `[a, b]`. Values on a bound count as saturated.
pub fn saturate(x: &[f64], a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("saturation lower bound", x.len(), a.len())?;
    check_len("saturation upper bound", x.len(), b.len())?;
    x.iter()
        .zip(a.iter().zip(b))
        .enumerate()
        .map(|(i, (&xi, (&ai, &bi)))| {
            if ai.is_nan() || bi.is_nan() || ai > bi {
                Err(Error::Config(format!(
                    "saturation bounds out of order at component {}: {ai} > {bi}",
                    i + 1
                )))
            } else {
                Ok(saturate_scalar(xi, ai, bi))
            }
        })
        .collect()
}

#[inline]
pub(crate) fn saturate_scalar(x: f64, a: f64, b: f64) -> f64 {
    if x <= a {
        a
    } else if x >= b {
        b
    } else {
        x
    }
}

/// Saturation against bounds that are already known to be ordered.
pub(crate) fn saturate_with(mu: &[f64], bounds: &BoxBounds) -> Vec<f64> {
    mu.iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(&v, (&lo, &hi))| saturate_scalar(v, lo, hi))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PIController {
    gains: Vec<f64>,
    hc: ControllerHamiltonian,
}

impl PIController {
    pub fn new(gains: Vec<f64>, hc: ControllerHamiltonian) -> Result<Self> {
        check_len("controller Hamiltonian", gains.len(), hc.len())?;
        if let Some(r) = gains.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!(
                "damping gains must be strictly positive, got {r}"
            )));
        }
        Ok(Self { gains, hc })
    }

    /// `R = I`, `H_c = ½‖η‖²`.
    pub fn standard(m: usize) -> Self {
        Self {
            gains: vec![1.0; m],
            hc: ControllerHamiltonian::standard(m),
        }
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn hamiltonian(&self) -> &ControllerHamiltonian {
        &self.hc
    }

    pub fn edge_count(&self) -> usize {
        self.gains.len()
    }

    /// `μ = −Rζ − ∇H_c(η)`.
    pub fn output(&self, zeta: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
        check_len("relative output", self.gains.len(), zeta.len())?;
        check_len("controller state", self.gains.len(), eta.len())?;
        Ok(self
            .gains
            .iter()
            .zip(zeta)
            .zip(self.hc.gradient(eta))
            .map(|((r, z), g)| -r * z - g)
            .collect())
    }
}

/// How flow bounds are chosen over a run.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintPolicy {
    Unconstrained,
    ConstantBox(BoxBounds),
    Adaptive(AdaptiveOptions),
}

impl ConstraintPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Unconstrained => "unconstrained",
            Self::ConstantBox(_) => "box",
            Self::Adaptive(_) => "adaptive",
        }
    }
}

/// One evaluation of the closed-loop vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct Rhs {
    pub dx: Vec<f64>,
    pub deta: Vec<f64>,
    /// controller output before saturation
    pub mu: Vec<f64>,
    /// flows actually applied
    pub mu_sat: Vec<f64>,
}

/// `ẋ = B sat(μ; bounds) + E d̄`, `η̇ = Bᵀ∇H(x)`.
pub fn closed_loop_rhs(
    g: &NetworkGraph,
    h: &VertexHamiltonian,
    c: &PIController,
    s: &SystemState,
    bounds: &BoxBounds,
    disturbance: Option<&Disturbance>,
) -> Result<Rhs> {
    check_len("storage vector", g.vertex_count(), s.x.len())?;
    check_len("storage Hamiltonian", g.vertex_count(), h.len())?;
    check_len("controller gains", g.edge_count(), c.edge_count())?;
    check_len("flow bounds", g.edge_count(), bounds.len())?;
    let y = h.gradient(&s.x);
    let zeta = g.apply_incidence_transpose(&y);
    let mu = c.output(&zeta, &s.eta)?;
    let mu_sat = saturate(&mu, &bounds.lower, &bounds.upper)?;
    let mut dx = g.apply_incidence(&mu_sat);
    if let Some(d) = disturbance {
        check_len("disturbance", g.terminal_count(), d.d_bar.len())?;
        for (dxi, ei) in dx.iter_mut().zip(g.apply_terminal(&d.d_bar)) {
            *dxi += ei;
        }
    }
    Ok(Rhs {
        dx,
        deta: zeta,
        mu,
        mu_sat,
    })
}

/// Plant, storage energy and controller bundled for repeated evaluation.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub graph: NetworkGraph,
    pub storage: VertexHamiltonian,
    pub controller: PIController,
    pub disturbance: Option<Disturbance>,
}

impl ClosedLoop {
    pub fn new(
        graph: NetworkGraph,
        storage: VertexHamiltonian,
        controller: PIController,
        disturbance: Option<Disturbance>,
    ) -> Result<Self> {
        check_len("storage Hamiltonian", graph.vertex_count(), storage.len())?;
        check_len("controller gains", graph.edge_count(), controller.edge_count())?;
        if let Some(d) = &disturbance {
            check_len("disturbance", graph.terminal_count(), d.d_bar.len())?;
        }
        Ok(Self {
            graph,
            storage,
            controller,
            disturbance,
        })
    }

    pub fn check_state(&self, s: &SystemState) -> Result<()> {
        check_len("initial storage", self.graph.vertex_count(), s.x.len())?;
        check_len("initial controller state", self.graph.edge_count(), s.eta.len())
    }

    /// Raw controller flows at `s`.
    pub fn flows(&self, s: &SystemState) -> Vec<f64> {
        let y = self.storage.gradient(&s.x);
        let zeta = self.graph.apply_incidence_transpose(&y);
        self.controller
            .gains()
            .iter()
            .zip(&zeta)
            .zip(self.controller.hamiltonian().gradient(&s.eta))
            .map(|((r, z), g)| -r * z - g)
            .collect()
    }

    /// Vector field given raw flows already evaluated at `s`.
    pub(crate) fn rhs_from_flows(&self, s: &SystemState, mu: Vec<f64>, bounds: &BoxBounds) -> Rhs {
        let y = self.storage.gradient(&s.x);
        let zeta = self.graph.apply_incidence_transpose(&y);
        let mu_sat = saturate_with(&mu, bounds);
        let mut dx = self.graph.apply_incidence(&mu_sat);
        if let Some(d) = &self.disturbance {
            for (dxi, ei) in dx.iter_mut().zip(self.graph.apply_terminal(&d.d_bar)) {
                *dxi += ei;
            }
        }
        Rhs {
            dx,
            deta: zeta,
            mu,
            mu_sat,
        }
    }

    pub fn rhs(&self, s: &SystemState, bounds: &BoxBounds) -> Result<Rhs> {
        closed_loop_rhs(
            &self.graph,
            &self.storage,
            &self.controller,
            s,
            bounds,
            self.disturbance.as_ref(),
        )
    }
}

/// Bounds rewritten so that they are compatible with the edge orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedBounds {
    pub graph: NetworkGraph,
    pub bounds: BoxBounds,
    /// edges whose orientation was reversed
    pub flipped: Vec<usize>,
    /// edges whose interval contains zero in its interior
    pub straddling: Vec<usize>,
}

impl NormalizedBounds {
    /// Maps a controller state of the original orientation onto the normalized one.
    pub fn map_eta(&self, eta: &[f64]) -> Vec<f64> {
        let mut out = eta.to_vec();
        for &j in &self.flipped {
            out[j] = -out[j];
        }
        out
    }

    /// True when the bounds of every edge share a common open interval.
    pub fn common_open_interval(&self) -> bool {
        let lo = self
            .bounds
            .lower
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let hi = self.bounds.upper.iter().cloned().fold(f64::INFINITY, f64::min);
        lo < hi
    }
}

/// Reverses every edge whose interval lies in the non-positive half-line so
/// that `0 ≤ μ⁻ ≤ μ⁺` wherever that is achievable.
pub fn normalize_constraints(bounds: &BoxBounds, g: &NetworkGraph) -> Result<NormalizedBounds> {
    check_len("flow bounds", g.edge_count(), bounds.len())?;
    let mut lower = bounds.lower.clone();
    let mut upper = bounds.upper.clone();
    let mut flipped = Vec::new();
    let mut straddling = Vec::new();
    for j in 0..bounds.len() {
        let (lo, hi) = (bounds.lower[j], bounds.upper[j]);
        if lo > hi {
            return Err(Error::Config(format!(
                "edge {}: lower bound {lo} exceeds upper bound {hi}",
                j + 1
            )));
        }
        if hi <= 0.0 && lo < 0.0 {
            lower[j] = -hi;
            upper[j] = -lo;
            flipped.push(j);
        } else if lo < 0.0 && hi > 0.0 {
            straddling.push(j);
        }
    }
    Ok(NormalizedBounds {
        graph: g.with_reversed(&flipped),
        bounds: BoxBounds { lower, upper },
        flipped,
        straddling,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub matchable: bool,
    /// controller state reproducing the disturbance
    pub eta_bar: Option<Vec<f64>>,
    /// edge flow with `B v̄ = E d̄`
    pub v_bar: Option<Vec<f64>>,
    /// `‖B v̄ − E d̄‖∞`, or of the least-squares attempt when unmatchable
    pub residual: f64,
}

/// Finds a steady flow reproducing the disturbance: `E d̄ = B v̄`, with
/// `v̄ = ∇H_c(η̄)`. In the constrained case the applied flow `−v̄` must lie
/// inside the bounds, so that `B sat(−∇H_c(η̄)) + E d̄ = 0`.
///
/// The unconstrained flow is the minimum 2-norm one; the constrained flow is
/// the least 1-norm point of the feasible box.
pub fn solve_matching(
    g: &NetworkGraph,
    d: &Disturbance,
    hc: &ControllerHamiltonian,
    bounds: Option<&BoxBounds>,
) -> Result<Matching> {
    check_len("disturbance", g.terminal_count(), d.d_bar.len())?;
    check_len("controller Hamiltonian", g.edge_count(), hc.len())?;
    let target = g.apply_terminal(&d.d_bar);
    let tol = 1e-9 * (1.0 + linalg::norm_inf(&target));

    let residual_of = |v: &[f64]| {
        let bv = g.apply_incidence(v);
        bv.iter()
            .zip(&target)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    };

    let candidate = match bounds {
        None => {
            let v = linalg::lstsq(
                &g.incidence_matrix(),
                &DVector::from_column_slice(&target),
                1e-12,
            );
            Some(v.iter().cloned().collect::<Vec<f64>>())
        }
        Some(b) => {
            check_len("flow bounds", g.edge_count(), b.len())?;
            // the applied flow −v̄ must respect the bounds
            let mirrored = BoxBounds {
                lower: b.upper.iter().map(|u| -u).collect(),
                upper: b.lower.iter().map(|l| -l).collect(),
            };
            FlowPolytope::new(g, &mirrored, &target).min_l1()
        }
    };

    let Some(v) = candidate else {
        return Ok(Matching {
            matchable: false,
            eta_bar: None,
            v_bar: None,
            residual: f64::INFINITY,
        });
    };
    let residual = residual_of(&v);
    if residual > tol {
        return Ok(Matching {
            matchable: false,
            eta_bar: None,
            v_bar: None,
            residual,
        });
    }
    let eta_bar = hc.gradient_inverse(&v);
    Ok(Matching {
        matchable: true,
        eta_bar: Some(eta_bar),
        v_bar: Some(v),
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig3(terminals: &[(usize, i8)]) -> NetworkGraph {
        NetworkGraph::new(
            5,
            &[(0, 1), (1, 2), (2, 0), (0, 3), (3, 2), (0, 4), (4, 1)],
            terminals,
        )
        .unwrap()
    }

    fn fork() -> NetworkGraph {
        NetworkGraph::new(4, &[(0, 1), (1, 2), (1, 3)], &[]).unwrap()
    }

    #[test]
    fn saturate_examples() {
        assert_eq!(saturate(&[5.0], &[-1.0], &[2.0]).unwrap(), vec![2.0]);
        assert_eq!(
            saturate(&[3.5], &[f64::NEG_INFINITY], &[f64::INFINITY]).unwrap(),
            vec![3.5]
        );
        assert_eq!(
            saturate(&[-3.0, 0.0, 7.0], &[-1.0; 3], &[1.0; 3]).unwrap(),
            vec![-1.0, 0.0, 1.0]
        );
        assert!(matches!(
            saturate(&[0.0], &[1.0], &[0.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn controller_output_examples() {
        let c = PIController::standard(2);
        assert_eq!(c.output(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(c.output(&[1.0, -2.0], &[3.0, 1.0]).unwrap(), vec![-4.0, 1.0]);
        assert!(PIController::new(vec![1.0, 0.0], ControllerHamiltonian::standard(2)).is_err());
    }

    #[test]
    fn equilibrium_has_zero_rhs() {
        let g = fig3(&[]);
        let h = VertexHamiltonian::uniform_quadratic(5, 2.0, 0.0).unwrap();
        let c = PIController::standard(7);
        let s = SystemState::new(vec![0.4; 5], vec![0.0; 7]);
        let r = closed_loop_rhs(&g, &h, &c, &s, &BoxBounds::unbounded(7), None).unwrap();
        assert!(r.dx.iter().chain(&r.deta).all(|&v| v == 0.0));
    }

    #[test]
    fn fork_unconstrained_drains_gray_vertex() {
        // x₂ at its minimizer with μ₂ + μ₃ > μ₁ ≥ 0
        let g = fork();
        let h = VertexHamiltonian::uniform_quadratic(4, 1.0, 0.0).unwrap();
        let c = PIController::standard(3);
        let s = SystemState::new(vec![0.0; 4], vec![-1.0, -2.0, -2.0]);
        let r = closed_loop_rhs(&g, &h, &c, &s, &BoxBounds::unbounded(3), None).unwrap();
        assert_eq!(r.mu, vec![1.0, 2.0, 2.0]);
        assert_eq!(r.dx[1], 1.0 - 2.0 - 2.0);
    }

    #[test]
    fn dimension_mismatch() {
        let g = fork();
        let h = VertexHamiltonian::uniform_quadratic(4, 1.0, 0.0).unwrap();
        let c = PIController::standard(3);
        let s = SystemState::new(vec![0.0; 3], vec![0.0; 3]);
        assert!(matches!(
            closed_loop_rhs(&g, &h, &c, &s, &BoxBounds::unbounded(3), None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        let g = NetworkGraph::new(2, &[(0, 1), (0, 1), (0, 1)], &[]).unwrap();
        let b = BoxBounds::new(vec![-2.0, 0.0, -1.0], vec![-1.0, 1.0, 1.0]).unwrap();
        let n = normalize_constraints(&b, &g).unwrap();
        assert_eq!(n.flipped, vec![0]);
        assert_eq!(n.straddling, vec![2]);
        assert_eq!(n.bounds.lower, vec![1.0, 0.0, -1.0]);
        assert_eq!(n.bounds.upper, vec![2.0, 1.0, 1.0]);
        assert_eq!(n.graph.edges()[0], (1, 0));
    }

    #[test]
    fn matching_zero_disturbance() {
        let g = fig3(&[(0, 1), (2, -1)]);
        let m = solve_matching(
            &g,
            &Disturbance::new(vec![0.0, 0.0]).unwrap(),
            &ControllerHamiltonian::standard(7),
            None,
        )
        .unwrap();
        assert!(m.matchable);
        assert!(m.v_bar.unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(m.eta_bar.unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn matching_fig3_inflow_outflow() {
        let g = fig3(&[(0, 1), (2, -1)]);
        let d = Disturbance::new(vec![1.0, 1.0]).unwrap();
        let m = solve_matching(&g, &d, &ControllerHamiltonian::standard(7), None).unwrap();
        assert!(m.matchable);
        assert!(m.residual <= 1e-9);
        let v = m.v_bar.unwrap();
        let bv = g.apply_incidence(&v);
        let ed = g.apply_terminal(&d.d_bar);
        for (a, b) in bv.iter().zip(&ed) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn matching_fails_without_balanced_terminals() {
        let g = fig3(&[(0, 1)]);
        let d = Disturbance::new(vec![1.0]).unwrap();
        let m = solve_matching(&g, &d, &ControllerHamiltonian::standard(7), None).unwrap();
        assert!(!m.matchable);
    }

    #[test]
    fn matching_acyclic_eta_bar_unique_with_weights() {
        // tree: ker B = 0 so v̄ = (−1, −1) is unique and η̄ = v̄ / w
        let g = NetworkGraph::new(3, &[(0, 1), (1, 2)], &[(0, 1), (2, -1)]).unwrap();
        let hc = ControllerHamiltonian::weighted(vec![2.0, 4.0]).unwrap();
        let m = solve_matching(&g, &Disturbance::new(vec![1.0, 1.0]).unwrap(), &hc, None).unwrap();
        let eta = m.eta_bar.unwrap();
        assert!((eta[0] + 0.5).abs() < 1e-12 && (eta[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn constrained_matching_respects_bounds() {
        let g = NetworkGraph::new(3, &[(0, 1), (1, 2), (0, 2)], &[(0, 1), (2, -1)]).unwrap();
        let d = Disturbance::new(vec![2.0, 2.0]).unwrap();
        let hc = ControllerHamiltonian::standard(3);
        // inflow at v1, outflow at v3: the applied flows run forward
        let b = BoxBounds::new(vec![0.0; 3], vec![1.5, 1.5, 0.5]).unwrap();
        let m = solve_matching(&g, &d, &hc, Some(&b)).unwrap();
        assert!(m.matchable);
        let applied: Vec<f64> = m.v_bar.unwrap().iter().map(|v| -v).collect();
        assert!(b.contains(&applied, 1e-12));
        assert!(m.residual <= 1e-9);

        // the mirrored box would reproduce E d̄ but cannot be applied
        let reversed = BoxBounds::new(vec![-1.5, -1.5, -0.5], vec![0.0; 3]).unwrap();
        assert!(!solve_matching(&g, &d, &hc, Some(&reversed)).unwrap().matchable);
        let tight = BoxBounds::new(vec![0.0; 3], vec![0.5; 3]).unwrap();
        assert!(!solve_matching(&g, &d, &hc, Some(&tight)).unwrap().matchable);
    }

    proptest! {
        #[test]
        fn saturate_idempotent(v in prop::collection::vec(-10.0..10.0f64, 1..8), w in 0.0..5.0f64, c in -3.0..3.0f64) {
            let a = vec![c - w; v.len()];
            let b = vec![c + w; v.len()];
            let once = saturate(&v, &a, &b).unwrap();
            prop_assert_eq!(saturate(&once, &a, &b).unwrap(), once);
        }

        #[test]
        fn controller_matches_formula(
            r in prop::collection::vec(0.1..5.0f64, 3),
            w in prop::collection::vec(0.1..5.0f64, 3),
            zeta in prop::collection::vec(-5.0..5.0f64, 3),
            eta in prop::collection::vec(-5.0..5.0f64, 3),
        ) {
            let c = PIController::new(r.clone(), ControllerHamiltonian::weighted(w.clone()).unwrap()).unwrap();
            let mu = c.output(&zeta, &eta).unwrap();
            for j in 0..3 {
                prop_assert!((mu[j] - (-r[j] * zeta[j] - w[j] * eta[j])).abs() < 1e-12);
            }
        }

        #[test]
        fn mass_and_energy_balance(
            x in prop::collection::vec(-2.0..2.0f64, 5),
            eta in prop::collection::vec(-5.0..5.0f64, 7),
            lo in prop::collection::vec(-3.0..0.0f64, 7),
            width in prop::collection::vec(0.0..4.0f64, 7),
            d in -2.0..2.0f64,
        ) {
            let g = fig3(&[(1, 1), (3, -1)]);
            let h = VertexHamiltonian::uniform_quadratic(5, 1.7, 0.1).unwrap();
            let c = PIController::standard(7);
            let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
            let bounds = BoxBounds::new(lo, hi).unwrap();
            let dist = Disturbance::new(vec![d, d]).unwrap();
            let s = SystemState::new(x.clone(), eta);
            let r = closed_loop_rhs(&g, &h, &c, &s, &bounds, Some(&dist)).unwrap();
            // 1ᵀE = 0 here
            prop_assert!(r.dx.iter().sum::<f64>().abs() <= 1e-12);
            let y = h.gradient(&x);
            let lhs = linalg::dot(&y, &r.dx);
            let mut u = g.apply_incidence(&r.mu_sat);
            for (ui, e) in u.iter_mut().zip(g.apply_terminal(&dist.d_bar)) { *ui += e; }
            prop_assert!((lhs - linalg::dot(&u, &y)).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn normalization_preserves_dynamics(
            x in prop::collection::vec(-2.0..2.0f64, 5),
            eta in prop::collection::vec(-5.0..5.0f64, 7),
            lo in prop::collection::vec(-3.0..1.0f64, 7),
            width in prop::collection::vec(0.0..2.0f64, 7),
        ) {
            let g = fig3(&[]);
            let h = VertexHamiltonian::uniform_quadratic(5, 1.0, 0.0).unwrap();
            let c = PIController::standard(7);
            let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
            let bounds = BoxBounds::new(lo, hi).unwrap();
            let n = normalize_constraints(&bounds, &g).unwrap();
            let s = SystemState::new(x.clone(), eta.clone());
            let before = closed_loop_rhs(&g, &h, &c, &s, &bounds, None).unwrap();
            let s2 = SystemState::new(x, n.map_eta(&eta));
            let after = closed_loop_rhs(&n.graph, &h, &c, &s2, &n.bounds, None).unwrap();
            for (a, b) in before.dx.iter().zip(&after.dx) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            for j in 0..7 {
                let sign = if n.flipped.contains(&j) { -1.0 } else { 1.0 };
                prop_assert!((before.deta[j] - sign * after.deta[j]).abs() <= 1e-12);
            }
            prop_assert!(n.bounds.lower.iter().zip(&n.bounds.upper).all(|(l, u)| l <= u));
        }

        #[test]
        fn matching_residual_when_matchable(d in prop::collection::vec(-3.0..3.0f64, 2)) {
            let g = fig3(&[(0, 1), (2, -1), (4, 1), (1, -1)]);
            let dist = Disturbance::new(vec![d[0], d[0], d[1], d[1]]).unwrap();
            let m = solve_matching(&g, &dist, &ControllerHamiltonian::standard(7), None).unwrap();
            prop_assert!(m.matchable);
            prop_assert!(m.residual <= 1e-9);
        }
    }
}
