//! State-dependent flow bounds that keep every storage above its minimizer.
//!
//! At each instant vertices are classified:
//! - white: `xᵢ > γᵢ`
//! - gray: `xᵢ = γᵢ` (within a tolerance)
//! - black1: gray with net outflow, `B(i,:)μ < 0`
//! - black2: gray and fed by an outgoing edge of a black vertex
//!
//! The outgoing edges of black vertices get the saturation `[-|φ*ⱼ|, |φ*ⱼ|]`,
//! where `φ*` minimizes
//! `Σ_{j ∈ E_out} ((φⱼ − μⱼ)² + φⱼ²) / (2|μⱼ|)`
//! subject to `B(i,:)φ = 0` for every black vertex and `φₖ = μₖ` elsewhere.
//! Every other edge is left unsaturated.
//!
//! An iterative rescaling of the out-flows of deficient vertices is provided
//! alongside the QP as a second route to a balancing flow.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::graph::{BoxBounds, NetworkGraph};
use crate::linalg;

/// Relative singular-value cutoff for the KKT solve.
const KKT_RANK_TOL: f64 = 1e-10;
/// Largest black-vertex deficit, relative to `1 + ‖μ‖∞`, for which an
/// unconverged rescaling iterate is still used.
const UNCONVERGED_DEFICIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Black2Closure {
    /// only gray vertices fed directly by a black1 vertex
    OneLevel,
    /// gray vertices fed by any black vertex, repeated to a fixed point
    #[default]
    Transitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowBasis {
    /// classify with the raw controller output
    #[default]
    RawMu,
    /// classify with the output saturated by the previously active bounds
    SaturatedMu,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierOptions {
    /// `xᵢ ≤ γᵢ + max(tol, tol·|γᵢ|)` counts as gray
    pub gray_tolerance: f64,
    pub black2_closure: Black2Closure,
    pub flow_basis: FlowBasis,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        Self {
            gray_tolerance: 1e-9,
            black2_closure: Black2Closure::default(),
            flow_basis: FlowBasis::default(),
        }
    }
}

impl ClassifierOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.gray_tolerance > 0.0 && self.gray_tolerance.is_finite()) {
            return Err(Error::Config("gray_tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn gray_band(&self, gamma: f64) -> f64 {
        self.gray_tolerance.max(self.gray_tolerance * gamma.abs())
    }

    pub fn gray_mask(&self, x: &[f64], gamma: &[f64]) -> Vec<bool> {
        x.iter()
            .zip(gamma)
            .map(|(&xi, &gi)| xi <= gi + self.gray_band(gi))
            .collect()
    }
}

/// Which route produces the saturation magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundSolver {
    #[default]
    Qp,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveOptions {
    pub classifier: ClassifierOptions,
    pub solver: BoundSolver,
    /// sweep-to-sweep change at which rescaling stops
    pub rescale_tol: f64,
    pub rescale_max_iter: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            classifier: ClassifierOptions::default(),
            solver: BoundSolver::default(),
            rescale_tol: 1e-13,
            rescale_max_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VertexClassification {
    pub white: Vec<usize>,
    pub gray: Vec<usize>,
    pub black1: Vec<usize>,
    pub black2: Vec<usize>,
    /// `black1 ∪ black2`, ascending
    pub black: Vec<usize>,
    /// outgoing edges of black vertices, ascending
    pub e_b_out: Vec<usize>,
    /// edges carrying flow into each vertex
    pub f_in: Vec<Vec<usize>>,
    /// edges carrying flow out of each vertex
    pub f_out: Vec<Vec<usize>>,
}

impl VertexClassification {
    pub fn has_black(&self) -> bool {
        !self.black.is_empty()
    }
}

/// Classifies vertices from storages and flows.
pub fn classify(
    g: &NetworkGraph,
    x: &[f64],
    gamma: &[f64],
    mu: &[f64],
    opts: &ClassifierOptions,
) -> Result<VertexClassification> {
    check_len("storage vector", g.vertex_count(), x.len())?;
    check_len("lower bounds", g.vertex_count(), gamma.len())?;
    check_len("flows", g.edge_count(), mu.len())?;
    Ok(classify_mask(g, &opts.gray_mask(x, gamma), mu, opts.black2_closure))
}

/// Classification with the gray set given directly.
pub fn classify_mask(
    g: &NetworkGraph,
    gray: &[bool],
    mu: &[f64],
    closure: Black2Closure,
) -> VertexClassification {
    let n = g.vertex_count();
    let mut f_in = vec![Vec::new(); n];
    let mut f_out = vec![Vec::new(); n];
    // (source, target) of the flow on each edge carrying any
    let mut carriers = Vec::new();
    for (j, &(tail, head)) in g.edges().iter().enumerate() {
        let (src, dst) = if mu[j] > 0.0 {
            (tail, head)
        } else if mu[j] < 0.0 {
            (head, tail)
        } else {
            continue;
        };
        f_out[src].push(j);
        f_in[dst].push(j);
        carriers.push((src, dst));
    }

    let white: Vec<usize> = (0..n).filter(|&i| !gray[i]).collect();
    let gray_set: Vec<usize> = (0..n).filter(|&i| gray[i]).collect();
    let mut is_black1 = vec![false; n];
    for &i in &gray_set {
        if g.vertex_balance(i, mu) < 0.0 {
            is_black1[i] = true;
        }
    }

    let mut is_black2 = vec![false; n];
    loop {
        let mut changed = false;
        for &(src, dst) in &carriers {
            let feeding = match closure {
                Black2Closure::OneLevel => is_black1[src],
                Black2Closure::Transitive => is_black1[src] || is_black2[src],
            };
            if feeding && gray[dst] && !is_black2[dst] {
                is_black2[dst] = true;
                changed = true;
            }
        }
        if !changed || closure == Black2Closure::OneLevel {
            break;
        }
    }

    let black1: Vec<usize> = (0..n).filter(|&i| is_black1[i]).collect();
    let black2: Vec<usize> = (0..n).filter(|&i| is_black2[i]).collect();
    let black: Vec<usize> = (0..n).filter(|&i| is_black1[i] || is_black2[i]).collect();
    let mut e_b_out: Vec<usize> = black.iter().flat_map(|&i| f_out[i].iter().copied()).collect();
    e_b_out.sort_unstable();
    e_b_out.dedup();

    VertexClassification {
        white,
        gray: gray_set,
        black1,
        black2,
        black,
        e_b_out,
        f_in,
        f_out,
    }
}

/// Where a set of bounds came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSource {
    /// no black vertices, nothing to saturate
    Unbounded,
    Qp,
    Iterative,
    /// the QP constraints were inconsistent and rescaling was used instead
    IterativeFallback,
    /// the QP solution grew or reversed a flow and rescaling was used instead
    ShrinkFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveBounds {
    /// balancing flow: solver output on `e_b_out`, `μ` elsewhere
    pub phi_star: Vec<f64>,
    /// `|φ*ⱼ|` on `e_b_out`, `+∞` elsewhere
    pub phi_plus: Vec<f64>,
    /// `max(‖Aφ − b‖∞, ‖∇f + Aᵀν‖∞)` for QP solutions, balance defect otherwise
    pub kkt_residual: f64,
    pub source: BoundSource,
    /// `|φ*ⱼ| ≤ |μⱼ|` with matching sign on every bounded edge
    pub shrinks: bool,
    pub classification: VertexClassification,
}

impl AdaptiveBounds {
    pub fn as_box(&self) -> BoxBounds {
        BoxBounds::symmetric(&self.phi_plus)
    }

    /// `(edge, φ⁺)` for every finite bound.
    pub fn finite_bounds(&self) -> Vec<(usize, f64)> {
        self.phi_plus
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_finite())
            .map(|(j, &p)| (j, p))
            .collect()
    }

    fn assemble(
        mu: &[f64],
        phi_star: Vec<f64>,
        kkt_residual: f64,
        source: BoundSource,
        classification: VertexClassification,
    ) -> Self {
        let mut phi_plus = vec![f64::INFINITY; mu.len()];
        let mut shrinks = true;
        for &j in &classification.e_b_out {
            phi_plus[j] = phi_star[j].abs();
            let scale = 1.0 + mu[j].abs();
            if phi_star[j].abs() > mu[j].abs() + 1e-12 * scale || phi_star[j] * mu[j] < -1e-12 * scale
            {
                shrinks = false;
            }
        }
        Self {
            phi_star,
            phi_plus,
            kkt_residual,
            source,
            shrinks,
            classification,
        }
    }
}

/// Solves the balancing QP by fixed-variable elimination and a dense KKT solve.
pub fn solve_flow_qp(
    g: &NetworkGraph,
    mu: &[f64],
    cls: &VertexClassification,
) -> Result<AdaptiveBounds> {
    check_len("flows", g.edge_count(), mu.len())?;
    if cls.e_b_out.is_empty() {
        return Ok(AdaptiveBounds::assemble(
            mu,
            mu.to_vec(),
            0.0,
            BoundSource::Unbounded,
            cls.clone(),
        ));
    }
    let free = &cls.e_b_out;
    let rows = &cls.black;
    let (nf, nr) = (free.len(), rows.len());
    let mut col_of = vec![usize::MAX; g.edge_count()];
    for (k, &j) in free.iter().enumerate() {
        if mu[j] == 0.0 {
            return Err(Error::Infeasible(format!(
                "edge {} is bounded but carries no flow",
                j + 1
            )));
        }
        col_of[j] = k;
    }

    // ½φᵀDφ + cᵀφ with D = 2/|μ|, c = −sign(μ)
    let mut kkt = DMatrix::<f64>::zeros(nf + nr, nf + nr);
    let mut rhs = DVector::<f64>::zeros(nf + nr);
    for (k, &j) in free.iter().enumerate() {
        kkt[(k, k)] = 2.0 / mu[j].abs();
        rhs[k] = mu[j].signum();
    }
    let mut b = vec![0.0; nr];
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..g.edge_count() {
            let bij = f64::from(g.incidence(i, j));
            if bij == 0.0 {
                continue;
            }
            if col_of[j] != usize::MAX {
                kkt[(nf + r, col_of[j])] = bij;
                kkt[(col_of[j], nf + r)] = bij;
            } else {
                b[r] -= bij * mu[j];
            }
        }
        rhs[nf + r] = b[r];
    }

    let sol = linalg::lstsq(&kkt, &rhs, KKT_RANK_TOL);
    let residual = &kkt * &sol - &rhs;
    let primal = residual.rows(nf, nr).amax();
    let dual = residual.rows(0, nf).amax();
    let tol = 1e-9 * (1.0 + linalg::norm_inf(&b));
    if !(primal <= tol) {
        return Err(Error::Infeasible(format!(
            "black vertices {:?} cannot all be balanced (equality residual {primal:e})",
            rows.iter().map(|i| i + 1).collect::<Vec<_>>()
        )));
    }

    let mut phi = mu.to_vec();
    for (k, &j) in free.iter().enumerate() {
        phi[j] = sol[k];
    }
    Ok(AdaptiveBounds::assemble(
        mu,
        phi,
        primal.max(dual),
        BoundSource::Qp,
        cls.clone(),
    ))
}

/// One pass over the black vertices in ascending order, shrinking the
/// out-flows of each vertex with a deficit by `Σ|φ_in| / Σ|φ_out|`.
pub fn rescale_sweep(g: &NetworkGraph, phi: &[f64], cls: &VertexClassification) -> Vec<f64> {
    let mut next = phi.to_vec();
    for &i in &cls.black {
        if g.vertex_balance(i, &next) >= 0.0 {
            continue;
        }
        let inflow: f64 = cls.f_in[i].iter().map(|&j| next[j].abs()).sum();
        let outflow: f64 = cls.f_out[i].iter().map(|&j| next[j].abs()).sum();
        if outflow == 0.0 {
            continue;
        }
        // rounding can put the ratio a hair above one when the vertex is balanced
        let factor = (inflow / outflow).min(1.0);
        for &j in &cls.f_out[i] {
            next[j] *= factor;
        }
    }
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rescaled {
    pub flows: Vec<f64>,
    pub iterations: usize,
    /// `‖φᵏ − φᵏ⁻¹‖∞` at exit
    pub last_step: f64,
}

/// Repeats [`rescale_sweep`] from `φ⁰ = μ` until successive sweeps differ by at most `tol`.
pub fn iterative_rescaling(
    g: &NetworkGraph,
    mu: &[f64],
    cls: &VertexClassification,
    tol: f64,
    max_iter: usize,
) -> Result<Rescaled> {
    check_len("flows", g.edge_count(), mu.len())?;
    let mut phi = mu.to_vec();
    let mut last_step = f64::INFINITY;
    for k in 1..=max_iter {
        let next = rescale_sweep(g, &phi, cls);
        last_step = next
            .iter()
            .zip(&phi)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        phi = next;
        if last_step <= tol {
            return Ok(Rescaled {
                flows: phi,
                iterations: k,
                last_step,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        defect: last_step,
        last: phi,
    })
}

fn rescaled_bounds(
    g: &NetworkGraph,
    mu: &[f64],
    cls: VertexClassification,
    opts: &AdaptiveOptions,
    source: BoundSource,
) -> Result<AdaptiveBounds> {
    let deficit = |phi: &[f64]| {
        cls.black
            .iter()
            .map(|&i| (-g.vertex_balance(i, phi)).max(0.0))
            .fold(0.0_f64, f64::max)
    };
    let flows = match iterative_rescaling(g, mu, &cls, opts.rescale_tol, opts.rescale_max_iter) {
        Ok(r) => r.flows,
        // slow tails still end up balanced; accept them when the deficit is negligible
        Err(Error::NoConvergence { last, .. })
            if deficit(&last) <= UNCONVERGED_DEFICIT_TOL * (1.0 + linalg::norm_inf(mu)) =>
        {
            last
        }
        Err(e) => return Err(e),
    };
    let defect = deficit(&flows);
    Ok(AdaptiveBounds::assemble(mu, flows, defect, source, cls))
}

/// Bounds for a given gray set. `basis` overrides the flows used for classification.
pub fn bounds_for_gray(
    g: &NetworkGraph,
    gray: &[bool],
    mu: &[f64],
    basis: Option<&[f64]>,
    opts: &AdaptiveOptions,
) -> Result<AdaptiveBounds> {
    let cls = classify_mask(g, gray, basis.unwrap_or(mu), opts.classifier.black2_closure);
    if cls.e_b_out.is_empty() {
        return Ok(AdaptiveBounds::assemble(
            mu,
            mu.to_vec(),
            0.0,
            BoundSource::Unbounded,
            cls,
        ));
    }
    match opts.solver {
        BoundSolver::Iterative => rescaled_bounds(g, mu, cls, opts, BoundSource::Iterative),
        BoundSolver::Qp => match solve_flow_qp(g, mu, &cls) {
            Ok(b) if b.shrinks => Ok(b),
            // |φ*| as a bound on a reversed flow would drain the vertex
            Ok(_) => rescaled_bounds(g, mu, cls, opts, BoundSource::ShrinkFallback),
            Err(Error::Infeasible(_)) => {
                rescaled_bounds(g, mu, cls, opts, BoundSource::IterativeFallback)
            }
            Err(e) => Err(e),
        },
    }
}

/// Classify, solve for the balancing flow and assemble `φ⁺`.
pub fn compute_bounds(
    g: &NetworkGraph,
    x: &[f64],
    gamma: &[f64],
    mu: &[f64],
    opts: &AdaptiveOptions,
) -> Result<AdaptiveBounds> {
    check_len("storage vector", g.vertex_count(), x.len())?;
    check_len("lower bounds", g.vertex_count(), gamma.len())?;
    check_len("flows", g.edge_count(), mu.len())?;
    let gray = opts.classifier.gray_mask(x, gamma);
    bounds_for_gray(g, &gray, mu, None, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::saturate;

    fn fig2() -> NetworkGraph {
        NetworkGraph::new(3, &[(0, 1), (1, 2), (2, 1), (2, 0)], &[]).unwrap()
    }

    fn fork() -> NetworkGraph {
        NetworkGraph::new(4, &[(0, 1), (1, 2), (1, 3)], &[]).unwrap()
    }

    fn opts() -> ClassifierOptions {
        ClassifierOptions::default()
    }

    #[test]
    fn fork_classification() {
        let g = fork();
        let cls = classify(&g, &[1.0, 0.0, 1.0, 1.0], &[0.0; 4], &[1.0, 2.0, 2.0], &opts()).unwrap();
        assert_eq!(cls.black1, vec![1]);
        assert_eq!(cls.e_b_out, vec![1, 2]);
        assert_eq!(cls.f_in[1], vec![0]);
        assert_eq!(cls.f_out[1], vec![1, 2]);
    }

    #[test]
    fn example4_classification() {
        let g = fig2();
        let cls = classify(&g, &[1.0, 0.0, 0.0], &[0.0; 3], &[1.0, 3.0, 1.0, 2.0], &opts()).unwrap();
        assert_eq!(cls.black, vec![1, 2]);
        assert_eq!(cls.e_b_out, vec![1, 2, 3]);
        assert_eq!(cls.white, vec![0]);
    }

    #[test]
    fn all_white_has_nothing_to_bound() {
        let g = fig2();
        let cls = classify(&g, &[1.0; 3], &[0.0; 3], &[1.0, 3.0, 1.0, 2.0], &opts()).unwrap();
        assert!(cls.gray.is_empty() && cls.e_b_out.is_empty());
        let b = compute_bounds(&g, &[1.0; 3], &[0.0; 3], &[1.0, 3.0, 1.0, 2.0], &Default::default())
            .unwrap();
        assert!(b.phi_plus.iter().all(|p| p.is_infinite()));
        assert_eq!(b.source, BoundSource::Unbounded);
    }

    #[test]
    fn zero_flow_edges_are_in_neither_set() {
        let g = fork();
        let cls = classify(&g, &[0.0; 4], &[0.0; 4], &[0.0, 1.0, -1.0], &opts()).unwrap();
        assert!(cls.f_in[0].is_empty() && cls.f_out[0].is_empty());
        assert_eq!(cls.f_out[1], vec![1]);
        assert_eq!(cls.f_in[1], vec![2]);
    }

    #[test]
    fn black2_closure_levels() {
        // chain 1 → 2 → 3 → 4, all gray; only vertex 1 has net outflow
        let g = NetworkGraph::new(4, &[(0, 1), (1, 2), (2, 3)], &[]).unwrap();
        let mu = [2.0, 2.0, 2.0];
        let one = classify(
            &g,
            &[0.0; 4],
            &[0.0; 4],
            &mu,
            &ClassifierOptions {
                black2_closure: Black2Closure::OneLevel,
                ..opts()
            },
        )
        .unwrap();
        assert_eq!(one.black1, vec![0]);
        assert_eq!(one.black2, vec![1]);
        let all = classify(&g, &[0.0; 4], &[0.0; 4], &mu, &opts()).unwrap();
        assert_eq!(all.black, vec![0, 1, 2, 3]);
        assert_eq!(all.e_b_out, vec![0, 1, 2]);
    }

    #[test]
    fn example4_qp() {
        let g = fig2();
        let mu = [1.0, 3.0, 1.0, 2.0];
        let cls = classify(&g, &[1.0, 0.0, 0.0], &[0.0; 3], &mu, &opts()).unwrap();
        let b = solve_flow_qp(&g, &mu, &cls).unwrap();
        let expected = [1.0, 1.5, 0.5, 1.0];
        for (a, e) in b.phi_star.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{:?}", b.phi_star);
        }
        assert!(b.kkt_residual <= 1e-9);
        assert_eq!(b.phi_plus[0], f64::INFINITY);
        assert!(b.shrinks);
    }

    #[test]
    fn fork_qp_matches_closed_form() {
        let g = fork();
        let mu = [1.0, 2.0, 2.0];
        let cls = classify(&g, &[1.0, 0.0, 1.0, 1.0], &[0.0; 4], &mu, &opts()).unwrap();
        let b = solve_flow_qp(&g, &mu, &cls).unwrap();
        assert!((b.phi_star[1] - 0.5).abs() < 1e-12);
        assert!((b.phi_star[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_black_set_keeps_flows() {
        let g = fig2();
        let mu = [1.0, 3.0, 1.0, 2.0];
        let cls = classify(&g, &[1.0; 3], &[0.0; 3], &mu, &opts()).unwrap();
        let b = solve_flow_qp(&g, &mu, &cls).unwrap();
        assert_eq!(b.phi_star, mu.to_vec());
        assert!(b.phi_plus.iter().all(|p| *p == f64::INFINITY));
    }

    #[test]
    fn example4_rescaling_converges_to_qp() {
        let g = fig2();
        let mu = [1.0, 3.0, 1.0, 2.0];
        let cls = classify(&g, &[1.0, 0.0, 0.0], &[0.0; 3], &mu, &opts()).unwrap();
        let r = iterative_rescaling(&g, &mu, &cls, 1e-10, 10_000).unwrap();
        let expected = [1.0, 1.5, 0.5, 1.0];
        for (a, e) in r.flows.iter().zip(expected) {
            assert!((a - e).abs() < 1e-8, "{:?}", r.flows);
        }
    }

    #[test]
    fn fork_rescaling_single_step() {
        // v2 takes in 1 and sends out 4: one sweep scales both out-flows by 1/4
        let g = fork();
        let mu = [1.0, 2.0, 2.0];
        let cls = classify(&g, &[1.0, 0.0, 1.0, 1.0], &[0.0; 4], &mu, &opts()).unwrap();
        assert_eq!(rescale_sweep(&g, &mu, &cls), vec![1.0, 0.5, 0.5]);
        let r = iterative_rescaling(&g, &mu, &cls, 1e-12, 10).unwrap();
        assert_eq!(r.flows, vec![1.0, 0.5, 0.5]);
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn balanced_black_vertex_unchanged() {
        let g = fork();
        let mu = [4.0, 2.0, 2.0];
        let mut cls = classify_mask(&g, &[false, true, false, false], &mu, Black2Closure::Transitive);
        assert!(cls.black.is_empty());
        cls.black = vec![1];
        assert_eq!(rescale_sweep(&g, &mu, &cls), mu.to_vec());
    }

    #[test]
    fn qp_and_rescaling_differ_when_black_vertices_feed_each_other() {
        // Same classification as the circle instance but with μ₄ = 3.
        // Rescaling keeps v3's out-flow ratio 1:3 and settles on (4/3, 1/3, 1);
        // the QP weighs every edge separately and lands on (3/2, 1/2, 1).
        let g = fig2();
        let mu = [1.0, 3.0, 1.0, 3.0];
        let cls = classify(&g, &[1.0, 0.0, 0.0], &[0.0; 3], &mu, &opts()).unwrap();
        let qp = solve_flow_qp(&g, &mu, &cls).unwrap();
        let it = iterative_rescaling(&g, &mu, &cls, 1e-13, 100_000).unwrap();
        for (a, e) in qp.phi_star.iter().zip([1.0, 1.5, 0.5, 1.0]) {
            assert!((a - e).abs() < 1e-12);
        }
        for (a, e) in it.flows.iter().zip([1.0, 4.0 / 3.0, 1.0 / 3.0, 1.0]) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn inconsistent_balance_falls_back_to_rescaling() {
        // v2 ⇄ v3 circulate while both receive external inflow: the pair cannot be balanced
        let g = fig2();
        let mu = [1.0, 6.0, 4.0, -1.0];
        let cls = classify(&g, &[1.0, 0.0, 0.0], &[0.0; 3], &mu, &opts()).unwrap();
        assert_eq!(cls.black, vec![1, 2]);
        assert!(matches!(solve_flow_qp(&g, &mu, &cls), Err(Error::Infeasible(_))));
        let b = compute_bounds(&g, &[1.0, 0.0, 0.0], &[0.0; 3], &mu, &Default::default()).unwrap();
        assert_eq!(b.source, BoundSource::IterativeFallback);
        let sat = saturate(&mu, &b.as_box().lower, &b.as_box().upper).unwrap();
        for &i in &b.classification.black {
            assert!(g.vertex_balance(i, &sat) >= -1e-9);
        }
    }

    #[test]
    fn fork_bounds_example() {
        let g = fork();
        let mu = [1.0, 2.0, 6.0];
        let b = compute_bounds(&g, &[1.0, 0.0, 1.0, 1.0], &[0.0; 4], &mu, &Default::default()).unwrap();
        assert_eq!(b.phi_plus[0], f64::INFINITY);
        assert!((b.phi_plus[1] - 1.0 * 2.0 / 8.0).abs() < 1e-12);
        assert!((b.phi_plus[2] - 1.0 * 6.0 / 8.0).abs() < 1e-12);
        let sat = saturate(&mu, &b.as_box().lower, &b.as_box().upper).unwrap();
        assert!(g.vertex_balance(1, &sat).abs() < 1e-12);
    }

    #[test]
    fn iterative_solver_option() {
        let g = fig2();
        let mu = [1.0, 3.0, 1.0, 3.0];
        let o = AdaptiveOptions {
            solver: BoundSolver::Iterative,
            ..Default::default()
        };
        let b = compute_bounds(&g, &[1.0, 0.0, 0.0], &[0.0; 3], &mu, &o).unwrap();
        assert_eq!(b.source, BoundSource::Iterative);
        assert!((b.phi_plus[2] - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        let g = fig2();
        let mu = [1.0, 3.0, 1.0, 3.0];
        let cls = classify(&g, &[1.0, 0.0, 0.0], &[0.0; 3], &mu, &opts()).unwrap();
        match iterative_rescaling(&g, &mu, &cls, 0.0, 3) {
            Err(Error::NoConvergence {
                iterations, last, ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(last.len(), 4);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
