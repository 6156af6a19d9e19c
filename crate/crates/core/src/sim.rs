//! Fixed-step integration of the closed loop with invariant monitors.
//!
//! Under the adaptive policy the gray set is frozen at the start of every
//! step. Bounds are recomputed from that gray set at every stage of the
//! integrator (or once per step, see [`BoundRefresh`]). A white vertex that
//! would cross its lower bound inside a step shortens the step so that it
//! lands just above the bound, where it turns gray on the next step.

use crate::adaptive::{bounds_for_gray, AdaptiveBounds, AdaptiveOptions, BoundSource, FlowBasis};
use crate::controller::{
    saturate_with, solve_matching, BoxBounds, ClosedLoop, ConstraintPolicy, Rhs, SystemState,
};
use crate::error::{check_len, Error, Result};
use crate::hamiltonian::{shifted_storage, total_energy, SaturatedStorage, VertexHamiltonian};
use crate::graph::NetworkGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

/// When adaptive bounds are recomputed inside a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundRefresh {
    /// at every integrator stage, from the stage state and the frozen gray set
    #[default]
    Stage,
    /// once from the state at the start of the step
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub t_end: f64,
    pub step: f64,
    pub integrator: Integrator,
    /// keep every `record_every`-th step (the final state is always kept)
    pub record_every: usize,
    pub consensus_tol: f64,
    /// allowed energy increase per step
    pub lyapunov_slack: f64,
    /// clamp storages that end a step below their minimizer (adaptive policy only)
    pub clamp_guard: bool,
    pub bound_refresh: BoundRefresh,
    /// shorten steps in which a white vertex would cross its lower bound
    pub locate_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 30.0,
            step: 1e-3,
            integrator: Integrator::default(),
            record_every: 10,
            consensus_tol: 1e-4,
            lyapunov_slack: 1e-6,
            clamp_guard: true,
            bound_refresh: BoundRefresh::default(),
            locate_events: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("t_end", self.t_end)?;
        positive("step", self.step)?;
        positive("consensus_tol", self.consensus_tol)?;
        positive("lyapunov_slack", self.lyapunov_slack)?;
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gray and black sets whenever they change.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSnapshot {
    pub time: f64,
    pub gray: Vec<usize>,
    pub black: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunStats {
    pub steps: usize,
    /// steps shortened to land a vertex on its bound
    pub event_steps: usize,
    /// min over every step of `xᵢ − γᵢ`, before any clamping
    pub min_margin: f64,
    pub clamp_count: usize,
    pub max_clamp_deficit: f64,
    pub total_clamp_deficit: f64,
    /// bound evaluations whose QP constraints were inconsistent (rescaling used)
    pub qp_fallbacks: usize,
    /// bound evaluations whose balancing flow grew or flipped a flow (rescaling used under the QP solver)
    pub shrink_violations: usize,
    pub max_kkt_residual: f64,
    pub classification_changes: usize,
    /// changes that came less than three steps after the previous one
    pub chatter_events: usize,
    /// largest `V(t+h) − V(t)` over all steps
    pub max_step_increment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub mu_raw: Vec<Vec<f64>>,
    pub mu_sat: Vec<Vec<f64>>,
    /// finite entries of `φ⁺` as `(edge, bound)`
    pub phi_plus: Vec<Vec<(usize, f64)>>,
    /// Lyapunov function (shifted by the matched controller state when disturbed)
    pub v: Vec<f64>,
    pub mass: Vec<f64>,
    pub classifications: Vec<ClassificationSnapshot>,
    pub stats: RunStats,
    /// `1ᵀE d̄`, the rate at which mass should change
    pub mass_rate: f64,
    pub gamma: Vec<f64>,
}

impl Trajectory {
    fn new(gamma: Vec<f64>, mass_rate: f64) -> Self {
        Self {
            times: Vec::new(),
            x: Vec::new(),
            eta: Vec::new(),
            mu_raw: Vec::new(),
            mu_sat: Vec::new(),
            phi_plus: Vec::new(),
            v: Vec::new(),
            mass: Vec::new(),
            classifications: Vec::new(),
            stats: RunStats {
                min_margin: f64::INFINITY,
                ..RunStats::default()
            },
            mass_rate,
            gamma,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> Option<SystemState> {
        Some(SystemState::new(
            self.x.last()?.clone(),
            self.eta.last()?.clone(),
        ))
    }

    fn push(&mut self, t: f64, s: &SystemState, rhs: &Rhs, bounds: &BoxBounds, v: f64) {
        self.times.push(t);
        self.x.push(s.x.clone());
        self.eta.push(s.eta.clone());
        self.mu_raw.push(rhs.mu.clone());
        self.mu_sat.push(rhs.mu_sat.clone());
        self.phi_plus.push(
            bounds
                .upper
                .iter()
                .enumerate()
                .filter(|(_, u)| u.is_finite())
                .map(|(j, &u)| (j, u))
                .collect(),
        );
        self.v.push(v);
        self.mass.push(s.mass());
    }
}

/// Bounds in force during one step.
enum Frozen {
    Fixed(BoxBounds),
    Adaptive { gray: Vec<bool>, held: Option<BoxBounds> },
}

struct Evaluation {
    rhs: Rhs,
    bounds: BoxBounds,
    adaptive: Option<AdaptiveBounds>,
}

struct Stepper<'a> {
    sys: &'a ClosedLoop,
    policy: &'a ConstraintPolicy,
    cfg: &'a SimConfig,
    gamma: Vec<f64>,
    unbounded: BoxBounds,
    /// bounds of the previous evaluation, for the saturated flow basis
    previous: BoxBounds,
    qp_fallbacks: usize,
    shrink_violations: usize,
    max_kkt_residual: f64,
}

impl<'a> Stepper<'a> {
    fn adaptive_options(&self) -> Option<&'a AdaptiveOptions> {
        match self.policy {
            ConstraintPolicy::Adaptive(o) => Some(o),
            _ => None,
        }
    }

    fn freeze(&self, s: &SystemState) -> Frozen {
        match self.policy {
            ConstraintPolicy::Unconstrained => Frozen::Fixed(self.unbounded.clone()),
            ConstraintPolicy::ConstantBox(b) => Frozen::Fixed(b.clone()),
            ConstraintPolicy::Adaptive(o) => Frozen::Adaptive {
                gray: o.classifier.gray_mask(&s.x, &self.gamma),
                held: None,
            },
        }
    }

    fn eval(&mut self, s: &SystemState, frozen: &mut Frozen) -> Result<Evaluation> {
        let mu = self.sys.flows(s);
        let (bounds, adaptive) = match frozen {
            Frozen::Fixed(b) => (b.clone(), None),
            Frozen::Adaptive { held: Some(b), .. } => (b.clone(), None),
            Frozen::Adaptive { gray, held } => {
                let opts = self.adaptive_options().expect("adaptive policy");
                let basis = match opts.classifier.flow_basis {
                    FlowBasis::RawMu => None,
                    FlowBasis::SaturatedMu => Some(saturate_with(&mu, &self.previous)),
                };
                let ab = bounds_for_gray(&self.sys.graph, gray, &mu, basis.as_deref(), opts)?;
                match ab.source {
                    BoundSource::IterativeFallback => self.qp_fallbacks += 1,
                    BoundSource::ShrinkFallback => self.shrink_violations += 1,
                    _ if !ab.shrinks => self.shrink_violations += 1,
                    _ => {}
                }
                self.max_kkt_residual = self.max_kkt_residual.max(ab.kkt_residual);
                let b = ab.as_box();
                if self.cfg.bound_refresh == BoundRefresh::Step {
                    *held = Some(b.clone());
                }
                self.previous = b.clone();
                (b, Some(ab))
            }
        };
        let rhs = self.sys.rhs_from_flows(s, mu, &bounds);
        Ok(Evaluation {
            rhs,
            bounds,
            adaptive,
        })
    }

    /// One integrator step of size `h` given the first-stage derivative.
    fn advance(
        &mut self,
        s: &SystemState,
        k1: &Rhs,
        h: f64,
        frozen: &mut Frozen,
    ) -> Result<SystemState> {
        match self.cfg.integrator {
            Integrator::Euler => Ok(axpy(s, &[(h, k1)])),
            Integrator::Rk4 => {
                let s2 = axpy(s, &[(h / 2.0, k1)]);
                let k2 = self.eval(&s2, frozen)?.rhs;
                let s3 = axpy(s, &[(h / 2.0, &k2)]);
                let k3 = self.eval(&s3, frozen)?.rhs;
                let s4 = axpy(s, &[(h, &k3)]);
                let k4 = self.eval(&s4, frozen)?.rhs;
                Ok(axpy(
                    s,
                    &[
                        (h / 6.0, k1),
                        (h / 3.0, &k2),
                        (h / 3.0, &k3),
                        (h / 6.0, &k4),
                    ],
                ))
            }
        }
    }
}

fn axpy(s: &SystemState, terms: &[(f64, &Rhs)]) -> SystemState {
    let mut out = s.clone();
    for (c, k) in terms {
        for (xi, d) in out.x.iter_mut().zip(&k.dx) {
            *xi += c * d;
        }
        for (ei, d) in out.eta.iter_mut().zip(&k.deta) {
            *ei += c * d;
        }
    }
    out
}

/// Where a trial state sits relative to the bounds of the white vertices.
enum Landing {
    Above,
    On,
    Below,
}

fn landing(x: &[f64], gamma: &[f64], white: &[bool], opts: &AdaptiveOptions) -> Landing {
    let mut any_below = false;
    let mut any_on = false;
    for i in (0..x.len()).filter(|&i| white[i]) {
        let gap = x[i] - gamma[i];
        if gap < 0.0 {
            any_below = true;
        } else if gap <= opts.classifier.gray_band(gamma[i]) {
            any_on = true;
        }
    }
    if any_below {
        Landing::Below
    } else if any_on {
        Landing::On
    } else {
        Landing::Above
    }
}

const MAX_BISECTIONS: usize = 60;

/// Integrates the closed loop from `s0` under `policy`.
pub fn integrate(
    sys: &ClosedLoop,
    policy: &ConstraintPolicy,
    s0: &SystemState,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    sys.check_state(s0)?;
    let g = &sys.graph;
    let gamma = sys.storage.minimizers();
    if let ConstraintPolicy::ConstantBox(b) = policy {
        check_len("flow bounds", g.edge_count(), b.len())?;
    }
    if let ConstraintPolicy::Adaptive(o) = policy {
        o.classifier.validate()?;
        if sys.disturbance.as_ref().is_some_and(|d| !d.is_zero()) {
            return Err(Error::Config(
                "adaptive bounds are only defined without external in/outflows; set the disturbance to zero".into(),
            ));
        }
        if let Some(i) = (0..s0.x.len()).find(|&i| s0.x[i] < gamma[i]) {
            return Err(Error::Config(format!(
                "adaptive policy needs x(0) ≥ γ, but x{} = {} < {}",
                i + 1,
                s0.x[i],
                gamma[i]
            )));
        }
    }
    if !s0.is_finite() {
        return Err(Error::Numerical("initial state is not finite".into()));
    }

    let lyapunov = lyapunov_function(sys, policy)?;
    let energy = |s: &SystemState| lyapunov(s);
    let mass_rate = sys
        .disturbance
        .as_ref()
        .map(|d| g.apply_terminal(&d.d_bar).iter().sum())
        .unwrap_or(0.0);

    let mut stepper = Stepper {
        sys,
        policy,
        cfg,
        gamma: gamma.clone(),
        unbounded: BoxBounds::unbounded(g.edge_count()),
        previous: BoxBounds::unbounded(g.edge_count()),
        qp_fallbacks: 0,
        shrink_violations: 0,
        max_kkt_residual: 0.0,
    };
    let mut tr = Trajectory::new(gamma.clone(), mass_rate);
    let mut s = s0.clone();
    let mut t = 0.0;
    let mut v_now = energy(&s);
    let mut last_key: Option<(Vec<usize>, Vec<usize>)> = None;
    let mut last_change_step: Option<usize> = None;
    let t_eps = 1e-12 * cfg.t_end.max(1.0);
    note_margin(&mut tr.stats, &s.x, &gamma);

    loop {
        let mut frozen = stepper.freeze(&s);
        let first = stepper.eval(&s, &mut frozen)?;
        let step_index = tr.stats.steps;

        if let Some(ab) = &first.adaptive {
            let key = (ab.classification.gray.clone(), ab.classification.black.clone());
            if last_key.as_ref() != Some(&key) {
                if last_key.is_some() {
                    tr.stats.classification_changes += 1;
                    if last_change_step.is_some_and(|k| step_index - k < 3) {
                        tr.stats.chatter_events += 1;
                    }
                    last_change_step = Some(step_index);
                }
                tr.classifications.push(ClassificationSnapshot {
                    time: t,
                    gray: key.0.clone(),
                    black: key.1.clone(),
                });
                last_key = Some(key);
            }
        }

        let done = t >= cfg.t_end - t_eps;
        if done || step_index.is_multiple_of(cfg.record_every) {
            tr.push(t, &s, &first.rhs, &first.bounds, v_now);
        }
        if done {
            break;
        }

        let h = cfg.step.min(cfg.t_end - t);
        let mut next = stepper.advance(&s, &first.rhs, h, &mut frozen)?;
        let mut taken = h;

        if let (Some(opts), true, Frozen::Adaptive { gray, .. }) =
            (stepper.adaptive_options(), cfg.locate_events, &frozen)
        {
            let white: Vec<bool> = gray.iter().map(|&g| !g).collect();
            if matches!(landing(&next.x, &gamma, &white, opts), Landing::Below) {
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                let mut lo_state: Option<SystemState> = None;
                let mut landed = None;
                for _ in 0..MAX_BISECTIONS {
                    let mid = 0.5 * (lo + hi);
                    let mut trial_frozen = stepper.freeze(&s);
                    let k1 = stepper.eval(&s, &mut trial_frozen)?.rhs;
                    let trial = stepper.advance(&s, &k1, mid * h, &mut trial_frozen)?;
                    match landing(&trial.x, &gamma, &white, opts) {
                        Landing::Below => hi = mid,
                        Landing::Above => {
                            lo = mid;
                            lo_state = Some(trial);
                        }
                        Landing::On => {
                            landed = Some((mid, trial));
                            break;
                        }
                    }
                }
                let (theta, state) = match (landed, lo_state) {
                    (Some(l), _) => l,
                    (None, Some(st)) => (lo, st),
                    // no progress possible without crossing; take the step and let the guard act
                    (None, None) => (1.0, next.clone()),
                };
                if theta < 1.0 {
                    tr.stats.event_steps += 1;
                }
                next = state;
                taken = theta * h;
            }
        }

        if !next.is_finite() {
            return Err(Error::Numerical(format!(
                "state became non-finite at t = {}",
                t + taken
            )));
        }
        note_margin(&mut tr.stats, &next.x, &gamma);
        if cfg.clamp_guard && stepper.adaptive_options().is_some() {
            for (xi, &gi) in next.x.iter_mut().zip(&gamma) {
                if *xi < gi {
                    let deficit = gi - *xi;
                    tr.stats.clamp_count += 1;
                    tr.stats.total_clamp_deficit += deficit;
                    tr.stats.max_clamp_deficit = tr.stats.max_clamp_deficit.max(deficit);
                    *xi = gi;
                }
            }
        }

        let v_next = energy(&next);
        tr.stats.max_step_increment = tr.stats.max_step_increment.max(v_next - v_now);
        v_now = v_next;
        s = next;
        t += taken;
        tr.stats.steps += 1;
    }

    tr.stats.qp_fallbacks = stepper.qp_fallbacks;
    tr.stats.shrink_violations = stepper.shrink_violations;
    tr.stats.max_kkt_residual = stepper.max_kkt_residual;
    Ok(tr)
}

fn note_margin(stats: &mut RunStats, x: &[f64], gamma: &[f64]) {
    for (xi, gi) in x.iter().zip(gamma) {
        stats.min_margin = stats.min_margin.min(xi - gi);
    }
}

type EnergyFn<'a> = Box<dyn Fn(&SystemState) -> f64 + 'a>;

/// `H + H_c`, or its shift about the matched controller state when a
/// nonzero disturbance is matchable. Constant bounds use the saturated
/// controller energy instead of `H_c`.
fn lyapunov_function<'a>(sys: &'a ClosedLoop, policy: &ConstraintPolicy) -> Result<EnergyFn<'a>> {
    let hc = sys.controller.hamiltonian();
    let bounds = match policy {
        ConstraintPolicy::ConstantBox(b) => Some(b),
        _ => None,
    };
    let eta_bar = match sys.disturbance.as_ref().filter(|d| !d.is_zero()) {
        Some(d) => solve_matching(&sys.graph, d, hc, bounds)?.eta_bar,
        None => None,
    };
    if let Some(b) = bounds {
        let v = SaturatedStorage::new(&sys.storage, hc, b, eta_bar.as_deref())?;
        return Ok(Box::new(move |s| v.evaluate(s)));
    }
    match eta_bar {
        Some(eta_bar) => {
            let shifted = shifted_storage(&sys.storage, hc, &eta_bar)?;
            Ok(Box::new(move |s| shifted.evaluate(s)))
        }
        None => Ok(Box::new(move |s| total_energy(&sys.storage, hc, s))),
    }
}

/// Max over samples of `|1ᵀx(t) − 1ᵀx(0) − t·1ᵀE d̄|`.
pub fn monitor_conservation(tr: &Trajectory) -> f64 {
    let Some(&m0) = tr.mass.first() else {
        return 0.0;
    };
    tr.mass
        .iter()
        .zip(&tr.times)
        .map(|(m, t)| (m - m0 - t * tr.mass_rate).abs())
        .fold(0.0, f64::max)
}

/// Largest positive increment of `V` between consecutive samples, zero if none.
pub fn monitor_lyapunov(tr: &Trajectory) -> f64 {
    tr.v.windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consensus {
    pub reached: bool,
    pub time: Option<f64>,
    /// mean output at the final sample, only when reached
    pub alpha: Option<f64>,
    /// `‖Bᵀ∇H(x)‖∞` at the final sample
    pub final_residual: f64,
    /// `max ∇H − min ∇H` at the final sample
    pub final_spread: f64,
}

fn consensus_measures(g: &NetworkGraph, y: &[f64]) -> (f64, f64) {
    let residual = g
        .apply_incidence_transpose(y)
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if y.is_empty() { 0.0 } else { hi - lo };
    (residual, spread)
}

/// First sample from which `‖Bᵀ∇H(x)‖∞ ≤ tol` holds through the end of the run.
///
/// On a disconnected graph the edge residual can vanish while components
/// disagree, so the output spread must also stay within `(n − 1)·tol`,
/// which a connected graph satisfies automatically.
pub fn detect_consensus(
    tr: &Trajectory,
    g: &NetworkGraph,
    h: &VertexHamiltonian,
    tol: f64,
) -> Consensus {
    let n = g.vertex_count();
    let spread_tol = (n.saturating_sub(1).max(1)) as f64 * tol;
    let mut since: Option<usize> = None;
    let mut last = (f64::INFINITY, f64::INFINITY);
    let mut alpha = None;
    for (k, x) in tr.x.iter().enumerate() {
        let y = h.gradient(x);
        last = consensus_measures(g, &y);
        if last.0 <= tol && last.1 <= spread_tol {
            since.get_or_insert(k);
        } else {
            since = None;
        }
        if k + 1 == tr.x.len() && n > 0 {
            alpha = Some(y.iter().sum::<f64>() / n as f64);
        }
    }
    let reached = since.is_some();
    Consensus {
        reached,
        time: since.map(|k| tr.times[k]),
        alpha: if reached { alpha } else { None },
        final_residual: last.0,
        final_spread: last.1,
    }
}

/// Proportional-only flow `ẋ = −B R Bᵀ ∇H(x)`, integrated with the configured scheme.
/// The returned trajectory has empty controller states.
pub fn integrate_proportional(
    g: &NetworkGraph,
    h: &VertexHamiltonian,
    gains: &[f64],
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_len("storage vector", g.vertex_count(), x0.len())?;
    check_len("storage Hamiltonian", g.vertex_count(), h.len())?;
    check_len("damping gains", g.edge_count(), gains.len())?;
    let field = |x: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let zeta = g.apply_incidence_transpose(&h.gradient(x));
        let mu: Vec<f64> = zeta.iter().zip(gains).map(|(z, r)| -r * z).collect();
        (g.apply_incidence(&mu), mu)
    };
    let shift = |x: &[f64], c: f64, d: &[f64]| -> Vec<f64> {
        x.iter().zip(d).map(|(a, b)| a + c * b).collect()
    };

    let mut tr = Trajectory::new(h.minimizers(), 0.0);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let t_eps = 1e-12 * cfg.t_end.max(1.0);
    loop {
        let (k1, mu) = field(&x);
        let done = t >= cfg.t_end - t_eps;
        if done || tr.stats.steps.is_multiple_of(cfg.record_every) {
            tr.times.push(t);
            tr.x.push(x.clone());
            tr.eta.push(Vec::new());
            tr.mu_raw.push(mu.clone());
            tr.mu_sat.push(mu);
            tr.phi_plus.push(Vec::new());
            tr.v.push(h.value(&x));
            tr.mass.push(x.iter().sum());
        }
        if done {
            break;
        }
        let dt = cfg.step.min(cfg.t_end - t);
        x = match cfg.integrator {
            Integrator::Euler => shift(&x, dt, &k1),
            Integrator::Rk4 => {
                let k2 = field(&shift(&x, dt / 2.0, &k1)).0;
                let k3 = field(&shift(&x, dt / 2.0, &k2)).0;
                let k4 = field(&shift(&x, dt, &k3)).0;
                x.iter()
                    .enumerate()
                    .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            }
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("state became non-finite at t = {}", t + dt)));
        }
        t += dt;
        tr.stats.steps += 1;
    }
    tr.stats.min_margin = tr
        .x
        .iter()
        .flat_map(|x| x.iter().zip(&tr.gamma).map(|(a, b)| a - b))
        .fold(f64::INFINITY, f64::min);
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{Disturbance, PIController};
    use crate::hamiltonian::HydraulicParams;

    fn fig3_loop() -> ClosedLoop {
        let g = NetworkGraph::new(
            5,
            &[(0, 1), (1, 2), (2, 0), (0, 3), (3, 2), (0, 4), (4, 1)],
            &[],
        )
        .unwrap();
        let h = VertexHamiltonian::hydraulic(&HydraulicParams::uniform(5, 1.0, 1.0)).unwrap();
        ClosedLoop::new(g, h, PIController::standard(7), None).unwrap()
    }

    fn short(t_end: f64) -> SimConfig {
        SimConfig {
            t_end,
            record_every: 1,
            ..SimConfig::default()
        }
    }

    #[test]
    fn equilibrium_stays_put() {
        let sys = fig3_loop();
        let s0 = SystemState::new(vec![0.7; 5], vec![0.0; 7]);
        for policy in [
            ConstraintPolicy::Unconstrained,
            ConstraintPolicy::Adaptive(AdaptiveOptions::default()),
        ] {
            let tr = integrate(&sys, &policy, &s0, &short(0.5)).unwrap();
            for x in &tr.x {
                assert_eq!(x, &s0.x);
            }
            assert_eq!(monitor_lyapunov(&tr), 0.0);
            assert_eq!(monitor_conservation(&tr), 0.0);
            let c = detect_consensus(&tr, &sys.graph, &sys.storage, 1e-4);
            assert!(c.reached);
            assert_eq!(c.time, Some(0.0));
        }
    }

    #[test]
    fn adaptive_rejects_state_below_minimizer() {
        let sys = fig3_loop();
        let s0 = SystemState::new(vec![-0.1, 1.0, 1.0, 1.0, 1.0], vec![0.0; 7]);
        let policy = ConstraintPolicy::Adaptive(AdaptiveOptions::default());
        assert!(matches!(
            integrate(&sys, &policy, &s0, &short(0.1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn adaptive_rejects_disturbance() {
        let g = NetworkGraph::new(2, &[(0, 1)], &[(0, 1), (1, -1)]).unwrap();
        let h = VertexHamiltonian::uniform_quadratic(2, 1.0, 0.0).unwrap();
        let sys = ClosedLoop::new(
            g,
            h,
            PIController::standard(1),
            Some(Disturbance::new(vec![1.0, 1.0]).unwrap()),
        )
        .unwrap();
        let s0 = SystemState::new(vec![1.0, 1.0], vec![0.0]);
        let policy = ConstraintPolicy::Adaptive(AdaptiveOptions::default());
        assert!(integrate(&sys, &policy, &s0, &short(0.1)).is_err());
    }

    #[test]
    fn times_strictly_increase_and_arrays_align() {
        let sys = fig3_loop();
        let s0 = SystemState::new(
            vec![0.0, 0.5, 1.0, 2.0, 0.0],
            vec![5.0, 9.0, 3.0, 0.0, -1.0, -2.0, -4.0],
        );
        let policy = ConstraintPolicy::Adaptive(AdaptiveOptions::default());
        let cfg = SimConfig {
            t_end: 1.0,
            record_every: 7,
            ..SimConfig::default()
        };
        let tr = integrate(&sys, &policy, &s0, &cfg).unwrap();
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        let len = tr.len();
        for l in [tr.x.len(), tr.eta.len(), tr.mu_raw.len(), tr.mu_sat.len(), tr.phi_plus.len(), tr.v.len(), tr.mass.len()] {
            assert_eq!(l, len);
        }
        assert!((tr.times[len - 1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_components_do_not_agree() {
        let g = NetworkGraph::new(4, &[(0, 1), (2, 3)], &[]).unwrap();
        let h = VertexHamiltonian::uniform_quadratic(4, 1.0, 0.0).unwrap();
        let sys = ClosedLoop::new(g, h, PIController::standard(2), None).unwrap();
        let s0 = SystemState::new(vec![1.0, 2.0, 5.0, 3.0], vec![0.0; 2]);
        let cfg = SimConfig {
            t_end: 40.0,
            step: 1e-2,
            ..SimConfig::default()
        };
        let tr = integrate(&sys, &ConstraintPolicy::Unconstrained, &s0, &cfg).unwrap();
        let c = detect_consensus(&tr, &sys.graph, &sys.storage, 1e-4);
        assert!(!c.reached);
        assert!(c.final_residual < 1e-4);
        assert!((c.final_spread - 2.5).abs() < 1e-3);
        assert!(c.alpha.is_none());
    }

    #[test]
    fn proportional_flow_keeps_outputs_nonnegative() {
        let sys = fig3_loop();
        let cfg = SimConfig {
            t_end: 5.0,
            step: 1e-3,
            ..SimConfig::default()
        };
        let tr = integrate_proportional(&sys.graph, &sys.storage, &[1.0; 7], &[0.0, 0.5, 1.0, 2.0, 0.0], &cfg)
            .unwrap();
        assert!(tr.stats.min_margin >= -1e-12);
        assert!(monitor_conservation(&tr) < 1e-12);
    }
}
