//! Text output: trajectory CSV and key-value run and check reports.
//!
//! Numbers are printed with 12 significant digits so that reports are
//! stable across platforms with the same rounding.

use std::fmt::Write as _;

use crate::check::CheckReport;
use crate::graph::NetworkGraph;
use crate::scenario::{Monitors, Scenario};
use crate::sim::{detect_consensus, monitor_conservation, Consensus, RunStats, Trajectory};
use crate::controller::ClosedLoop;

/// Lower-bound budget for `min(xᵢ − γᵢ)` and for single clamp deficits.
pub const LOWER_BOUND_TOL: f64 = 1e-6;
/// Budget for `|1ᵀx(t) − 1ᵀx(0) − t·1ᵀE d̄|`.
pub const CONSERVATION_TOL: f64 = 1e-8;

/// 12 significant digits.
pub fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.11e}")
    }
}

fn nums(v: &[f64]) -> String {
    v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(" ")
}

fn indices(v: &[usize]) -> String {
    v.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" ")
}

/// `t, x_1..x_n, eta_1..eta_m, mu_sat_1..mu_sat_m, V, mass`, one row per sample.
pub fn trajectory_csv(tr: &Trajectory, n: usize, m: usize) -> String {
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",x_{i}");
    }
    for j in 1..=m {
        let _ = write!(out, ",eta_{j}");
    }
    for j in 1..=m {
        let _ = write!(out, ",mu_sat_{j}");
    }
    out.push_str(",V,mass\n");
    for k in 0..tr.len() {
        let mut row = vec![num(tr.times[k])];
        row.extend(tr.x[k].iter().map(|&v| num(v)));
        row.extend(tr.eta[k].iter().map(|&v| num(v)));
        row.extend(tr.mu_sat[k].iter().map(|&v| num(v)));
        row.push(num(tr.v[k]));
        row.push(num(tr.mass[k]));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorOutcome {
    pub name: &'static str,
    pub enabled: bool,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub policy: &'static str,
    pub overrides: Vec<(String, String)>,
    pub samples: usize,
    pub final_time: f64,
    /// smallest stored value over the recorded samples
    pub min_storage: f64,
    pub consensus: Consensus,
    pub conservation_drift: f64,
    pub stats: RunStats,
    pub monitors: Vec<MonitorOutcome>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn build(scenario: &Scenario, sys: &ClosedLoop, tr: &Trajectory) -> Self {
        let consensus = detect_consensus(tr, &sys.graph, &sys.storage, scenario.sim.consensus_tol);
        let drift = monitor_conservation(tr);
        let s = &tr.stats;
        let Monitors {
            lower_bound,
            conservation,
            lyapunov,
            consensus: consensus_on,
        } = scenario.monitors;
        let monitors = vec![
            MonitorOutcome {
                name: "lower_bound",
                enabled: lower_bound,
                passed: s.min_margin >= -LOWER_BOUND_TOL && s.max_clamp_deficit <= LOWER_BOUND_TOL,
                detail: format!(
                    "min(x - gamma) = {}, max clamp deficit = {}",
                    num(s.min_margin),
                    num(s.max_clamp_deficit)
                ),
            },
            MonitorOutcome {
                name: "conservation",
                enabled: conservation,
                passed: drift <= CONSERVATION_TOL,
                detail: format!("drift = {}", num(drift)),
            },
            MonitorOutcome {
                name: "lyapunov",
                enabled: lyapunov,
                passed: s.max_step_increment <= scenario.sim.lyapunov_slack,
                detail: format!(
                    "max step increment = {} (slack {})",
                    num(s.max_step_increment),
                    num(scenario.sim.lyapunov_slack)
                ),
            },
            MonitorOutcome {
                name: "consensus",
                enabled: consensus_on,
                passed: consensus.reached,
                detail: format!(
                    "final residual = {}, final spread = {}",
                    num(consensus.final_residual),
                    num(consensus.final_spread)
                ),
            },
        ];
        let mut warnings = Vec::new();
        if s.chatter_events > 0 {
            warnings.push(format!(
                "classification changed within 3 steps of the previous change {} times (possible sliding mode)",
                s.chatter_events
            ));
        }
        if s.qp_fallbacks > 0 {
            warnings.push(format!(
                "balancing QP had inconsistent constraints {} times; rescaling used instead",
                s.qp_fallbacks
            ));
        }
        if s.shrink_violations > 0 {
            warnings.push(format!(
                "balancing QP grew or reversed a controller flow {} times; rescaling used instead",
                s.shrink_violations
            ));
        }
        Self {
            policy: match scenario.controller.constraint {
                crate::scenario::ConstraintKind::Unconstrained => "unconstrained",
                crate::scenario::ConstraintKind::Box => "box",
                crate::scenario::ConstraintKind::Adaptive => "adaptive",
            },
            overrides: scenario.overrides.clone(),
            samples: tr.len(),
            final_time: tr.times.last().copied().unwrap_or(0.0),
            min_storage: tr
                .x
                .iter()
                .flatten()
                .copied()
                .fold(f64::INFINITY, f64::min),
            consensus,
            conservation_drift: drift,
            stats: s.clone(),
            monitors,
            warnings,
        }
    }

    pub fn passed(&self) -> bool {
        self.monitors.iter().all(|m| !m.enabled || m.passed)
    }

    pub fn render(&self) -> String {
        let mut o = String::new();
        for (k, v) in &self.overrides {
            let _ = writeln!(o, "override = {k}={v}");
        }
        let s = &self.stats;
        let c = &self.consensus;
        let lines: Vec<(&str, String)> = vec![
            ("policy", self.policy.into()),
            ("final_time", num(self.final_time)),
            ("steps", s.steps.to_string()),
            ("event_steps", s.event_steps.to_string()),
            ("samples", self.samples.to_string()),
            ("min_margin", num(s.min_margin)),
            ("min_storage", num(self.min_storage)),
            ("consensus_reached", c.reached.to_string()),
            ("consensus_time", c.time.map_or("none".into(), num)),
            ("consensus_value", c.alpha.map_or("none".into(), num)),
            ("conservation_drift", num(self.conservation_drift)),
            ("max_lyapunov_increment", num(s.max_step_increment)),
            ("clamp_count", s.clamp_count.to_string()),
            ("max_clamp_deficit", num(s.max_clamp_deficit)),
            ("qp_fallbacks", s.qp_fallbacks.to_string()),
            ("shrink_violations", s.shrink_violations.to_string()),
            ("classification_changes", s.classification_changes.to_string()),
            ("chatter_events", s.chatter_events.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(o, "{k} = {v}");
        }
        for m in &self.monitors {
            let state = match (m.enabled, m.passed) {
                (false, _) => "off",
                (true, true) => "pass",
                (true, false) => "fail",
            };
            let _ = writeln!(o, "monitor.{} = {state} ({})", m.name, m.detail);
        }
        for w in &self.warnings {
            let _ = writeln!(o, "warning = {w}");
        }
        let _ = writeln!(o, "status = {}", if self.passed() { "pass" } else { "fail" });
        o
    }
}

pub fn render_check(r: &CheckReport, g: &NetworkGraph) -> String {
    let mut o = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(o, "{k} = {v}");
    };
    kv("weakly_connected", r.connectivity.weakly_connected.to_string());
    kv("strongly_connected", r.connectivity.strongly_connected.to_string());
    kv("components", r.connectivity.component_count.to_string());
    kv("balanced", r.balanced.to_string());
    kv("acyclic", r.acyclic.to_string());
    if let Some(nb) = &r.normalized {
        kv("bounds.flipped", indices(&nb.flipped));
        kv("bounds.straddling", indices(&nb.straddling));
        kv("bounds.common_open_interval", nb.common_open_interval().to_string());
    }
    if let Some(ip) = &r.interior {
        kv("interior.holds", ip.holds.to_string());
        if let Some(z) = &ip.witness {
            kv("interior.witness", nums(z));
            let residual = g
                .apply_incidence(z)
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            kv("interior.residual", num(residual));
        }
        kv("interior.active_edges", indices(&ip.active_edges));
        kv("interior.cap", num(ip.cap));
        if let Some(d) = &ip.diagnostic {
            kv("interior.diagnostic", d.clone());
        }
    }
    kv("matching.matchable", r.matching.matchable.to_string());
    kv("matching.residual", num(r.matching.residual));
    if let Some(eta) = &r.matching.eta_bar {
        kv("matching.eta_bar", nums(eta));
    }
    for v in &r.verdicts {
        let p = format!("theorem.{}", v.name);
        kv(&format!("{p}.relevant"), v.relevant.to_string());
        kv(
            &format!("{p}.hypotheses"),
            if v.holds() { "hold".into() } else { "fail".into() },
        );
        if !v.holds() {
            kv(&format!("{p}.failing"), v.failing.join("; "));
        }
        kv(&format!("{p}.claim"), v.claim.into());
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(num(6.867), "6.86700000000e0");
        assert_eq!(num(-1.0 / 3.0), "-3.33333333333e-1");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(f64::NEG_INFINITY), "-inf");
    }
}
