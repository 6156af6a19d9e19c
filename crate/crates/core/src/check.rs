//! Static analysis of a configured network: graph predicates, the interior
//! point condition, matching, and which convergence results have all their
//! hypotheses met.

use crate::controller::{
    normalize_constraints, solve_matching, ClosedLoop, ConstraintPolicy, Matching,
    NormalizedBounds,
};
use crate::error::Result;
use crate::graph::{
    connectivity, interior_point_condition, is_acyclic, is_balanced, Connectivity, InteriorOptions,
    InteriorPoint,
};

/// Hypotheses of one convergence result evaluated against the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremVerdict {
    pub name: &'static str,
    /// what the result guarantees when its hypotheses hold
    pub claim: &'static str,
    /// whether the configured constraint policy is the one the result is about
    pub relevant: bool,
    /// hypotheses that do not hold, empty when all hold
    pub failing: Vec<String>,
}

impl TheoremVerdict {
    pub fn holds(&self) -> bool {
        self.failing.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub connectivity: Connectivity,
    pub balanced: bool,
    pub acyclic: bool,
    /// present for constant bounds
    pub normalized: Option<NormalizedBounds>,
    /// present for constant bounds
    pub interior: Option<InteriorPoint>,
    /// constrained by the constant bounds when they are configured
    pub matching: Matching,
    pub verdicts: Vec<TheoremVerdict>,
}

impl CheckReport {
    pub fn verdict(&self, name: &str) -> Option<&TheoremVerdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }
}

pub const UNCONSTRAINED_CONSENSUS: &str = "unconstrained_consensus";
pub const BOX_STRONGLY_CONNECTED: &str = "box_strongly_connected_balanced";
pub const BOX_INTERIOR_POINT: &str = "box_interior_point";
pub const ADAPTIVE_LOWER_BOUND: &str = "adaptive_lower_bound";

/// Runs every check without simulating. `x0` enables the initial-state
/// hypothesis of the adaptive result.
pub fn check(
    sys: &ClosedLoop,
    policy: &ConstraintPolicy,
    x0: Option<&[f64]>,
    interior_opts: InteriorOptions,
) -> Result<CheckReport> {
    let g = &sys.graph;
    let conn = connectivity(g);
    let balanced = is_balanced(g);
    let acyclic = is_acyclic(g);
    let hc = sys.controller.hamiltonian();
    let zero = crate::controller::Disturbance {
        d_bar: vec![0.0; g.terminal_count()],
    };
    let d = sys.disturbance.as_ref().unwrap_or(&zero);

    let (normalized, interior, matching) = match policy {
        ConstraintPolicy::ConstantBox(b) => (
            Some(normalize_constraints(b, g)?),
            Some(interior_point_condition(g, b, interior_opts)?),
            solve_matching(g, d, hc, Some(b))?,
        ),
        _ => (None, None, solve_matching(g, d, hc, None)?),
    };

    let standard_controller = sys.controller.gains().iter().all(|&r| r == 1.0) && hc.is_standard();
    let weak = || (!conn.weakly_connected).then(|| {
        format!("weakly connected (graph has {} components)", conn.component_count)
    });
    let matched = || (!matching.matchable).then(|| {
        format!(
            "matching condition (E d̄ not reproducible by edge flows, residual {:e})",
            matching.residual
        )
    });
    let is_box = matches!(policy, ConstraintPolicy::ConstantBox(_));
    let no_box = || (!is_box).then(|| "constant flow bounds configured".to_string());
    let controller_form = || {
        (!standard_controller).then(|| "R = I and H_c = ½‖η‖²".to_string())
    };

    let mut verdicts = Vec::new();

    verdicts.push(TheoremVerdict {
        name: UNCONSTRAINED_CONSENSUS,
        claim: "outputs reach consensus and B∇H_c(η) converges to E d̄",
        relevant: matches!(policy, ConstraintPolicy::Unconstrained),
        failing: [weak(), matched()].into_iter().flatten().collect(),
    });

    let mut box_common = Vec::new();
    if let Some(n) = &normalized {
        if !n.straddling.is_empty() {
            box_common.push(format!(
                "bounds compatible with the orientation (edges {:?} straddle zero)",
                one_based(&n.straddling)
            ));
        }
        if let Some(j) = (0..n.bounds.len()).find(|&j| !(n.bounds.lower[j] < n.bounds.upper[j])) {
            box_common.push(format!("μ⁻ < μ⁺ on every edge (fails on edge {})", j + 1));
        }
    }
    let mut f2: Vec<String> = [no_box(), controller_form(), matched()].into_iter().flatten().collect();
    f2.extend(box_common);
    if !conn.strongly_connected {
        f2.push("strongly connected".into());
    }
    if !balanced {
        f2.push("balanced (in-degree equals out-degree at every vertex)".into());
    }
    if let Some(n) = &normalized {
        if !n.common_open_interval() {
            f2.push("∩ᵢ[μ⁻ᵢ, μ⁺ᵢ] contains an open interval".into());
        }
    }
    verdicts.push(TheoremVerdict {
        name: BOX_STRONGLY_CONNECTED,
        claim: "trajectories converge to output consensus with B sat(−η) = 0",
        relevant: is_box,
        failing: f2,
    });

    let mut f3: Vec<String> = [no_box(), controller_form(), weak(), matched()]
        .into_iter()
        .flatten()
        .collect();
    if let Some(ip) = &interior {
        if !ip.holds {
            f3.push(format!(
                "interior point condition ({})",
                ip.diagnostic.as_deref().unwrap_or("fails")
            ));
        }
    }
    verdicts.push(TheoremVerdict {
        name: BOX_INTERIOR_POINT,
        claim: "trajectories converge to output consensus with B sat(−η) = 0",
        relevant: is_box,
        failing: f3,
    });

    let mut f4: Vec<String> = weak().into_iter().collect();
    if !matches!(policy, ConstraintPolicy::Adaptive(_)) {
        f4.push("state-dependent bounds configured".into());
    }
    if !d.is_zero() {
        f4.push("no external in/outflow (d̄ = 0)".into());
    }
    if !hc.is_standard() {
        f4.push("H_c = ½‖η‖²".into());
    }
    if let Some(x0) = x0 {
        let gamma = sys.storage.minimizers();
        if let Some(i) = (0..x0.len()).find(|&i| x0[i] < gamma[i]) {
            f4.push(format!("x(0) ≥ γ (fails at vertex {})", i + 1));
        }
    }
    verdicts.push(TheoremVerdict {
        name: ADAPTIVE_LOWER_BOUND,
        claim: "x(t) ≥ γ for all t and outputs converge to a common value",
        relevant: matches!(policy, ConstraintPolicy::Adaptive(_)),
        failing: f4,
    });

    Ok(CheckReport {
        connectivity: conn,
        balanced,
        acyclic,
        normalized,
        interior,
        matching,
        verdicts,
    })
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|i| i + 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::AdaptiveOptions;
    use crate::controller::{BoxBounds, Disturbance, PIController};
    use crate::graph::NetworkGraph;
    use crate::hamiltonian::VertexHamiltonian;

    fn closed(g: NetworkGraph, d: Option<Vec<f64>>) -> ClosedLoop {
        let n = g.vertex_count();
        let m = g.edge_count();
        ClosedLoop::new(
            g,
            VertexHamiltonian::uniform_quadratic(n, 1.0, 0.0).unwrap(),
            PIController::standard(m),
            d.map(|d| Disturbance::new(d).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn fig3_strongly_connected_not_balanced() {
        let g = NetworkGraph::new(
            5,
            &[(0, 1), (1, 2), (2, 0), (0, 3), (3, 2), (0, 4), (4, 1)],
            &[],
        )
        .unwrap();
        let r = check(&closed(g, None), &ConstraintPolicy::Unconstrained, None, InteriorOptions::default()).unwrap();
        assert!(r.connectivity.strongly_connected);
        assert!(!r.balanced);
        assert!(r.verdict(UNCONSTRAINED_CONSENSUS).unwrap().holds());
        assert!(r.verdict(UNCONSTRAINED_CONSENSUS).unwrap().relevant);
    }

    #[test]
    fn two_cycle_box_holds() {
        let g = NetworkGraph::new(2, &[(0, 1), (1, 0)], &[]).unwrap();
        let b = BoxBounds::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
        let r = check(&closed(g, None), &ConstraintPolicy::ConstantBox(b), None, InteriorOptions::default()).unwrap();
        assert!(r.interior.as_ref().unwrap().holds);
        assert!(r.verdict(BOX_INTERIOR_POINT).unwrap().holds());
        assert!(r.verdict(BOX_STRONGLY_CONNECTED).unwrap().holds());
    }

    #[test]
    fn disconnected_graph_fails_consensus_verdict() {
        let g = NetworkGraph::new(4, &[(0, 1), (2, 3)], &[]).unwrap();
        let r = check(&closed(g, None), &ConstraintPolicy::Unconstrained, None, InteriorOptions::default()).unwrap();
        let v = r.verdict(UNCONSTRAINED_CONSENSUS).unwrap();
        assert!(!v.holds());
        assert!(v.failing[0].starts_with("weakly connected"));
    }

    #[test]
    fn adaptive_hypotheses() {
        let g = NetworkGraph::new(2, &[(0, 1)], &[(0, 1), (1, -1)]).unwrap();
        let sys = closed(g, Some(vec![1.0, 1.0]));
        let policy = ConstraintPolicy::Adaptive(AdaptiveOptions::default());
        let r = check(&sys, &policy, Some(&[-1.0, 0.0]), InteriorOptions::default()).unwrap();
        let v = r.verdict(ADAPTIVE_LOWER_BOUND).unwrap();
        assert!(v.relevant);
        assert_eq!(v.failing.len(), 2);
        assert!(v.failing.iter().any(|f| f.contains("d̄ = 0")));
        assert!(v.failing.iter().any(|f| f.contains("vertex 1")));
    }

    #[test]
    fn unmatched_disturbance_is_reported() {
        let g = NetworkGraph::new(3, &[(0, 1)], &[(0, 1), (2, -1)]).unwrap();
        let r = check(&closed(g, Some(vec![1.0, 1.0])), &ConstraintPolicy::Unconstrained, None, InteriorOptions::default()).unwrap();
        assert!(!r.matching.matchable);
        let v = r.verdict(UNCONSTRAINED_CONSENSUS).unwrap();
        assert!(v.failing.iter().any(|f| f.starts_with("matching")));
    }
}
