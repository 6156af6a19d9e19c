//! Linear programs over `{ z : B z = rhs, lower ≤ z ≤ upper }`.
//!
//! Strict inequalities are not expressible in an LP, so "strictly inside"
//! is phrased as maximizing a margin variable. Infinite bounds are replaced
//! by a finite cap so every program stays bounded.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Variable};

use crate::graph::{BoxBounds, NetworkGraph};

const CAP_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MarginSide {
    AboveLower,
    BelowUpper,
}

#[derive(Debug, Clone)]
pub(crate) struct MarginSolution {
    pub margin: f64,
    pub point: Vec<f64>,
}

pub(crate) struct FlowPolytope<'a> {
    graph: &'a NetworkGraph,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    cap: f64,
}

impl<'a> FlowPolytope<'a> {
    pub fn new(graph: &'a NetworkGraph, bounds: &BoxBounds, rhs: &[f64]) -> Self {
        let largest = bounds
            .lower
            .iter()
            .chain(&bounds.upper)
            .chain(rhs)
            .filter(|v| v.is_finite())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let cap = if largest > 0.0 {
            CAP_FACTOR * largest
        } else {
            CAP_FACTOR
        };
        let lower = bounds.lower.iter().map(|&v| v.max(-cap)).collect();
        let upper = bounds.upper.iter().map(|&v| v.min(cap)).collect();
        Self {
            graph,
            lower,
            upper,
            rhs: rhs.to_vec(),
            cap,
        }
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    fn base_problem(&self, direction: OptimizationDirection, obj: f64) -> (Problem, Vec<Variable>) {
        let mut p = Problem::new(direction);
        let vars: Vec<Variable> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| p.add_var(obj, (lo, hi)))
            .collect();
        (p, vars)
    }

    /// Adds `B z = rhs`. Returns false if a vertex without edges has nonzero rhs.
    fn add_balance_rows(&self, p: &mut Problem, vars: &[Variable]) -> bool {
        for v in 0..self.graph.vertex_count() {
            let mut expr = LinearExpr::empty();
            let mut touched = false;
            for (j, &var) in vars.iter().enumerate() {
                let b = self.graph.incidence(v, j);
                if b != 0 {
                    expr.add(var, f64::from(b));
                    touched = true;
                }
            }
            if touched {
                p.add_constraint(expr, ComparisonOp::Eq, self.rhs[v]);
            } else if self.rhs[v] != 0.0 {
                return false;
            }
        }
        true
    }

    /// Largest `s` with a feasible `z` leaving room `s` on the chosen side of
    /// edge `edge`. `None` when the polytope is empty.
    pub fn max_margin(&self, edge: usize, side: MarginSide) -> Option<MarginSolution> {
        let (mut p, vars) = self.base_problem(OptimizationDirection::Maximize, 0.0);
        if !self.add_balance_rows(&mut p, &vars) {
            return None;
        }
        let s = p.add_var(1.0, (f64::NEG_INFINITY, self.cap));
        let mut expr = LinearExpr::empty();
        expr.add(vars[edge], 1.0);
        match side {
            MarginSide::AboveLower => {
                expr.add(s, -1.0);
                p.add_constraint(expr, ComparisonOp::Ge, self.lower[edge]);
            }
            MarginSide::BelowUpper => {
                expr.add(s, 1.0);
                p.add_constraint(expr, ComparisonOp::Le, self.upper[edge]);
            }
        }
        let sol = p.solve().ok()?;
        Some(MarginSolution {
            margin: sol[s],
            point: vars.iter().map(|&v| sol[v]).collect(),
        })
    }

    /// Feasible point of least 1-norm, `None` when the polytope is empty.
    pub fn min_l1(&self) -> Option<Vec<f64>> {
        let m = self.lower.len();
        if m == 0 {
            return self.rhs.iter().all(|&r| r == 0.0).then(Vec::new);
        }
        let (mut p, vars) = self.base_problem(OptimizationDirection::Minimize, 0.0);
        if !self.add_balance_rows(&mut p, &vars) {
            return None;
        }
        for &z in &vars {
            let t = p.add_var(1.0, (0.0, f64::INFINITY));
            p.add_constraint([(t, 1.0), (z, -1.0)], ComparisonOp::Ge, 0.0);
            p.add_constraint([(t, 1.0), (z, 1.0)], ComparisonOp::Ge, 0.0);
        }
        let sol = p.solve().ok()?;
        Some(vars.iter().map(|&v| sol[v]).collect())
    }
}
