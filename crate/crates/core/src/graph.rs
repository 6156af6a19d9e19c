//! Directed graphs described by their incidence matrix.
//!
//! Column `j` of the incidence matrix `B` has `-1` at the tail of edge `j`
//! and `+1` at its head. The terminal matrix `E` has one column per
//! terminal with a single `+1` (inflow) or `-1` (outflow) entry.
//!
//! Every structural predicate here is computed twice, once through the
//! linear algebra of `B` and once by a combinatorial traversal, and the two
//! answers are required to agree.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::lp::{FlowPolytope, MarginSide};

/// Relative singular-value cutoff used for ranks of incidence matrices.
const RANK_TOL: f64 = 1e-9;

/// Optimal LP margin an edge needs before it counts as strictly interior.
pub const INTERIOR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    terminals: Vec<(usize, i8)>,
}

impl NetworkGraph {
    /// Builds a graph from zero-based `(tail, head)` pairs and `(vertex, ±1)` terminals.
    pub fn new(n: usize, edges: &[(usize, usize)], terminals: &[(usize, i8)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("a graph needs at least one vertex".into()));
        }
        for (j, &(tail, head)) in edges.iter().enumerate() {
            for v in [tail, head] {
                if v >= n {
                    return Err(Error::VertexOutOfRange { index: v, n });
                }
            }
            if tail == head {
                return Err(Error::SelfLoop {
                    edge: j,
                    vertex: tail,
                });
            }
        }
        for &(v, sign) in terminals {
            if v >= n {
                return Err(Error::VertexOutOfRange { index: v, n });
            }
            if sign != 1 && sign != -1 {
                return Err(Error::Config(format!(
                    "terminal sign must be +1 or -1, got {sign}"
                )));
            }
        }
        Ok(Self {
            n,
            edges: edges.to_vec(),
            terminals: terminals.to_vec(),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn terminal_count(&self) -> usize {
        self.terminals.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn terminals(&self) -> &[(usize, i8)] {
        &self.terminals
    }

    pub fn tail(&self, edge: usize) -> usize {
        self.edges[edge].0
    }

    pub fn head(&self, edge: usize) -> usize {
        self.edges[edge].1
    }

    /// `B[vertex, edge]`.
    pub fn incidence(&self, vertex: usize, edge: usize) -> i8 {
        let (tail, head) = self.edges[edge];
        if vertex == head {
            1
        } else if vertex == tail {
            -1
        } else {
            0
        }
    }

    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n, self.edges.len());
        for (j, &(tail, head)) in self.edges.iter().enumerate() {
            b[(tail, j)] = -1.0;
            b[(head, j)] = 1.0;
        }
        b
    }

    pub fn terminal_matrix(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.n, self.terminals.len());
        for (k, &(v, sign)) in self.terminals.iter().enumerate() {
            e[(v, k)] = f64::from(sign);
        }
        e
    }

    /// `B z` for an edge vector `z`.
    pub fn apply_incidence(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.edges.len());
        let mut out = vec![0.0; self.n];
        for (&(tail, head), &zj) in self.edges.iter().zip(z) {
            out[tail] -= zj;
            out[head] += zj;
        }
        out
    }

    /// `Bᵀ y` for a vertex vector `y`: head value minus tail value per edge.
    pub fn apply_incidence_transpose(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.n);
        self.edges
            .iter()
            .map(|&(tail, head)| y[head] - y[tail])
            .collect()
    }

    /// `E d` for a terminal vector `d`.
    pub fn apply_terminal(&self, d: &[f64]) -> Vec<f64> {
        debug_assert_eq!(d.len(), self.terminals.len());
        let mut out = vec![0.0; self.n];
        for (&(v, sign), &dk) in self.terminals.iter().zip(d) {
            out[v] += f64::from(sign) * dk;
        }
        out
    }

    /// Row `i` of `B` applied to `z`.
    pub fn vertex_balance(&self, vertex: usize, z: &[f64]) -> f64 {
        self.edges
            .iter()
            .zip(z)
            .map(|(&(tail, head), &zj)| {
                if vertex == head {
                    zj
                } else if vertex == tail {
                    -zj
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn in_degree(&self, vertex: usize) -> usize {
        self.edges.iter().filter(|e| e.1 == vertex).count()
    }

    pub fn out_degree(&self, vertex: usize) -> usize {
        self.edges.iter().filter(|e| e.0 == vertex).count()
    }

    /// The same graph with the listed edges reversed.
    pub fn with_reversed(&self, flipped: &[usize]) -> Self {
        let mut edges = self.edges.clone();
        for &j in flipped {
            let (t, h) = edges[j];
            edges[j] = (h, t);
        }
        Self {
            n: self.n,
            edges,
            terminals: self.terminals.clone(),
        }
    }

    pub fn incidence_rank(&self) -> usize {
        linalg::rank(&self.incidence_matrix(), RANK_TOL)
    }

    /// Weak components by union-find over an arbitrary edge subset.
    pub fn components_of(&self, edge_mask: &[bool]) -> usize {
        let mut uf = UnionFind::new(self.n);
        for (&(t, h), &on) in self.edges.iter().zip(edge_mask) {
            if on {
                uf.union(t, h);
            }
        }
        uf.count()
    }

    pub fn weak_components(&self) -> usize {
        self.components_of(&vec![true; self.edges.len()])
    }

    /// Component label per vertex for the undirected graph.
    pub fn component_labels(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.n);
        for &(t, h) in &self.edges {
            uf.union(t, h);
        }
        let mut labels = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut by_root = vec![usize::MAX; self.n];
        for (v, label) in labels.iter_mut().enumerate() {
            let r = uf.find(v);
            if by_root[r] == usize::MAX {
                by_root[r] = next;
                next += 1;
            }
            *label = by_root[r];
        }
        labels
    }

    fn reachable_from(&self, start: usize, reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &(t, h) in &self.edges {
                let (from, to) = if reverse { (h, t) } else { (t, h) };
                if from == v && !seen[to] {
                    seen[to] = true;
                    stack.push(to);
                }
            }
        }
        seen
    }
}

struct UnionFind {
    parent: Vec<usize>,
    sets: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            sets: n,
        }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    /// Returns false when `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        self.sets -= 1;
        true
    }

    fn count(&self) -> usize {
        self.sets
    }
}

/// Per-edge flow interval `[lower, upper]`; either side may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("upper bounds", lower.len(), upper.len())?;
        for (j, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::Config(format!(
                    "edge {}: lower bound {lo} exceeds upper bound {hi}",
                    j + 1
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(m: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; m],
            upper: vec![f64::INFINITY; m],
        }
    }

    /// `[-phi, phi]` per edge.
    pub fn symmetric(phi_plus: &[f64]) -> Self {
        Self {
            lower: phi_plus.iter().map(|p| -p).collect(),
            upper: phi_plus.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connectivity {
    pub weakly_connected: bool,
    pub strongly_connected: bool,
    pub component_count: usize,
}

pub fn connectivity(g: &NetworkGraph) -> Connectivity {
    let component_count = g.vertex_count() - g.incidence_rank();
    debug_assert_eq!(component_count, g.weak_components());
    let forward = g.reachable_from(0, false);
    let backward = g.reachable_from(0, true);
    Connectivity {
        weakly_connected: component_count == 1,
        strongly_connected: forward.iter().chain(&backward).all(|&r| r),
        component_count,
    }
}

/// In-degree equals out-degree at every vertex, i.e. `B 1 = 0`.
pub fn is_balanced(g: &NetworkGraph) -> bool {
    let by_matrix = g
        .apply_incidence(&vec![1.0; g.edge_count()])
        .iter()
        .all(|&r| r == 0.0);
    debug_assert_eq!(
        by_matrix,
        (0..g.vertex_count()).all(|v| g.in_degree(v) == g.out_degree(v))
    );
    by_matrix
}

/// No undirected cycles, i.e. `ker B = 0`.
pub fn is_acyclic(g: &NetworkGraph) -> bool {
    let by_rank = g.incidence_rank() == g.edge_count();
    debug_assert_eq!(by_rank, {
        let mut uf = UnionFind::new(g.vertex_count());
        g.edges().iter().all(|&(t, h)| uf.union(t, h))
    });
    by_rank
}

/// Outcome of the interior point check for constant flow bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorPoint {
    pub holds: bool,
    /// Circulation `z ∈ ker B` inside the box, absent when the box misses `ker B`.
    pub witness: Option<Vec<f64>>,
    /// Edges with `lower + margin < z < upper - margin`.
    pub active_edges: Vec<usize>,
    pub margin: f64,
    /// Finite stand-in used for infinite bounds inside the LP.
    pub cap: f64,
    pub diagnostic: Option<String>,
}

/// Options for [`interior_point_condition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteriorOptions {
    /// When true the interior subgraph must span every vertex; otherwise only
    /// vertices touched by interior edges are required to be connected.
    pub require_all_vertices: bool,
}

impl Default for InteriorOptions {
    fn default() -> Self {
        Self {
            require_all_vertices: true,
        }
    }
}

/// Searches for a circulation strictly inside the bounds whose interior edges
/// connect the graph.
///
/// For every edge two margin LPs are solved (room above the lower bound, room
/// below the upper bound). The average of all feasible optima is strictly
/// interior on every edge that admits interiority at all, so it is the best
/// witness for the connectivity test.
pub fn interior_point_condition(
    g: &NetworkGraph,
    bounds: &BoxBounds,
    opts: InteriorOptions,
) -> Result<InteriorPoint> {
    check_len("flow bounds", g.edge_count(), bounds.len())?;
    let m = g.edge_count();
    let polytope = FlowPolytope::new(g, bounds, &vec![0.0; g.vertex_count()]);
    let cap = polytope.cap();

    let mut witnesses: Vec<Vec<f64>> = Vec::with_capacity(2 * m);
    if m == 0 {
        witnesses.push(Vec::new());
    }
    // edges held on a bound by every circulation in the box
    let mut pinned = Vec::new();
    for j in 0..m {
        for side in [MarginSide::AboveLower, MarginSide::BelowUpper] {
            match polytope.max_margin(j, side) {
                Some(sol) => {
                    if sol.margin <= INTERIOR_TOL && pinned.last() != Some(&j) {
                        pinned.push(j);
                    }
                    witnesses.push(sol.point);
                }
                None => {
                    return Ok(InteriorPoint {
                        holds: false,
                        witness: None,
                        active_edges: Vec::new(),
                        margin: 0.0,
                        cap,
                        diagnostic: Some(
                            "no circulation lies inside the flow bounds (box ∩ ker B is empty)"
                                .into(),
                        ),
                    });
                }
            }
        }
    }

    let count = witnesses.len() as f64;
    let mut z = vec![0.0; m];
    for w in &witnesses {
        for (acc, v) in z.iter_mut().zip(w) {
            *acc += v / count;
        }
    }
    // Undo averaging drift so the witness stays inside the box.
    for ((v, &lo), &hi) in z.iter_mut().zip(&bounds.lower).zip(&bounds.upper) {
        *v = v.clamp(lo, hi);
    }

    let margin = INTERIOR_TOL / count;
    if residual_inf(g, &z) > 0.1 * INTERIOR_TOL {
        if let Some(p) = polish_witness(g, bounds, &z, margin) {
            z = p;
        }
    }
    let active_mask: Vec<bool> = z
        .iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(&v, (&lo, &hi))| lo + margin < v && v < hi - margin)
        .collect();
    let active_edges: Vec<usize> = (0..m).filter(|&j| active_mask[j]).collect();

    let holds = if opts.require_all_vertices {
        g.components_of(&active_mask) == 1
    } else {
        let mut touched = vec![false; g.vertex_count()];
        for &j in &active_edges {
            touched[g.tail(j)] = true;
            touched[g.head(j)] = true;
        }
        let isolated_untouched = touched.iter().filter(|&&t| !t).count();
        let touched_count = g.vertex_count() - isolated_untouched;
        touched_count == 0 || g.components_of(&active_mask) - isolated_untouched == 1
    };

    let diagnostic = if holds {
        None
    } else {
        Some(format!(
            "interior edges {:?} do not connect the vertex set (edges pinned to a bound: {:?})",
            active_edges.iter().map(|j| j + 1).collect::<Vec<_>>(),
            pinned.iter().map(|j| j + 1).collect::<Vec<_>>()
        ))
    };
    Ok(InteriorPoint {
        holds,
        witness: Some(z),
        active_edges,
        margin,
        cap,
        diagnostic,
    })
}

/// Least 1-norm circulation that keeps every interior edge of `z` interior.
///
/// Averaged LP optima can be as large as the cap on infinite bounds, where
/// rounding alone spoils `Bz = 0`; the re-solve keeps magnitudes at the
/// scale of the finite bounds.
fn polish_witness(g: &NetworkGraph, bounds: &BoxBounds, z: &[f64], margin: f64) -> Option<Vec<f64>> {
    let scale = bounds
        .lower
        .iter()
        .chain(&bounds.upper)
        .filter(|b| b.is_finite())
        .fold(1.0_f64, |m, b| m.max(b.abs()));
    let mut lower = bounds.lower.clone();
    let mut upper = bounds.upper.clone();
    for (j, &v) in z.iter().enumerate() {
        let slack = (v - bounds.lower[j]).min(bounds.upper[j] - v);
        if slack > margin {
            let delta = margin + (0.5 * (slack - margin)).min(scale);
            lower[j] += delta;
            upper[j] -= delta;
        }
    }
    let tight = BoxBounds { lower, upper };
    let p = FlowPolytope::new(g, &tight, &vec![0.0; g.vertex_count()]).min_l1()?;
    let p: Vec<f64> = p
        .iter()
        .zip(tight.lower.iter().zip(&tight.upper))
        .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
        .collect();
    let p = cancel_residual(g, &tight, p);
    (residual_inf(g, &p) <= residual_inf(g, z)).then_some(p)
}

/// Removes `Bz` by the least-norm correction on edges with room inside `tight`.
fn cancel_residual(g: &NetworkGraph, tight: &BoxBounds, z: Vec<f64>) -> Vec<f64> {
    let free: Vec<usize> = (0..z.len())
        .filter(|&j| tight.lower[j] < z[j] && z[j] < tight.upper[j])
        .collect();
    if free.is_empty() {
        return z;
    }
    let b = g.incidence_matrix();
    let bf = DMatrix::from_fn(g.vertex_count(), free.len(), |i, k| b[(i, free[k])]);
    let r = DVector::from_vec(g.apply_incidence(&z));
    let c = linalg::lstsq(&bf, &r, 1e-12);
    let mut out = z.clone();
    for (k, &j) in free.iter().enumerate() {
        out[j] -= c[k];
        if !(tight.lower[j] <= out[j] && out[j] <= tight.upper[j]) {
            return z;
        }
    }
    if residual_inf(g, &out) < residual_inf(g, &z) {
        out
    } else {
        z
    }
}

fn residual_inf(g: &NetworkGraph, z: &[f64]) -> f64 {
    g.apply_incidence(z).iter().fold(0.0_f64, |m, r| m.max(r.abs()))
}
