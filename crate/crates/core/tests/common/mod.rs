#![allow(dead_code)]

use std::path::PathBuf;

use flownet::{NetworkGraph, VertexHamiltonian};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

/// v1 feeds v2, which feeds v3 and v4.
pub fn fork() -> NetworkGraph {
    NetworkGraph::new(4, &[(0, 1), (1, 2), (1, 3)], &[]).unwrap()
}

/// A three-vertex circle with a back edge between v2 and v3.
pub fn circle() -> NetworkGraph {
    NetworkGraph::new(3, &[(0, 1), (1, 2), (2, 1), (2, 0)], &[]).unwrap()
}

/// Five reservoirs.
pub fn reservoirs() -> NetworkGraph {
    NetworkGraph::new(
        5,
        &[(0, 1), (1, 2), (2, 0), (0, 3), (3, 2), (0, 4), (4, 1)],
        &[],
    )
    .unwrap()
}

/// Random spanning tree with random orientations plus `extra` random edges.
pub fn random_edges<R: Rng>(rng: &mut R, n: usize, extra: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.gen_range(0..v);
        edges.push(if rng.gen_bool(0.5) { (u, v) } else { (v, u) });
    }
    for _ in 0..extra {
        let a = rng.gen_range(0..n);
        let mut b = rng.gen_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        edges.push((a, b));
    }
    edges
}

pub fn random_connected<R: Rng>(rng: &mut R, n: usize, extra: usize) -> NetworkGraph {
    NetworkGraph::new(n, &random_edges(rng, n, extra), &[]).unwrap()
}

/// Quadratic storage with weights in [0.5, 2] and minimizers in [-1, 1].
pub fn random_quadratic<R: Rng>(rng: &mut R, n: usize) -> VertexHamiltonian {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    VertexHamiltonian::quadratic(&w, &g).unwrap()
}

/// A nonzero value in ±[0.2, 3].
pub fn random_flow<R: Rng>(rng: &mut R) -> f64 {
    let v = rng.gen_range(0.2..3.0);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
