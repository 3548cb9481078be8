#![allow(dead_code)]

use fedcog_core::graph::GlobalGraph;
use fedcog_core::partition::Partition;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Erdős–Rényi graph with uniform features in [-1, 1].
pub fn random_graph(n: usize, p: f64, dim: usize, seed: u64) -> GlobalGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.0..1.0));
    let labels = (0..n).map(|u| u % 2).collect();
    GlobalGraph::new(n, edges, x, labels, 2).unwrap()
}

/// Uniformly random owner per node, every party non-empty.
pub fn random_partition(n: usize, m: usize, seed: u64) -> Partition {
    assert!(m <= n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut owner: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    // pin the first m nodes of a random order to distinct parties
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for (party, &u) in order.iter().take(m).enumerate() {
        owner[u] = party;
    }
    Partition::new(owner, m).unwrap()
}

/// Dense `D̃^{e-1} Ã D̃^{-e}` built entry by entry with `powf`.
pub fn dense_operator(g: &GlobalGraph, e: f64) -> Array2<f64> {
    let n = g.num_nodes();
    let deg: Vec<f64> = (0..n).map(|u| 1.0 + g.degree(u) as f64).collect();
    let mut s = Array2::zeros((n, n));
    for u in 0..n {
        for v in 0..n {
            if u == v || g.has_edge(u, v) {
                s[[u, v]] = deg[u].powf(e - 1.0) * deg[v].powf(-e);
            }
        }
    }
    s
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
