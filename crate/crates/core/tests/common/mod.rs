#![allow(dead_code)]

use ihnn::hypergraph::{Hypergraph, NormalizedOperators, OpnormConfig};
use ihnn::linalg::{project_rows_l1, DenseMatrix};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random hypergraph where every node lies in at least one hyperedge.
pub fn random_hypergraph(rng: &mut ChaCha8Rng, max_nodes: usize, max_edges: usize) -> Hypergraph {
    let n = rng.random_range(2..=max_nodes);
    let e = rng.random_range(1..=max_edges);
    let max_size = n.min(8);
    let mut edges: Vec<Vec<usize>> = (0..e)
        .map(|_| {
            let size = rng.random_range(1..=max_size);
            sample(rng, n, size).into_vec()
        })
        .collect();
    let mut covered = vec![false; n];
    edges.iter().flatten().for_each(|&v| covered[v] = true);
    for (v, _) in covered.iter().enumerate().filter(|(_, c)| !**c) {
        let k = rng.random_range(0..edges.len());
        edges[k].push(v);
    }
    Hypergraph::new(n, edges).unwrap()
}

pub fn operators(hg: &Hypergraph, kappa: f64) -> NormalizedOperators {
    NormalizedOperators::from_hypergraph(hg, kappa, &OpnormConfig::default()).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

/// Random `W` pushed onto the boundary of the feasible set.
pub fn feasible_w(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> DenseMatrix {
    let mut w = uniform(rng, d, d, 4.0 * radius);
    project_rows_l1(&mut w, radius).unwrap();
    w
}
