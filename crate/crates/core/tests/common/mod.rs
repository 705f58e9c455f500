#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgcc::dataio::{gen_sbm, SbmSpec};
use tgcc::{Edge, Graph, Splits};

/// Symmetric 0/1 Erdős–Rényi adjacency with zero diagonal.
pub fn er_adjacency(n: usize, p: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    a
}

/// ER adjacency whose edges carry weights in (0, 1].
pub fn weighted_adjacency(n: usize, p: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut a = er_adjacency(n, p, seed);
    for i in 0..n {
        for j in (i + 1)..n {
            if a[[i, j]] > 0.0 {
                let w = rng.random_range(0.05..=1.0);
                a[[i, j]] = w;
                a[[j, i]] = w;
            }
        }
    }
    a
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Labelled graph over an adjacency: two classes, features carry a class
/// signal, every node in train.
pub fn labelled_graph(adjacency: &Array2<f64>, d: usize, seed: u64) -> Graph {
    let n = adjacency.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, d), |(i, k)| {
        rng.random_range(-1.0..1.0) + if k % 2 == labels[i] { 0.8 } else { 0.0 }
    });
    let splits = Splits {
        train: (0..n).collect(),
        ..Default::default()
    };
    Graph::from_dense(x, labels, 2, adjacency.view(), splits).unwrap()
}

/// Small SBM with a 60/20/20 split.
pub fn sbm(blocks: &[usize], p_in: f64, p_out: f64, dim: usize, seed: u64) -> Graph {
    gen_sbm(&SbmSpec::new(blocks.to_vec(), p_in, p_out, dim, seed))
        .unwrap()
        .graph
}

pub fn path_graph(n: usize) -> Graph {
    let edges = (1..n)
        .map(|i| Edge {
            src: i - 1,
            dst: i,
            weight: 1.0,
        })
        .collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, k)| (i * 2 + k) as f64);
    let splits = Splits {
        train: (0..n).collect(),
        ..Default::default()
    };
    Graph::new(x, labels, 2, edges, splits).unwrap()
}

/// Directory holding the vendored raw datasets.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}
