//! Stochastic block model fixtures with Gaussian class-mean features.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{GraphBundle, Provenance};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, Splits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub dim: usize,
    /// Distance scale of the class means; noise has unit variance.
    pub mean_scale: f64,
    pub seed: u64,
}

impl SbmSpec {
    pub fn new(blocks: Vec<usize>, p_in: f64, p_out: f64, dim: usize, seed: u64) -> Self {
        Self {
            blocks,
            p_in,
            p_out,
            dim,
            mean_scale: 1.0,
            seed,
        }
    }
}

/// Samples an SBM graph. Features are `mean[block] + N(0, I)`, rounded to f32
/// so the in-memory graph equals its saved bundle. Each block is split
/// 60/20/20 into train/val/test.
pub fn gen_sbm(spec: &SbmSpec) -> Result<GraphBundle> {
    for (name, p) in [("p_in", spec.p_in), ("p_out", spec.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Argument(format!("{name} must lie in [0, 1], got {p}")));
        }
    }
    if spec.blocks.is_empty() || spec.blocks.contains(&0) {
        return Err(Error::Argument("every block needs at least one node".into()));
    }
    if spec.dim == 0 {
        return Err(Error::Argument("feature dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = spec
        .blocks
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = labels.len();
    let c = spec.blocks.len();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push(Edge { src: i, dst: j, weight: 1.0 });
            }
        }
    }

    let means = Array2::from_shape_fn((c, spec.dim), |_| {
        spec.mean_scale * rng.sample::<f64, _>(StandardNormal)
    });
    let features = Array2::from_shape_fn((n, spec.dim), |(i, k)| {
        let v = means[[labels[i], k]] + rng.sample::<f64, _>(StandardNormal);
        v as f32 as f64
    });

    let mut splits = Splits::default();
    let mut start = 0;
    for &size in &spec.blocks {
        let mut members: Vec<usize> = (start..start + size).collect();
        members.shuffle(&mut rng);
        let n_train = ((0.6 * size as f64).round() as usize).max(1).min(size);
        let n_val = ((0.2 * size as f64).round() as usize).min(size - n_train);
        splits.train.extend_from_slice(&members[..n_train]);
        splits.val.extend_from_slice(&members[n_train..n_train + n_val]);
        splits.test.extend_from_slice(&members[n_train + n_val..]);
        start += size;
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();

    let graph = Graph::new(features, labels, c, edges, splits)?;
    let mut prov = Provenance::new();
    prov.insert("source_format".into(), Value::from("sbm"));
    prov.insert("generator".into(), serde_json::to_value(spec)?);
    Ok(GraphBundle { graph, provenance: prov })
}
