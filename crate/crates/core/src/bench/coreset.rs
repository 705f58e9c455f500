use ndarray::{Array1, ArrayView2, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::condenser::{SynAdjacency, SyntheticGraph};
use crate::error::{Error, Result};
use crate::graph::{self, Graph};

/// Per-class quotas over the training split, checked against `m`.
fn class_quotas(g: &Graph, m: usize) -> Result<(Vec<Vec<usize>>, Vec<usize>)> {
    let c = g.num_classes();
    if m < c {
        return Err(Error::Argument(format!("coreset size {m} is below the class count {c}")));
    }
    let train = g.splits().train.len();
    if m > train {
        return Err(Error::Argument(format!("coreset size {m} exceeds the {train} training nodes")));
    }
    let by_class = g.train_nodes_by_class();
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Argument(format!("class {empty} has no training node")));
    }
    let hist: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let mut quota = graph::proportional_allocation(&hist, m)?;
    // A class can never give more nodes than it has; move the excess elsewhere.
    loop {
        let Some(over) = (0..c).find(|&k| quota[k] > hist[k]) else { break };
        let spare = quota[over] - hist[over];
        quota[over] = hist[over];
        let mut left = spare;
        for k in 0..c {
            let room = hist[k] - quota[k].min(hist[k]);
            let take = room.min(left);
            quota[k] += take;
            left -= take;
        }
    }
    Ok((by_class, quota))
}

fn assemble(g: &Graph, nodes: Vec<usize>) -> Result<SyntheticGraph> {
    let adj = g.dense_adjacency();
    let k = nodes.len();
    let mut sub = ndarray::Array2::zeros((k, k));
    for (a, &i) in nodes.iter().enumerate() {
        for (b, &j) in nodes.iter().enumerate() {
            if adj[[i, j]] > 0.0 {
                sub[[a, b]] = 1.0;
            }
        }
    }
    let xs = g.features().select(Axis(0), &nodes);
    let ys = nodes.iter().map(|&i| g.labels()[i]).collect();
    SyntheticGraph::new(xs, SynAdjacency::Fixed(sub), ys, g.num_classes())
}

/// Class-stratified uniform sample of training nodes with their induced 0/1 subgraph.
pub fn coreset_random(g: &Graph, m: usize, seed: u64) -> Result<SyntheticGraph> {
    let (by_class, quota) = class_quotas(g, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(m);
    for (members, &q) in by_class.iter().zip(&quota) {
        nodes.extend(members.choose_multiple(&mut rng, q).copied());
    }
    assemble(g, nodes)
}

/// Greedy mean matching: repeatedly add the point that brings the running
/// selection mean closest to the mean of all points. Ties go to the lowest index.
pub fn herding_select(points: ArrayView2<f64>, k: usize) -> Vec<usize> {
    let n = points.nrows();
    let k = k.min(n);
    let target: Array1<f64> = points.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(points.ncols()));
    let mut chosen = Vec::with_capacity(k);
    let mut used = vec![false; n];
    let mut sum = Array1::<f64>::zeros(points.ncols());
    for step in 0..k {
        let mut best = None;
        let mut best_dist = f64::INFINITY;
        for i in 0..n {
            if used[i] {
                continue;
            }
            let mean = (&sum + &points.row(i)) / (step + 1) as f64;
            let dist = (&mean - &target).mapv(|v| v * v).sum();
            if dist < best_dist {
                best_dist = dist;
                best = Some(i);
            }
        }
        let i = best.expect("k <= n");
        used[i] = true;
        sum += &points.row(i);
        chosen.push(i);
    }
    chosen
}

/// Farthest-point traversal from `start`. Ties go to the lowest index.
pub fn kcenter_select(points: ArrayView2<f64>, start: usize, k: usize) -> Vec<usize> {
    let n = points.nrows();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let dist2 = |a: usize, b: usize| {
        points
            .row(a)
            .iter()
            .zip(points.row(b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    };
    let mut chosen = vec![start];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist2(i, start)).collect();
    while chosen.len() < k {
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            if nearest[i] > best_d {
                best_d = nearest[i];
                best = Some(i);
            }
        }
        let next = best.expect("k <= n");
        chosen.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist2(i, next));
        }
    }
    chosen
}

/// Per-class herding on raw features.
pub fn coreset_herding(g: &Graph, m: usize) -> Result<SyntheticGraph> {
    let (by_class, quota) = class_quotas(g, m)?;
    let mut nodes = Vec::with_capacity(m);
    for (members, &q) in by_class.iter().zip(&quota) {
        let pts = g.features().select(Axis(0), members);
        nodes.extend(herding_select(pts.view(), q).into_iter().map(|i| members[i]));
    }
    assemble(g, nodes)
}

/// Per-class K-Center on raw features from a seeded random start.
pub fn coreset_kcenter(g: &Graph, m: usize, seed: u64) -> Result<SyntheticGraph> {
    let (by_class, quota) = class_quotas(g, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::with_capacity(m);
    for (members, &q) in by_class.iter().zip(&quota) {
        let pts = g.features().select(Axis(0), members);
        let start = rng.random_range(0..members.len());
        nodes.extend(kcenter_select(pts.view(), start, q).into_iter().map(|i| members[i]));
    }
    assemble(g, nodes)
}
