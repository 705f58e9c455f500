use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics;
use crate::condenser::{SynAdjacency, SyntheticGraph};
use crate::error::{Error, Result};
use crate::graph::{self, Graph};
use crate::linalg;
use crate::optim::Optimizer;
use crate::pipeline::EvalSettings;
use crate::relay::{self, relu_mask, MaskRows, RelayModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Node classification on the dataset that was condensed.
    SingleTask,
    /// Link prediction with an encoder trained for node classification.
    CrossTask,
    /// Linear probe on another dataset.
    CrossDataset,
    /// Link prediction on another dataset.
    CrossBoth,
}

impl Protocol {
    pub fn id(&self) -> &'static str {
        match self {
            Protocol::SingleTask => "single-task",
            Protocol::CrossTask => "cross-task",
            Protocol::CrossDataset => "cross-dataset",
            Protocol::CrossBoth => "cross-both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
    pub seeds: Vec<u64>,
    pub bundle_hash: String,
    /// Whether a linear input adapter was trained (feature dimensions differed).
    pub adapter_used: bool,
}

impl EvalReport {
    fn new(protocol: Protocol, metric: &str, seeds: &[u64], values: Vec<f64>, hash: &str, adapter: bool) -> Self {
        let (mean, std) = metrics::mean_std(&values);
        Self {
            protocol,
            metric: metric.to_string(),
            mean,
            std,
            per_seed: values,
            seeds: seeds.to_vec(),
            bundle_hash: hash.to_string(),
            adapter_used: adapter,
        }
    }

    pub const TSV_HEADER: &'static str = "protocol\tmetric\tmean\tstd\tseeds\tbundle_hash";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{:.6}\t{:.6}\t{}\t{}",
            self.protocol.id(),
            self.metric,
            self.mean,
            self.std,
            self.per_seed.len(),
            self.bundle_hash
        )
    }
}

/// SHA-256 over the condensed graph as it is stored on disk (f32 features,
/// f32 logits or fixed adjacency, labels), hex encoded. A reloaded bundle
/// hashes the same as the in-memory graph it was saved from.
pub fn bundle_hash(syn: &SyntheticGraph) -> String {
    let mut h = Sha256::new();
    h.update((syn.num_nodes() as u64).to_le_bytes());
    h.update((syn.feature_dim() as u64).to_le_bytes());
    h.update((syn.num_classes as u64).to_le_bytes());
    for v in syn.xs.iter() {
        h.update((*v as f32).to_le_bytes());
    }
    let (tag, structure) = match &syn.adj {
        SynAdjacency::Learned(l) => (b"logits", l),
        SynAdjacency::Fixed(a) => (b"matrix", a),
    };
    h.update(tag);
    for v in structure.iter() {
        h.update((*v as f32).to_le_bytes());
    }
    for &y in &syn.ys {
        h.update((y as u64).to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn training_adjacency(syn: &SyntheticGraph, settings: &EvalSettings) -> Array2<f64> {
    if settings.weighted {
        syn.adjacency()
    } else {
        syn.thresholded_adjacency(settings.threshold)
    }
}

/// A fresh relay trained on every node of the condensed graph.
pub fn train_on_synthetic(syn: &SyntheticGraph, settings: &EvalSettings, seed: u64) -> Result<RelayModel> {
    let mut model = relay::init_model(syn.feature_dim(), settings.hidden, syn.num_classes, seed)?;
    let adj = training_adjacency(syn, settings);
    let prop = graph::gcn_normalize(adj.view())?;
    let q = prop.dot(&syn.xs);
    let mask: Vec<usize> = (0..syn.num_nodes()).collect();
    let mut opt = Optimizer::new(settings.optimizer, settings.lr);
    for _ in 0..settings.steps {
        let (_, g) = model.loss_and_grad_propagated(prop.view(), q.view(), &syn.ys, &mask)?;
        opt.step(&mut [&mut model.w1, &mut model.w2], &[&g.gw1, &g.gw2]);
    }
    if !model.is_finite() {
        return Err(Error::Numeric("evaluation model diverged".into()));
    }
    Ok(model)
}

fn require_seeds(settings: &EvalSettings) -> Result<()> {
    if settings.seeds.is_empty() {
        return Err(Error::Argument("evaluation needs at least one seed".into()));
    }
    Ok(())
}

/// Test accuracy on `g` of relays trained on the condensed graph.
pub fn eval_node_classification(
    syn: &SyntheticGraph,
    g: &Graph,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    require_seeds(settings)?;
    if syn.feature_dim() != g.feature_dim() {
        return Err(Error::Protocol(format!(
            "condensed features have {} dimensions but the graph has {}; use the transfer protocol, which trains an input adapter",
            syn.feature_dim(),
            g.feature_dim()
        )));
    }
    if syn.num_classes != g.num_classes() {
        return Err(Error::Protocol("condensed and original class counts differ".into()));
    }
    let test = &g.splits().test;
    if test.is_empty() {
        return Err(Error::Protocol("graph has an empty test split".into()));
    }
    let prop = g.gcn_normalize()?;
    let q = linalg::matmul(prop.view(), g.features().view());
    let truth: Vec<usize> = test.iter().map(|&i| g.labels()[i]).collect();
    let p_test = prop.select(Axis(0), test);
    let mut values = Vec::with_capacity(settings.seeds.len());
    for &seed in &settings.seeds {
        let model = train_on_synthetic(syn, settings, seed)?;
        let hidden = model.embed_propagated(q.view());
        let logits = p_test.dot(&hidden).dot(&model.w2);
        let pred = relay::argmax_rows(logits.view());
        values.push(metrics::accuracy(&pred, &truth));
    }
    Ok(EvalReport::new(Protocol::SingleTask, "accuracy", &settings.seeds, values, &bundle_hash(syn), false))
}

/// Held-out positive edges, an equal number of sampled non-edges, and the
/// adjacency with the held-out edges removed.
#[derive(Debug, Clone)]
pub struct EdgeSplit {
    pub train_adjacency: Array2<f64>,
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

pub fn split_edges(g: &Graph, fraction: f64, seed: u64) -> Result<EdgeSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("test edge fraction must be in (0, 1), got {fraction}")));
    }
    let n = g.num_nodes();
    let mut edges: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    let k = ((edges.len() as f64) * fraction).round() as usize;
    if k == 0 {
        return Err(Error::Protocol("graph has too few edges for a link split".into()));
    }
    let max_pairs = n * (n - 1) / 2;
    if max_pairs < edges.len() + k {
        return Err(Error::Protocol("graph is too dense to sample negative pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);
    let mut positives = edges[..k].to_vec();
    positives.sort_unstable();
    let existing: HashSet<(usize, usize)> = g.edges().iter().map(|e| (e.src, e.dst)).collect();
    let mut chosen = HashSet::new();
    let mut negatives = Vec::with_capacity(k);
    while negatives.len() < k {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if existing.contains(&pair) || !chosen.insert(pair) {
            continue;
        }
        negatives.push(pair);
    }
    let mut train_adjacency = g.dense_adjacency();
    for &(a, b) in &positives {
        train_adjacency[[a, b]] = 0.0;
        train_adjacency[[b, a]] = 0.0;
    }
    Ok(EdgeSplit {
        train_adjacency,
        positives,
        negatives,
    })
}

/// `sigmoid(⟨ẑ_a, ẑ_b⟩)` with `ẑ` the column-centered, row-normalized embeddings.
pub fn link_scores(embeddings: ArrayView2<f64>, pairs: &[(usize, usize)]) -> Vec<f64> {
    let mean = embeddings.mean_axis(Axis(0)).expect("non-empty embeddings");
    let mut z = &embeddings - &mean;
    for mut row in z.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    pairs
        .iter()
        .map(|&(a, b)| {
            let dot = z.row(a).dot(&z.row(b));
            1.0 / (1.0 + (-dot).exp())
        })
        .collect()
}

fn link_metrics(embeddings: ArrayView2<f64>, split: &EdgeSplit) -> Result<[f64; 3]> {
    let mut pairs = split.positives.clone();
    pairs.extend_from_slice(&split.negatives);
    let labels: Vec<bool> = (0..pairs.len()).map(|i| i < split.positives.len()).collect();
    let scores = link_scores(embeddings, &pairs);
    Ok([
        metrics::threshold_accuracy(&scores, &labels, 0.5),
        metrics::auc(&scores, &labels)?,
        metrics::average_precision(&scores, &labels)?,
    ])
}

fn link_reports(protocol: Protocol, seeds: &[u64], rows: Vec<[f64; 3]>, hash: &str, adapter: bool) -> Vec<EvalReport> {
    ["accuracy", "auc", "ap"]
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let values = rows.iter().map(|r| r[k]).collect();
            EvalReport::new(protocol, name, seeds, values, hash, adapter)
        })
        .collect()
}

/// Link prediction with relays trained on the condensed graph for node
/// classification. Reports accuracy at 0.5, AUC and average precision.
pub fn eval_link_prediction(
    syn: &SyntheticGraph,
    g: &Graph,
    settings: &EvalSettings,
) -> Result<Vec<EvalReport>> {
    require_seeds(settings)?;
    if syn.feature_dim() != g.feature_dim() {
        return Err(Error::Protocol(format!(
            "condensed features have {} dimensions but the graph has {}; use the transfer protocol, which trains an input adapter",
            syn.feature_dim(),
            g.feature_dim()
        )));
    }
    let mut rows = Vec::with_capacity(settings.seeds.len());
    for &seed in &settings.seeds {
        let split = split_edges(g, settings.link_test_fraction, seed)?;
        let model = train_on_synthetic(syn, settings, seed)?;
        let prop = graph::gcn_normalize(split.train_adjacency.view())?;
        let hidden = model.embed_propagated(linalg::matmul(prop.view(), g.features().view()).view());
        rows.push(link_metrics(hidden.view(), &split)?);
    }
    Ok(link_reports(Protocol::CrossTask, &settings.seeds, rows, &bundle_hash(syn), false))
}

/// Frozen first layer, optional input adapter and a linear probe on
/// `P · relu(P · X · adapter · W1)`, trained on the target train split.
struct Probe {
    adapter: Option<Array2<f64>>,
    probe: Array2<f64>,
}

impl Probe {
    fn fit(
        prop: ArrayView2<f64>,
        q: ArrayView2<f64>,
        w1: &Array2<f64>,
        g: &Graph,
        settings: &EvalSettings,
        seed: u64,
    ) -> Result<Probe> {
        let train = &g.splits().train;
        if train.is_empty() {
            return Err(Error::Protocol("target graph has an empty train split".into()));
        }
        let (d_t, d_s, h, c) = (q.ncols(), w1.nrows(), w1.ncols(), g.num_classes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
        let mut adapter = (d_t != d_s).then(|| {
            let b = 1.0 / (d_t as f64).sqrt();
            Array2::from_shape_fn((d_t, d_s), |_| rng.random_range(-b..b))
        });
        let b = 1.0 / (h as f64).sqrt();
        let mut probe = Array2::from_shape_fn((h, c), |_| rng.random_range(-b..b));

        let rows = MaskRows::new(train, g.labels(), g.num_nodes(), c)?;
        let p_train = prop.select(Axis(0), &rows.rows);
        // Only nodes adjacent (through P) to the train rows influence the loss.
        let support: Vec<usize> = (0..prop.ncols())
            .filter(|&j| p_train.column(j).iter().any(|&v| v != 0.0))
            .collect();
        let p_ts = p_train.select(Axis(1), &support);
        let q_s = q.select(Axis(0), &support);

        let mut opt_probe = Optimizer::new(settings.optimizer, settings.lr);
        let mut opt_adapter = Optimizer::new(settings.optimizer, settings.lr);
        for _ in 0..settings.steps {
            let w = match &adapter {
                Some(a) => a.dot(w1),
                None => w1.clone(),
            };
            let u = q_s.dot(&w);
            let hidden = u.mapv(|v| v.max(0.0));
            let r = p_ts.dot(&hidden);
            let (_, e) = rows.cross_entropy(r.dot(&probe).view());
            let g_probe = r.t().dot(&e);
            if let Some(a) = adapter.as_mut() {
                let gh = p_ts.t().dot(&e.dot(&probe.t()));
                let gu = relu_mask(gh, u.view());
                let g_adapter = q_s.t().dot(&gu).dot(&w1.t());
                opt_adapter.step(&mut [a], &[&g_adapter]);
            }
            opt_probe.step(&mut [&mut probe], &[&g_probe]);
        }
        Ok(Probe { adapter, probe })
    }

    fn hidden(&self, q: ArrayView2<f64>, w1: &Array2<f64>) -> Array2<f64> {
        let w = match &self.adapter {
            Some(a) => a.dot(w1),
            None => w1.clone(),
        };
        q.dot(&w).mapv(|v| v.max(0.0))
    }
}

/// Transfer of an encoder trained on `syn_src` to `target`: node
/// classification through a linear probe, or link prediction when `link`.
pub fn eval_transfer(
    syn_src: &SyntheticGraph,
    target: &Graph,
    settings: &EvalSettings,
    link: bool,
) -> Result<Vec<EvalReport>> {
    require_seeds(settings)?;
    let adapter_used = syn_src.feature_dim() != target.feature_dim();
    let hash = bundle_hash(syn_src);
    let mut rows = Vec::with_capacity(settings.seeds.len());
    let mut accs = Vec::with_capacity(settings.seeds.len());
    let full_prop = target.gcn_normalize()?;
    let full_q = linalg::matmul(full_prop.view(), target.features().view());
    for &seed in &settings.seeds {
        let model = train_on_synthetic(syn_src, settings, seed)?;
        if link {
            let split = split_edges(target, settings.link_test_fraction, seed)?;
            let prop = graph::gcn_normalize(split.train_adjacency.view())?;
            let q = linalg::matmul(prop.view(), target.features().view());
            let hidden = if adapter_used {
                Probe::fit(prop.view(), q.view(), &model.w1, target, settings, seed)?.hidden(q.view(), &model.w1)
            } else {
                model.embed_propagated(q.view())
            };
            rows.push(link_metrics(hidden.view(), &split)?);
        } else {
            let test = &target.splits().test;
            if test.is_empty() {
                return Err(Error::Protocol("target graph has an empty test split".into()));
            }
            let probe = Probe::fit(full_prop.view(), full_q.view(), &model.w1, target, settings, seed)?;
            let hidden = probe.hidden(full_q.view(), &model.w1);
            let logits = full_prop.select(Axis(0), test).dot(&hidden).dot(&probe.probe);
            let pred = relay::argmax_rows(logits.view());
            let truth: Vec<usize> = test.iter().map(|&i| target.labels()[i]).collect();
            accs.push(metrics::accuracy(&pred, &truth));
        }
    }
    if link {
        Ok(link_reports(Protocol::CrossBoth, &settings.seeds, rows, &hash, adapter_used))
    } else {
        Ok(vec![EvalReport::new(
            Protocol::CrossDataset,
            "accuracy",
            &settings.seeds,
            accs,
            &hash,
            adapter_used,
        )])
    }
}
