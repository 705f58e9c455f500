//! Synthetic graph parameterization and gradient matching.
//!
//! For every class the relay gradient on the synthetic graph is matched, by
//! per-column cosine distance, against the relay gradient on the original graph
//! and on the intervened graph. The derivative of that distance with respect to
//! the synthetic features and adjacency logits is obtained by differentiating
//! the relay's backward pass by hand.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{self, Graph, Splits};
use crate::linalg;
use crate::optim::{Optimizer, OptimizerKind};
use crate::relay::{relu_mask, GradientSet, MaskRows, RelayModel};

/// Initial value of every adjacency logit (sigmoid(−3) ≈ 0.047).
pub const LOGIT_INIT: f64 = -3.0;
pub const LOGIT_NOISE: f64 = 0.01;
/// Threshold used when a learned adjacency is exported as an unweighted graph.
pub const EXPORT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum SynAdjacency {
    /// Free symmetric logits; `A_s = sigmoid(logits)` off the diagonal.
    Learned(Array2<f64>),
    /// A fixed adjacency, as produced by the coreset baselines.
    Fixed(Array2<f64>),
}

/// Condensed dataset `(X_s, A_s, Y_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGraph {
    pub xs: Array2<f64>,
    pub adj: SynAdjacency,
    pub ys: Vec<usize>,
    pub num_classes: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl SyntheticGraph {
    pub fn new(xs: Array2<f64>, adj: SynAdjacency, ys: Vec<usize>, num_classes: usize) -> Result<Self> {
        let m = xs.nrows();
        if ys.len() != m {
            return Err(Error::Structural(format!("{} labels for {m} synthetic nodes", ys.len())));
        }
        if ys.iter().any(|&y| y >= num_classes) {
            return Err(Error::Structural("synthetic label outside class range".into()));
        }
        let mat = match &adj {
            SynAdjacency::Learned(l) | SynAdjacency::Fixed(l) => l,
        };
        linalg::ensure_symmetric(mat.view(), 1e-9, "synthetic adjacency")?;
        if mat.nrows() != m {
            return Err(Error::Structural(format!(
                "synthetic adjacency is {}x{}, expected {m}x{m}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if let SynAdjacency::Fixed(a) = &adj {
            if a.iter().any(|&v| !(0.0..=1.0).contains(&v)) || a.diag().iter().any(|&v| v != 0.0) {
                return Err(Error::Structural(
                    "fixed synthetic adjacency must lie in [0, 1] with a zero diagonal".into(),
                ));
            }
        }
        if xs.iter().chain(mat.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("synthetic graph has non-finite entries".into()));
        }
        Ok(Self {
            xs,
            adj,
            ys,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.xs.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.xs.ncols()
    }

    pub fn logits(&self) -> Option<&Array2<f64>> {
        match &self.adj {
            SynAdjacency::Learned(l) => Some(l),
            SynAdjacency::Fixed(_) => None,
        }
    }

    /// Dense `A_s` (sigmoid of the logits with a zero diagonal, or the fixed matrix).
    pub fn adjacency(&self) -> Array2<f64> {
        match &self.adj {
            SynAdjacency::Learned(l) => {
                let mut a = l.mapv(sigmoid);
                a.diag_mut().fill(0.0);
                a
            }
            SynAdjacency::Fixed(a) => a.clone(),
        }
    }

    /// `A_s` with entries below `threshold` dropped and the rest set to one.
    pub fn thresholded_adjacency(&self, threshold: f64) -> Array2<f64> {
        self.adjacency().mapv(|v| if v >= threshold { 1.0 } else { 0.0 })
    }

    pub fn propagation(&self) -> Array2<f64> {
        graph::gcn_normalize_unchecked(self.adjacency().view(), self.num_nodes())
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.ys {
            h[y] += 1;
        }
        h
    }

    pub fn class_masks(&self) -> Vec<Vec<usize>> {
        let mut masks = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.ys.iter().enumerate() {
            masks[y].push(i);
        }
        masks
    }

    /// The synthetic graph as a [`Graph`] whose nodes are all in the train split.
    pub fn to_graph(&self, adjacency: ArrayView2<f64>) -> Result<Graph> {
        let m = self.num_nodes();
        let splits = Splits {
            train: (0..m).collect(),
            ..Default::default()
        };
        Graph::from_dense(self.xs.clone(), self.ys.clone(), self.num_classes, adjacency, splits)
    }

    /// Relabels synthetic node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<SyntheticGraph> {
        let m = self.num_nodes();
        let mut inv = vec![usize::MAX; m];
        for (i, &p) in perm.iter().enumerate() {
            if p >= m || inv[p] != usize::MAX {
                return Err(Error::Argument("not a permutation".into()));
            }
            inv[p] = i;
        }
        let xs = self.xs.select(Axis(0), &inv);
        let ys = inv.iter().map(|&i| self.ys[i]).collect();
        let permute = |a: &Array2<f64>| Array2::from_shape_fn((m, m), |(i, j)| a[[inv[i], inv[j]]]);
        let adj = match &self.adj {
            SynAdjacency::Learned(l) => SynAdjacency::Learned(permute(l)),
            SynAdjacency::Fixed(a) => SynAdjacency::Fixed(permute(a)),
        };
        SyntheticGraph::new(xs, adj, ys, self.num_classes)
    }
}

/// Condensed size `max(C, round(r·N))`.
pub fn condensed_size(n: usize, classes: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).max(classes)
}

/// Labels proportional to the train-split histogram (largest remainder, floor one
/// per class), features sampled from train nodes of the same class, logits at
/// [`LOGIT_INIT`] plus small symmetric noise.
pub fn init_synthetic(g: &Graph, ratio: f64, seed: u64) -> Result<SyntheticGraph> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Argument(format!("condensation ratio must be in (0, 1), got {ratio}")));
    }
    let c = g.num_classes();
    let raw = (ratio * g.num_nodes() as f64).round() as usize;
    if raw < c {
        log::warn!("r·N = {raw} is below the class count {c}; using one node per class");
    }
    let m = condensed_size(g.num_nodes(), c, ratio);
    let by_class = g.train_nodes_by_class();
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Argument(format!("class {empty} has no training node")));
    }
    let hist: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let counts = graph::proportional_allocation(&hist, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ys = Vec::with_capacity(m);
    let mut sources = Vec::with_capacity(m);
    for (class, (&count, members)) in counts.iter().zip(&by_class).enumerate() {
        let picks: Vec<usize> = if count <= members.len() {
            members.choose_multiple(&mut rng, count).copied().collect()
        } else {
            (0..count).map(|_| *members.choose(&mut rng).unwrap()).collect()
        };
        sources.extend(picks);
        ys.extend(std::iter::repeat_n(class, count));
    }
    let xs = g.features().select(Axis(0), &sources);
    let mut logits = Array2::zeros((m, m));
    for i in 0..m {
        for j in (i + 1)..m {
            let v = LOGIT_INIT + rng.random_range(-LOGIT_NOISE..LOGIT_NOISE);
            logits[[i, j]] = v;
            logits[[j, i]] = v;
        }
    }
    SyntheticGraph::new(xs, SynAdjacency::Learned(logits), ys, c)
}

/// Column-wise `Σ (1 − cos)` over both layers. Zero columns contribute 0 when
/// both are zero and 1 otherwise.
pub fn grad_distance(a: &GradientSet, b: &GradientSet) -> Result<f64> {
    Ok(grad_distance_with_grad(a, b)?.0)
}

/// Distance and its gradient with respect to `b`.
pub fn grad_distance_with_grad(a: &GradientSet, b: &GradientSet) -> Result<(f64, GradientSet)> {
    if a.gw1.dim() != b.gw1.dim() || a.gw2.dim() != b.gw2.dim() {
        return Err(Error::Structural("gradient sets differ in shape".into()));
    }
    let (d1, g1) = column_distance(a.gw1.view(), b.gw1.view());
    let (d2, g2) = column_distance(a.gw2.view(), b.gw2.view());
    Ok((d1 + d2, GradientSet { gw1: g1, gw2: g2 }))
}

fn column_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let mut total = 0.0;
    let mut grad = Array2::zeros(b.raw_dim());
    for k in 0..a.ncols() {
        let ca = a.column(k).to_vec();
        let cb = b.column(k).to_vec();
        let za = ca.iter().all(|&v| v == 0.0);
        let zb = cb.iter().all(|&v| v == 0.0);
        if za || zb {
            total += if za && zb { 0.0 } else { 1.0 };
            continue;
        }
        total += 1.0 - linalg::cosine(&ca, &cb);
        let g = linalg::cosine_grad(&cb, &ca);
        for (i, v) in g.into_iter().enumerate() {
            grad[[i, k]] = -v;
        }
    }
    (total, grad)
}

/// A real graph prepared for gradient matching: propagation operator, `P·X`,
/// labels and the per-class training masks.
#[derive(Debug, Clone)]
pub struct MatchTarget {
    pub prop: Array2<f64>,
    pub q: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_masks: Vec<Vec<usize>>,
}

impl MatchTarget {
    pub fn new(g: &Graph) -> Result<Self> {
        Self::with_adjacency(g, g.dense_adjacency().view())
    }

    /// Same nodes and labels as `g` over another adjacency (the intervened `V`).
    pub fn with_adjacency(g: &Graph, adjacency: ArrayView2<f64>) -> Result<Self> {
        let prop = graph::gcn_normalize(adjacency)?;
        if prop.nrows() != g.num_nodes() {
            return Err(Error::Structural("adjacency size does not match graph".into()));
        }
        let q = linalg::matmul(prop.view(), g.features().view());
        Ok(Self {
            prop,
            q,
            labels: g.labels().to_vec(),
            class_masks: g.train_nodes_by_class(),
        })
    }

    /// Relay gradients on each class's training mask (`None` for empty masks).
    pub fn class_gradients(&self, relay: &RelayModel) -> Result<Vec<Option<GradientSet>>> {
        let u = self.q.dot(&relay.w1);
        let hidden = u.mapv(|v| v.max(0.0));
        let n = self.prop.nrows();
        let mut out = Vec::with_capacity(self.class_masks.len());
        for mask in &self.class_masks {
            if mask.is_empty() {
                out.push(None);
                continue;
            }
            let rows = MaskRows::new(mask, &self.labels, n, relay.num_classes())?;
            let p_rows = self.prop.select(Axis(0), &rows.rows);
            let r_rows = p_rows.dot(&hidden);
            let (_, e) = rows.cross_entropy(r_rows.dot(&relay.w2).view());
            let gw2 = r_rows.t().dot(&e);
            let gh = p_rows.t().dot(&e.dot(&relay.w2.t()));
            let gu = relu_mask(gh, u.view());
            // Only rows reached by the mask through P carry gradient.
            let active: Vec<usize> = (0..n)
                .filter(|&i| gu.row(i).iter().any(|&v| v != 0.0))
                .collect();
            let gw1 = if active.len() * 2 < n {
                self.q
                    .select(Axis(0), &active)
                    .t()
                    .dot(&gu.select(Axis(0), &active))
            } else {
                self.q.t().dot(&gu)
            };
            out.push(Some(GradientSet { gw1, gw2 }));
        }
        Ok(out)
    }
}

/// Gradient of a scalar objective with respect to the synthetic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SynGrad {
    pub xs: Array2<f64>,
    /// Present only for learned adjacencies; symmetric with a zero diagonal.
    pub logits: Option<Array2<f64>>,
}

impl SynGrad {
    pub fn zeros(syn: &SyntheticGraph) -> Self {
        Self {
            xs: Array2::zeros(syn.xs.raw_dim()),
            logits: syn.logits().map(|l| Array2::zeros(l.raw_dim())),
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            xs: &self.xs * k,
            logits: self.logits.as_ref().map(|l| l * k),
        }
    }

    pub fn add_scaled(&mut self, other: &SynGrad, k: f64) {
        self.xs.scaled_add(k, &other.xs);
        if let (Some(a), Some(b)) = (self.logits.as_mut(), other.logits.as_ref()) {
            a.scaled_add(k, b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.xs.iter().all(|v| v.is_finite())
            && self.logits.as_ref().is_none_or(|l| l.iter().all(|v| v.is_finite()))
    }
}

/// Converts `∂L/∂P` for `P = gcn_normalize(A_s)` into a [`SynGrad`] logit part.
pub fn logits_grad_from_prop(syn: &SyntheticGraph, adj_p: ArrayView2<f64>) -> Option<Array2<f64>> {
    let logits = syn.logits()?;
    let a = syn.adjacency();
    let p = graph::gcn_normalize_unchecked(a.view(), syn.num_nodes());
    let adj_a = graph::gcn_normalize_backward(a.view(), p.view(), adj_p);
    let m = syn.num_nodes();
    let mut g = Array2::zeros((m, m));
    for i in 0..m {
        for j in (i + 1)..m {
            let s = sigmoid(logits[[i, j]]);
            let v = (adj_a[[i, j]] + adj_a[[j, i]]) * s * (1.0 - s);
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    Some(g)
}

/// Synthetic-side forward quantities shared across classes.
struct SynForward {
    prop: Array2<f64>,
    q: Array2<f64>,
    u: Array2<f64>,
    hidden: Array2<f64>,
    r: Array2<f64>,
    logits: Array2<f64>,
}

impl SynForward {
    fn new(syn: &SyntheticGraph, relay: &RelayModel) -> Self {
        let prop = syn.propagation();
        let q = prop.dot(&syn.xs);
        let act = relay.forward_propagated(prop.view(), q.view());
        Self {
            prop,
            q,
            u: act.u,
            hidden: act.hidden,
            r: act.r,
            logits: act.logits,
        }
    }

    fn class_gradient(&self, relay: &RelayModel, rows: &MaskRows) -> GradientSet {
        let (e, _) = self.class_output_grad(rows);
        let f = e.dot(&relay.w2.t());
        let gh = self.prop.t().dot(&f);
        let gu = relu_mask(gh, self.u.view());
        GradientSet {
            gw1: self.q.t().dot(&gu),
            gw2: self.r.t().dot(&e),
        }
    }

    /// Full-size `∂CE/∂O` for the class mask and the per-row softmax.
    fn class_output_grad(&self, rows: &MaskRows) -> (Array2<f64>, Array2<f64>) {
        let selected = self.logits.select(Axis(0), &rows.rows);
        let (_, e_rows) = rows.cross_entropy(selected.view());
        let mut e = Array2::zeros(self.logits.raw_dim());
        let mut probs = Array2::zeros(self.logits.raw_dim());
        for (k, &i) in rows.rows.iter().enumerate() {
            e.row_mut(i).assign(&e_rows.row(k));
            let p = crate::relay::softmax_row(&self.logits.row(i).to_vec());
            probs.row_mut(i).assign(&Array1::from(p));
        }
        (e, probs)
    }

    /// Reverse pass of the class gradient: given `B = ∂D/∂(gW1, gW2)` returns
    /// `(∂D/∂P, ∂D/∂X)` with the relay weights held fixed.
    fn class_backward(
        &self,
        relay: &RelayModel,
        xs: ArrayView2<f64>,
        rows: &MaskRows,
        b: &GradientSet,
    ) -> (Array2<f64>, Array2<f64>) {
        let (e, probs) = self.class_output_grad(rows);
        let w1 = &relay.w1;
        let w2 = &relay.w2;
        let f = e.dot(&w2.t());
        let gh = self.prop.t().dot(&f);
        let gu = relu_mask(gh, self.u.view());

        // gW1 = Qᵀ GU
        let mut adj_q = gu.dot(&b.gw1.t());
        let adj_gu = self.q.dot(&b.gw1);
        let adj_gh = relu_mask(adj_gu, self.u.view());
        // GH = Pᵀ F
        let mut adj_p = f.dot(&adj_gh.t());
        let adj_f = self.prop.dot(&adj_gh);
        let mut adj_e = adj_f.dot(w2);
        // gW2 = Rᵀ E
        let mut adj_r = e.dot(&b.gw2.t());
        adj_e += &self.r.dot(&b.gw2);
        // E = w·(softmax(O) − Y) on mask rows
        let mut adj_o = Array2::zeros(self.logits.raw_dim());
        for (k, &i) in rows.rows.iter().enumerate() {
            let p = probs.row(i);
            let ge = adj_e.row(i);
            let dot = p.dot(&ge);
            let w = rows.weights[k];
            let mut out = adj_o.row_mut(i);
            for j in 0..p.len() {
                out[j] = w * p[j] * (ge[j] - dot);
            }
        }
        // O = R W2
        adj_r += &adj_o.dot(&w2.t());
        // R = P H
        adj_p += &adj_r.dot(&self.hidden.t());
        let adj_h = self.prop.t().dot(&adj_r);
        let adj_u = relu_mask(adj_h, self.u.view());
        // U = Q W1
        adj_q += &adj_u.dot(&w1.t());
        // Q = P X
        adj_p += &adj_q.dot(&xs.t());
        let adj_x = self.prop.t().dot(&adj_q);
        (adj_p, adj_x)
    }
}

/// Relay gradients on the synthetic graph, one per class (`None` when the class
/// has no synthetic node).
pub fn synthetic_class_gradients(syn: &SyntheticGraph, relay: &RelayModel) -> Result<Vec<Option<GradientSet>>> {
    let fwd = SynForward::new(syn, relay);
    syn.class_masks()
        .iter()
        .map(|mask| {
            if mask.is_empty() {
                return Ok(None);
            }
            let rows = MaskRows::new(mask, &syn.ys, syn.num_nodes(), relay.num_classes())?;
            Ok(Some(fwd.class_gradient(relay, &rows)))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CondLoss {
    /// `real_term + aug_term`.
    pub loss: f64,
    pub real_term: f64,
    pub aug_term: f64,
    pub grad: SynGrad,
}

fn check_relay(relay: &RelayModel, syn: &SyntheticGraph, target: &MatchTarget) -> Result<()> {
    if relay.input_dim() != syn.feature_dim() || relay.input_dim() != target.q.ncols() {
        return Err(Error::Structural(format!(
            "relay expects {} features; synthetic has {}, real has {}",
            relay.input_dim(),
            syn.feature_dim(),
            target.q.ncols()
        )));
    }
    if relay.num_classes() != syn.num_classes || target.class_masks.len() != syn.num_classes {
        return Err(Error::Structural("class counts of relay, real and synthetic graphs differ".into()));
    }
    Ok(())
}

/// Both matching terms at the current relay weights, with gradients with respect
/// to the synthetic features and logits.
pub fn condensation_loss(
    real: &MatchTarget,
    aug: &MatchTarget,
    syn: &SyntheticGraph,
    relay: &RelayModel,
) -> Result<CondLoss> {
    check_relay(relay, syn, real)?;
    check_relay(relay, syn, aug)?;
    let g_real = real.class_gradients(relay)?;
    let g_aug = aug.class_gradients(relay)?;
    let fwd = SynForward::new(syn, relay);
    let m = syn.num_nodes();
    let mut adj_p = Array2::<f64>::zeros((m, m));
    let mut adj_x = Array2::<f64>::zeros(syn.xs.raw_dim());
    let (mut real_term, mut aug_term) = (0.0, 0.0);
    for (class, mask) in syn.class_masks().iter().enumerate() {
        let (Some(gr), Some(ga)) = (&g_real[class], &g_aug[class]) else {
            continue;
        };
        if mask.is_empty() {
            continue;
        }
        let rows = MaskRows::new(mask, &syn.ys, m, relay.num_classes())?;
        let gs = fwd.class_gradient(relay, &rows);
        let (dr, mut b) = grad_distance_with_grad(gr, &gs)?;
        let (da, b_aug) = grad_distance_with_grad(ga, &gs)?;
        real_term += dr;
        aug_term += da;
        b.add_assign(&b_aug);
        let (p_c, x_c) = fwd.class_backward(relay, syn.xs.view(), &rows, &b);
        adj_p += &p_c;
        adj_x += &x_c;
    }
    let logits = logits_grad_from_prop(syn, adj_p.view());
    let loss = real_term + aug_term;
    if !loss.is_finite() {
        return Err(Error::Numeric("condensation loss is not finite".into()));
    }
    Ok(CondLoss {
        loss,
        real_term,
        aug_term,
        grad: SynGrad { xs: adj_x, logits },
    })
}

/// Optimizers for the synthetic features and logits.
#[derive(Debug, Clone)]
pub struct SynOptimizer {
    pub x: Optimizer,
    pub adj: Optimizer,
}

impl SynOptimizer {
    pub fn new(kind: OptimizerKind, lr_x: f64, lr_adj: f64) -> Self {
        Self {
            x: Optimizer::new(kind, lr_x),
            adj: Optimizer::new(kind, lr_adj),
        }
    }

    pub fn apply(&mut self, syn: &mut SyntheticGraph, grad: &SynGrad) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::Numeric("synthetic gradient is not finite".into()));
        }
        if self.x.lr() != 0.0 {
            self.x.step(&mut [&mut syn.xs], &[&grad.xs]);
        }
        if let (SynAdjacency::Learned(l), Some(g)) = (&mut syn.adj, grad.logits.as_ref()) {
            if self.adj.lr() != 0.0 {
                self.adj.step(&mut [l], &[g]);
                // Keep exact symmetry against round-off in the optimizer state.
                let m = l.nrows();
                for i in 0..m {
                    l[[i, i]] = 0.0;
                    for j in (i + 1)..m {
                        l[[j, i]] = l[[i, j]];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Relay and bookkeeping for one block of outer steps.
#[derive(Debug, Clone)]
pub struct MatchState {
    pub t: usize,
    pub horizon: usize,
    pub relay: RelayModel,
    pub trace: Vec<f64>,
}

impl MatchState {
    pub fn new(relay: RelayModel, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Argument("horizon must be at least 1".into()));
        }
        Ok(Self {
            t: 0,
            horizon,
            relay,
            trace: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OuterStep {
    pub cond_weight: f64,
    pub lr_relay: f64,
    pub inner_steps: usize,
}

/// `steps` gradient-descent steps of the relay on the synthetic cross-entropy.
///
/// This is the only place the relay is trained, and it sees nothing but the
/// synthetic graph.
pub fn train_relay_on_synthetic(
    relay: &RelayModel,
    syn: &SyntheticGraph,
    lr: f64,
    steps: usize,
) -> Result<RelayModel> {
    let mut relay = relay.clone();
    if steps == 0 {
        return Ok(relay);
    }
    let prop = syn.propagation();
    let q = prop.dot(&syn.xs);
    let mask: Vec<usize> = (0..syn.num_nodes()).collect();
    for _ in 0..steps {
        let (_, g) = relay.loss_and_grad_propagated(prop.view(), q.view(), &syn.ys, &mask)?;
        relay = relay.sgd_step(&g, lr)?;
    }
    Ok(relay)
}

/// One outer iteration: a descent step on `cond_weight·L_cond (+ aux)`, then
/// `inner_steps` relay updates on the synthetic graph only.
pub fn outer_step(
    state: &mut MatchState,
    real: &MatchTarget,
    aug: &MatchTarget,
    syn: &mut SyntheticGraph,
    opt: &mut SynOptimizer,
    aux: Option<&SynGrad>,
    step: OuterStep,
) -> Result<CondLoss> {
    if state.t >= state.horizon {
        return Err(Error::State(format!(
            "match state exhausted its horizon of {} steps",
            state.horizon
        )));
    }
    let cond = condensation_loss(real, aug, syn, &state.relay)?;
    let mut grad = cond.grad.scaled(step.cond_weight);
    if let Some(extra) = aux {
        grad.add_scaled(extra, 1.0);
    }
    opt.apply(syn, &grad)?;
    state.relay = train_relay_on_synthetic(&state.relay, syn, step.lr_relay, step.inner_steps)?;
    state.trace.push(cond.loss);
    state.t += 1;
    Ok(cond)
}
