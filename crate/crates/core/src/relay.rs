//! Two-layer GCN used both as the gradient-matching relay and as the encoder.
//!
//! `logits = P · relu(P · X · W1) · W2`, no biases, no dropout. Everything is
//! full-batch and the gradients are written out by hand.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayModel {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub gw1: Array2<f64>,
    pub gw2: Array2<f64>,
}

impl GradientSet {
    pub fn zeros_like(model: &RelayModel) -> Self {
        Self {
            gw1: Array2::zeros(model.w1.raw_dim()),
            gw2: Array2::zeros(model.w2.raw_dim()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gw1.iter().chain(self.gw2.iter()).all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        self.gw1 += &other.gw1;
        self.gw2 += &other.gw2;
    }
}

/// Intermediate values of one forward pass. `q = P·X` is the propagated input.
#[derive(Debug, Clone)]
pub struct Activations {
    pub u: Array2<f64>,
    pub hidden: Array2<f64>,
    pub r: Array2<f64>,
    pub logits: Array2<f64>,
}

/// Uniform `±1/sqrt(fan_in)` initialization from a seeded ChaCha stream.
pub fn init_model(d: usize, h: usize, c: usize, seed: u64) -> Result<RelayModel> {
    if d == 0 || h == 0 || c == 0 {
        return Err(Error::Argument(format!(
            "relay dimensions must be positive (d={d}, h={h}, C={c})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b1 = 1.0 / (d as f64).sqrt();
    let w1 = Array2::from_shape_fn((d, h), |_| rng.random_range(-b1..b1));
    let b2 = 1.0 / (h as f64).sqrt();
    let w2 = Array2::from_shape_fn((h, c), |_| rng.random_range(-b2..b2));
    Ok(RelayModel { w1, w2, seed })
}

fn check_prop(prop: ArrayView2<f64>, n: usize) -> Result<()> {
    if prop.dim() != (n, n) {
        return Err(Error::Structural(format!(
            "propagation matrix is {:?}, expected {n}x{n}",
            prop.dim()
        )));
    }
    Ok(())
}

impl RelayModel {
    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).all(|v| v.is_finite())
    }

    fn check_features(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Structural(format!(
                "features have {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Returns `(logits, embeddings)`; embeddings are the post-ReLU hidden layer.
    pub fn forward(
        &self,
        prop: ArrayView2<f64>,
        x: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_features(x)?;
        check_prop(prop, x.nrows())?;
        let q = prop.dot(&x);
        let act = self.forward_propagated(prop, q.view());
        Ok((act.logits, act.hidden))
    }

    /// Forward pass from a precomputed `q = P·X`.
    pub fn forward_propagated(&self, prop: ArrayView2<f64>, q: ArrayView2<f64>) -> Activations {
        let u = q.dot(&self.w1);
        let hidden = u.mapv(|v| v.max(0.0));
        let r = prop.dot(&hidden);
        let logits = r.dot(&self.w2);
        Activations { u, hidden, r, logits }
    }

    /// Hidden embeddings `relu(q · W1)` from a precomputed `q = P·X`.
    pub fn embed_propagated(&self, q: ArrayView2<f64>) -> Array2<f64> {
        q.dot(&self.w1).mapv(|v| v.max(0.0))
    }

    /// Mean softmax cross-entropy over `mask` and its exact gradients.
    pub fn loss_and_grad(
        &self,
        prop: ArrayView2<f64>,
        x: ArrayView2<f64>,
        labels: &[usize],
        mask: &[usize],
    ) -> Result<(f64, GradientSet)> {
        self.check_features(x)?;
        check_prop(prop, x.nrows())?;
        let q = prop.dot(&x);
        self.loss_and_grad_propagated(prop, q.view(), labels, mask)
    }

    /// As [`RelayModel::loss_and_grad`] with `q = P·X` precomputed. Only the
    /// propagation rows selected by the mask are touched in the second layer.
    pub fn loss_and_grad_propagated(
        &self,
        prop: ArrayView2<f64>,
        q: ArrayView2<f64>,
        labels: &[usize],
        mask: &[usize],
    ) -> Result<(f64, GradientSet)> {
        let u = q.dot(&self.w1);
        let hidden = u.mapv(|v| v.max(0.0));
        let (loss, grads) = self.masked_grads(prop, q, u.view(), hidden.view(), labels, mask)?;
        Ok((loss, grads))
    }

    pub(crate) fn masked_grads(
        &self,
        prop: ArrayView2<f64>,
        q: ArrayView2<f64>,
        u: ArrayView2<f64>,
        hidden: ArrayView2<f64>,
        labels: &[usize],
        mask: &[usize],
    ) -> Result<(f64, GradientSet)> {
        let rows = MaskRows::new(mask, labels, prop.nrows(), self.num_classes())?;
        let p_rows = prop.select(Axis(0), &rows.rows);
        let r_rows = p_rows.dot(&hidden);
        let logits = r_rows.dot(&self.w2);
        let (loss, e) = rows.cross_entropy(logits.view());
        let gw2 = r_rows.t().dot(&e);
        let gh = p_rows.t().dot(&e.dot(&self.w2.t()));
        let gu = relu_mask(gh, u);
        let gw1 = q.t().dot(&gu);
        Ok((loss, GradientSet { gw1, gw2 }))
    }

    /// Returns `self − lr · grads`.
    pub fn sgd_step(&self, grads: &GradientSet, lr: f64) -> Result<RelayModel> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Argument(format!("learning rate must be >= 0, got {lr}")));
        }
        if grads.gw1.dim() != self.w1.dim() || grads.gw2.dim() != self.w2.dim() {
            return Err(Error::Structural("gradient shapes do not match model".into()));
        }
        Ok(RelayModel {
            w1: &self.w1 - &(lr * &grads.gw1),
            w2: &self.w2 - &(lr * &grads.gw2),
            seed: self.seed,
        })
    }

    /// Predicted classes for every node.
    pub fn predict(&self, prop: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(prop, x)?;
        Ok(argmax_rows(logits.view()))
    }
}

/// `grad ⊙ 1[pre > 0]`, consuming `grad`.
pub(crate) fn relu_mask(mut grad: Array2<f64>, pre: ArrayView2<f64>) -> Array2<f64> {
    grad.zip_mut_with(&pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    grad
}

pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Unique rows of a mask with their multiplicity weights `count / |mask|`.
pub(crate) struct MaskRows {
    pub rows: Vec<usize>,
    pub weights: Array1<f64>,
    pub targets: Vec<usize>,
}

impl MaskRows {
    pub fn new(mask: &[usize], labels: &[usize], n: usize, classes: usize) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::Argument("loss mask is empty".into()));
        }
        if labels.len() != n {
            return Err(Error::Structural(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        let mut sorted = mask.to_vec();
        sorted.sort_unstable();
        let mut rows = Vec::new();
        let mut counts = Vec::new();
        for &i in &sorted {
            if i >= n {
                return Err(Error::Argument(format!("mask index {i} out of range")));
            }
            if labels[i] >= classes {
                return Err(Error::Argument(format!(
                    "label {} of node {i} outside [0, {classes})",
                    labels[i]
                )));
            }
            if rows.last() == Some(&i) {
                *counts.last_mut().unwrap() += 1.0;
            } else {
                rows.push(i);
                counts.push(1.0);
            }
        }
        let total = mask.len() as f64;
        let targets = rows.iter().map(|&i| labels[i]).collect();
        Ok(Self {
            rows,
            weights: Array1::from(counts) / total,
            targets,
        })
    }

    /// Weighted cross-entropy of the selected logits and `∂loss/∂logits`.
    pub fn cross_entropy(&self, logits: ArrayView2<f64>) -> (f64, Array2<f64>) {
        let mut loss = 0.0;
        let mut grad = Array2::zeros(logits.raw_dim());
        for (k, row) in logits.rows().into_iter().enumerate() {
            let row = row.to_vec();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let w = self.weights[k];
            let y = self.targets[k];
            loss += w * (lse - row[y]);
            for (j, &v) in row.iter().enumerate() {
                let p = (v - lse).exp();
                grad[[k, j]] = w * (p - if j == y { 1.0 } else { 0.0 });
            }
        }
        (loss, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_model(3, 1, 2, 7).unwrap();
        let b = init_model(3, 1, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.w1.dim(), (3, 1));
        assert_eq!(a.w2.dim(), (1, 2));
        assert_ne!(a.w1, init_model(3, 1, 2, 8).unwrap().w1);
        assert!(init_model(0, 1, 2, 0).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let mut m = init_model(2, 3, 4, 0).unwrap();
        m.w1.fill(0.0);
        m.w2.fill(0.0);
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let p = Array2::eye(3);
        let (logits, _) = m.forward(p.view(), x.view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        let (loss, _) = m.loss_and_grad(p.view(), x.view(), &[0, 1, 3], &[0, 2]).unwrap();
        assert_abs_diff_eq!(loss, 4.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let m = init_model(2, 2, 2, 0).unwrap();
        let x = Array2::zeros((2, 2));
        let p = Array2::eye(2);
        assert!(matches!(
            m.loss_and_grad(p.view(), x.view(), &[0, 1], &[]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let m = init_model(3, 2, 2, 0).unwrap();
        let x = Array2::zeros((2, 2));
        let p = Array2::eye(2);
        assert!(matches!(m.forward(p.view(), x.view()), Err(Error::Structural(_))));
    }

    #[test]
    fn identity_propagation_is_an_mlp() {
        let m = init_model(3, 4, 2, 3).unwrap();
        let x = array![[0.1, -0.3, 0.7], [1.0, 0.2, -0.5]];
        let (logits, hidden) = m.forward(Array2::eye(2).view(), x.view()).unwrap();
        let h = x.dot(&m.w1).mapv(|v: f64| v.max(0.0));
        assert_abs_diff_eq!(hidden, h, epsilon = 1e-15);
        assert_abs_diff_eq!(logits, h.dot(&m.w2), epsilon = 1e-15);
    }

    #[test]
    fn sgd_on_single_weight() {
        // One node, one feature: loss(w) is the cross-entropy of logits [w*x*v, 0].
        let m = RelayModel {
            w1: array![[2.0]],
            w2: array![[0.5, 0.0]],
            seed: 0,
        };
        let g = GradientSet {
            gw1: array![[0.25]],
            gw2: array![[-1.0, 1.0]],
        };
        let next = m.sgd_step(&g, 0.1).unwrap();
        assert_abs_diff_eq!(next.w1[[0, 0]], 2.0 - 0.025, epsilon = 1e-15);
        assert_abs_diff_eq!(next.w2, array![[0.6, -0.1]], epsilon = 1e-15);
        assert_eq!(m.sgd_step(&g, 0.0).unwrap(), m);
        assert_eq!(m.sgd_step(&GradientSet::zeros_like(&m), 0.3).unwrap(), m);
    }
}
