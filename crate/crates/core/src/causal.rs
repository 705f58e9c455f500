//! Invariance, standard-deviation and decorrelation losses over two views of the
//! same nodes.
//!
//! Columns are centered then scaled to unit norm, so the linear-kernel HSIC
//! between two dimensions is exactly their squared sample covariance.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Centered, unit-norm columns and the population std of each raw column.
///
/// Constant columns become zero columns with `s = 0`.
pub fn normalize_dims(z: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 rows to normalize, got {n}")));
    }
    let mut zbar = z.to_owned();
    let mut std = Array1::zeros(z.ncols());
    for (k, mut col) in zbar.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / n as f64;
        col.mapv_inplace(|v| v - mean);
        let norm = col.dot(&col).sqrt();
        // Relative cutoff so that round-off on a constant column does not survive.
        let scale = z.column(k).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm <= 1e-12 * scale.max(f64::MIN_POSITIVE) * (n as f64).sqrt() || norm == 0.0 {
            col.fill(0.0);
            continue;
        }
        col.mapv_inplace(|v| v / norm);
        std[k] = norm / (n as f64).sqrt();
    }
    Ok((zbar, std))
}

/// `Σ_{i≠j} Cov(Z)_{ij}²` with the sample divisor `n − 1`. Columns are centered
/// internally.
pub fn covariance_offdiag_sq(z: ArrayView2<f64>) -> f64 {
    let cov = sample_covariance(z);
    let mut acc = 0.0;
    for ((i, j), v) in cov.indexed_iter() {
        if i != j {
            acc += v * v;
        }
    }
    acc
}

pub fn sample_covariance(z: ArrayView2<f64>) -> Array2<f64> {
    let n = z.nrows();
    let mean = z.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(z.ncols()));
    let centered = &z - &mean;
    centered.t().dot(&centered) / (n as f64 - 1.0)
}

/// Linear-kernel HSIC `Tr(K_i H K_j H) / (n − 1)²`, evaluated with explicit
/// `n × n` matrices.
pub fn hsic_linear(zi: ArrayView1<f64>, zj: ArrayView1<f64>) -> Result<f64> {
    let n = zi.len();
    if n < 2 || zj.len() != n {
        return Err(Error::Argument(format!(
            "hsic needs two vectors of equal length >= 2, got {} and {}",
            n,
            zj.len()
        )));
    }
    let outer = |v: ArrayView1<f64>| Array2::from_shape_fn((n, n), |(a, b)| v[a] * v[b]);
    let h = Array2::<f64>::eye(n) - Array2::from_elem((n, n), 1.0 / n as f64);
    let ki = outer(zi);
    let kj = outer(zj);
    let prod = ki.dot(&h).dot(&kj).dot(&h);
    Ok(prod.diag().sum() / ((n - 1) as f64).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for CausalWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
            lambda: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalLossTerms {
    pub alignment: f64,
    pub std_penalty: f64,
    pub independence: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_target: f64,
}

/// Encoder outputs on `A` and on `V` together with their normalized forms.
#[derive(Debug, Clone)]
pub struct EmbeddingPair {
    pub za: Array2<f64>,
    pub zv: Array2<f64>,
    pub s_a: Array1<f64>,
    pub s_v: Array1<f64>,
    pub zbar_a: Array2<f64>,
    pub zbar_v: Array2<f64>,
}

impl EmbeddingPair {
    pub fn new(za: Array2<f64>, zv: Array2<f64>) -> Result<Self> {
        if za.dim() != zv.dim() {
            return Err(Error::Structural(format!(
                "embedding views differ in shape: {:?} vs {:?}",
                za.dim(),
                zv.dim()
            )));
        }
        let (zbar_a, s_a) = normalize_dims(za.view())?;
        let (zbar_v, s_v) = normalize_dims(zv.view())?;
        Ok(Self {
            za,
            zv,
            s_a,
            s_v,
            zbar_a,
            zbar_v,
        })
    }
}

pub fn causal_loss(pair: &EmbeddingPair, w: &CausalWeights) -> CausalLossTerms {
    let alignment: f64 = pair
        .zbar_a
        .axis_iter(Axis(1))
        .zip(pair.zbar_v.axis_iter(Axis(1)))
        .map(|(a, v)| a.dot(&v))
        .sum();
    let std_penalty: f64 = pair
        .s_a
        .iter()
        .chain(pair.s_v.iter())
        .map(|s| (s - w.lambda).abs())
        .sum();
    let independence =
        covariance_offdiag_sq(pair.zbar_a.view()) + covariance_offdiag_sq(pair.zbar_v.view());
    CausalLossTerms {
        alignment,
        std_penalty,
        independence,
        total: -w.alpha * alignment + w.beta * std_penalty + w.gamma * independence,
        alpha: w.alpha,
        beta: w.beta,
        gamma: w.gamma,
        lambda_target: w.lambda,
    }
}

/// Loss terms and the gradients of `total` with respect to the raw embeddings
/// `(∂/∂Z^A, ∂/∂Z^V)`. The absolute value uses subgradient 0 at the kink.
pub fn causal_loss_grad(
    pair: &EmbeddingPair,
    w: &CausalWeights,
) -> (CausalLossTerms, Array2<f64>, Array2<f64>) {
    let terms = causal_loss(pair, w);
    let ga = view_grad(&pair.zbar_a, &pair.zbar_v, &pair.s_a, w);
    let gv = view_grad(&pair.zbar_v, &pair.zbar_a, &pair.s_v, w);
    (terms, ga, gv)
}

fn view_grad(
    zbar: &Array2<f64>,
    other: &Array2<f64>,
    std: &Array1<f64>,
    w: &CausalWeights,
) -> Array2<f64> {
    let n = zbar.nrows() as f64;
    let sqrt_n = n.sqrt();
    let mut cov = zbar.t().dot(zbar) / (n - 1.0);
    cov.diag_mut().fill(0.0);
    let g_zbar = other * (-w.alpha) + &(zbar.dot(&cov) * (4.0 * w.gamma / (n - 1.0)));
    let mut grad = Array2::zeros(zbar.raw_dim());
    for k in 0..zbar.ncols() {
        let s = std[k];
        if s == 0.0 {
            continue;
        }
        let norm = s * sqrt_n;
        let zc = zbar.column(k);
        let gz = g_zbar.column(k);
        let g_s = w.beta * sign(s - w.lambda);
        let proj = zc.dot(&gz);
        let mut gc: Array1<f64> = (&gz - &(&zc * proj)) / norm + &(&zc * (g_s / sqrt_n));
        let mean = gc.sum() / n;
        gc.mapv_inplace(|v| v - mean);
        grad.column_mut(k).assign(&gc);
    }
    grad
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
