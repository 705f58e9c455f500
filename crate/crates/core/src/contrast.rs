//! Spectral negatives, mean readout and InfoNCE.
//!
//! A negative keeps only the upper part of the Laplacian spectrum of `V`
//! (ascending indices from `floor((1−κ)n/2)` on) and maps the truncated
//! Laplacian back to an adjacency through `V`'s degrees.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::graph::{self, SpectralDecomposition};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct NegativeSample {
    pub laplacian_hat: Array2<f64>,
    pub adjacency_neg: Array2<f64>,
    pub kappa: f64,
    pub kept_index_start: usize,
}

/// First kept ascending eigen-index, `floor((1 − κ)·n / 2)`.
pub fn kept_index_start(n: usize, kappa: f64) -> usize {
    (((1.0 - kappa) * n as f64) / 2.0).floor() as usize
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::Argument(format!("kappa must lie in [0, 1], got {kappa}")));
    }
    Ok(())
}

pub fn build_negative(v: ArrayView2<f64>, kappa: f64, cap: usize) -> Result<NegativeSample> {
    check_kappa(kappa)?;
    let lap = graph::normalized_laplacian(v)?;
    let dec = graph::spectral_decompose(lap.view(), cap)?;
    negative_from_decomposition(v, &dec, kappa)
}

/// Several negatives from one eigendecomposition of `V`'s Laplacian.
///
/// The kept eigen-ranges are nested, so the filtered Laplacians are built
/// incrementally from the narrowest band outwards.
pub fn build_negatives(v: ArrayView2<f64>, kappas: &[f64], cap: usize) -> Result<Vec<NegativeSample>> {
    for &k in kappas {
        check_kappa(k)?;
    }
    let lap = graph::normalized_laplacian(v)?;
    let dec = graph::spectral_decompose(lap.view(), cap)?;
    let n = v.nrows();
    let mut order: Vec<usize> = (0..kappas.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(kept_index_start(n, kappas[i])));
    let mut out: Vec<Option<NegativeSample>> = vec![None; kappas.len()];
    let mut acc = Array2::zeros((n, n));
    let mut covered = n;
    for i in order {
        let start = kept_index_start(n, kappas[i]);
        if start < covered {
            acc += &dec.range_reconstruction(start, covered);
            covered = start;
        }
        out[i] = Some(negative_from_filtered(v, acc.clone(), kappas[i], start));
    }
    Ok(out.into_iter().map(|s| s.expect("every kappa visited")).collect())
}

pub fn negative_from_decomposition(
    v: ArrayView2<f64>,
    dec: &SpectralDecomposition,
    kappa: f64,
) -> Result<NegativeSample> {
    check_kappa(kappa)?;
    let n = v.nrows();
    if dec.len() != n {
        return Err(Error::Structural("decomposition size does not match adjacency".into()));
    }
    let start = kept_index_start(n, kappa);
    Ok(negative_from_filtered(v, dec.partial_reconstruction(start), kappa, start))
}

/// `A⁻ = sym(max(0, −D^{1/2} L̂ D^{1/2}))` off the diagonal.
fn negative_from_filtered(v: ArrayView2<f64>, laplacian_hat: Array2<f64>, kappa: f64, start: usize) -> NegativeSample {
    let n = v.nrows();
    let sqrt_deg = v.sum_axis(Axis(1)).mapv(f64::sqrt);
    let mut adjacency_neg = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let a = (sqrt_deg[i] * (-laplacian_hat[[i, j]]) * sqrt_deg[j]).max(0.0);
            let b = (sqrt_deg[j] * (-laplacian_hat[[j, i]]) * sqrt_deg[i]).max(0.0);
            let m = 0.5 * (a + b);
            adjacency_neg[[i, j]] = m;
            adjacency_neg[[j, i]] = m;
        }
    }
    NegativeSample {
        laplacian_hat,
        adjacency_neg,
        kappa,
        kept_index_start: start,
    }
}

/// Column-wise mean.
pub fn readout(z: ArrayView2<f64>) -> Result<Array1<f64>> {
    z.mean_axis(Axis(0))
        .ok_or_else(|| Error::Argument("readout of an empty matrix".into()))
}

/// `−log( e^{φ(i,j)/t} / (e^{φ(i,j)/t} + Σ_m e^{φ(i,m)/t}) )` with cosine `φ`.
pub fn infonce(
    h_i: ArrayView1<f64>,
    h_j: ArrayView1<f64>,
    negatives: &[Array1<f64>],
    t: f64,
) -> Result<f64> {
    Ok(infonce_grad(h_i, h_j, negatives, t)?.loss)
}

#[derive(Debug, Clone)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub anchor: Array1<f64>,
    pub positive: Array1<f64>,
    pub negatives: Vec<Array1<f64>>,
}

/// InfoNCE together with its gradients with respect to every input vector.
pub fn infonce_grad(
    h_i: ArrayView1<f64>,
    h_j: ArrayView1<f64>,
    negatives: &[Array1<f64>],
    t: f64,
) -> Result<InfoNceGrad> {
    if !(t > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {t}")));
    }
    if negatives.is_empty() {
        return Err(Error::Argument("InfoNCE needs at least one negative".into()));
    }
    let dim = h_i.len();
    if h_j.len() != dim || negatives.iter().any(|v| v.len() != dim) {
        return Err(Error::Structural("InfoNCE vectors differ in length".into()));
    }
    let anchor = h_i.to_vec();
    let others: Vec<Vec<f64>> = std::iter::once(h_j.to_vec())
        .chain(negatives.iter().map(|v| v.to_vec()))
        .collect();
    let scores: Vec<f64> = others.iter().map(|o| linalg::cosine(&anchor, o) / t).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let loss = lse - scores[0];
    let probs: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();

    let mut g_anchor = Array1::zeros(dim);
    let mut g_others = Vec::with_capacity(others.len());
    for (k, o) in others.iter().enumerate() {
        let coef = (probs[k] - if k == 0 { 1.0 } else { 0.0 }) / t;
        g_anchor += &(Array1::from(linalg::cosine_grad(&anchor, o)) * coef);
        g_others.push(Array1::from(linalg::cosine_grad(o, &anchor)) * coef);
    }
    let positive = g_others.remove(0);
    Ok(InfoNceGrad {
        loss,
        anchor: g_anchor,
        positive,
        negatives: g_others,
    })
}
