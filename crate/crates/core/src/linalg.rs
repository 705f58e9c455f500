//! Dense linear-algebra helpers shared by the numerical modules.

use faer::linalg::matmul::matmul as faer_matmul;
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition (faer's self-adjoint solver).
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns. Only the lower triangle of `matrix` is read.
pub fn symmetric_eigen(matrix: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (rows, cols) = matrix.dim();
    if rows != cols {
        return Err(Error::Structural(format!(
            "eigendecomposition needs a square matrix, got {rows}x{cols}"
        )));
    }
    let n = rows;
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry passed to eigensolver".into()));
    }
    let m = Mat::<f64>::from_fn(n, n, |i, j| matrix[[i.max(j), i.min(j)]]);
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric(format!("eigensolver did not converge: {e:?}")))?;
    let s = eig.S();
    let u = eig.U();
    let values = Array1::from_shape_fn(n, |i| s[i]);
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| u[(i, j)]);
    Ok((values, vectors))
}

fn as_faer<'a>(m: &'a ArrayView2<'a, f64>, owned: &'a mut Option<Array2<f64>>) -> MatRef<'a, f64> {
    let (r, c) = m.dim();
    if let Some(s) = m.as_slice() {
        return MatRef::from_row_major_slice(s, r, c);
    }
    let t = m.t();
    if t.is_standard_layout() {
        if let Some(s) = m.as_slice_memory_order() {
            return MatRef::from_row_major_slice(s, c, r).transpose();
        }
    }
    let copy = owned.insert(m.as_standard_layout().into_owned());
    MatRef::from_row_major_slice(copy.as_slice().expect("standard layout"), r, c)
}

/// Below this fraction of nonzeros an operand is multiplied as sparse.
const SPARSE_DENSITY: f64 = 0.05;

/// `(row, col, value)` of the nonzeros when `m` is sparse enough.
fn sparse_rows(m: ArrayView2<f64>) -> Option<Vec<Vec<(usize, f64)>>> {
    let nnz = m.iter().filter(|&&v| v != 0.0).count();
    if (nnz as f64) >= SPARSE_DENSITY * m.len() as f64 {
        return None;
    }
    Some(
        m.outer_iter()
            .map(|row| row.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, v)).collect())
            .collect(),
    )
}

/// `a·b`. Operands that are mostly zeros (graph operators) take a sparse
/// path; everything else goes through faer's gemm.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "matmul: inner dimensions differ ({k} vs {k2})");
    let mut out = Array2::zeros((m, n));
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    if let Some(rows) = sparse_rows(a) {
        for (i, row) in rows.iter().enumerate() {
            let mut o = out.row_mut(i);
            for &(p, v) in row {
                o.scaled_add(v, &b.row(p));
            }
        }
        return out;
    }
    if let Some(rows) = sparse_rows(b) {
        for (i, mut o) in out.outer_iter_mut().enumerate() {
            for (p, row) in rows.iter().enumerate() {
                let x = a[[i, p]];
                if x != 0.0 {
                    for &(j, v) in row {
                        o[j] += x * v;
                    }
                }
            }
        }
        return out;
    }
    let (mut oa, mut ob) = (None, None);
    let fa = as_faer(&a, &mut oa);
    let fb = as_faer(&b, &mut ob);
    let dst = MatMut::from_row_major_slice_mut(out.as_slice_mut().expect("fresh array"), m, n);
    faer_matmul(dst, Accum::Replace, fa, fb, 1.0, Par::Seq);
    out
}

/// Flip each column so that its largest-magnitude entry is positive.
pub fn fix_column_signs(vectors: &mut Array2<f64>) {
    for mut col in vectors.axis_iter_mut(Axis(1)) {
        let mut best = 0.0f64;
        let mut best_val = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                best_val = v;
            }
        }
        if best_val < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

pub fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// ‖a − b‖_F / max(‖b‖_F, tiny).
pub fn relative_frobenius(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / frobenius(b).max(1e-300)
}

pub fn max_asymmetry(m: ArrayView2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

pub fn ensure_square(m: ArrayView2<f64>, what: &str) -> Result<usize> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::Structural(format!("{what} must be square, got {r}x{c}")));
    }
    Ok(r)
}

pub fn ensure_symmetric(m: ArrayView2<f64>, tol: f64, what: &str) -> Result<usize> {
    let n = ensure_square(m, what)?;
    let asym = max_asymmetry(m);
    if asym > tol {
        return Err(Error::Structural(format!(
            "{what} is not symmetric (max |a_ij - a_ji| = {asym:.3e})"
        )));
    }
    Ok(n)
}

/// Frobenius inner product ⟨P, Q⟩ = Σ P_ij Q_ij.
pub fn inner(p: ArrayView2<f64>, q: ArrayView2<f64>) -> f64 {
    p.iter().zip(q.iter()).map(|(a, b)| a * b).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Gradient of cos(a, b) with respect to `a`. Zero when either vector is zero.
pub fn cosine_grad(a: &[f64], b: &[f64]) -> Vec<f64> {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return vec![0.0; a.len()];
    }
    let c = cosine(a, b);
    a.iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / (na * na))
        .collect()
}
