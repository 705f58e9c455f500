//! Graph data types, Laplacian and GCN normalizations, dense spectral decomposition.
//!
//! The stored adjacency of a [`Graph`] is an undirected edge list (each edge once,
//! `src < dst`, lexicographically sorted, no self-loops). Every operator below works
//! on the dense symmetric materialization; self-loops only ever appear inside
//! [`gcn_normalize`].

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Symmetry tolerance for adjacency inputs.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Default node cap for the dense eigensolver.
pub const DEFAULT_EIGEN_CAP: usize = 5000;
/// Mass given to zero-degree nodes before renormalizing the degree marginals.
pub const DEGREE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, idx) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in idx {
                if i >= n {
                    return Err(Error::Structural(format!(
                        "{name} split index {i} out of range for {n} nodes"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Structural(format!(
                        "node {i} appears twice across splits"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An attributed, labelled, undirected graph with train/val/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    edges: Vec<Edge>,
    splits: Splits,
}

impl Graph {
    /// Builds a validated graph. Edges are canonicalized to `src < dst` and sorted;
    /// duplicate edges and self-loops are rejected.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        edges: Vec<Edge>,
        splits: Splits,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::Structural(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Argument("graph needs at least one class".into()));
        }
        let mut present = vec![false; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::Structural(format!(
                    "label {y} outside [0, {num_classes})"
                )));
            }
            present[y] = true;
        }
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(Error::Structural(format!("class {c} has no node")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite node feature".into()));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for e in edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Structural(format!(
                    "edge ({}, {}) references a node outside [0, {n})",
                    e.src, e.dst
                )));
            }
            if e.src == e.dst {
                return Err(Error::Structural(format!("self-loop on node {}", e.src)));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::Structural(format!(
                    "edge ({}, {}) has invalid weight {}",
                    e.src, e.dst, e.weight
                )));
            }
            if e.weight == 0.0 {
                continue;
            }
            let (src, dst) = if e.src < e.dst { (e.src, e.dst) } else { (e.dst, e.src) };
            canon.push(Edge { src, dst, weight: e.weight });
        }
        canon.sort_by(|a, b| (a.src, a.dst).cmp(&(b.src, b.dst)));
        for w in canon.windows(2) {
            if w[0].src == w[1].src && w[0].dst == w[1].dst {
                return Err(Error::Structural(format!(
                    "duplicate edge ({}, {})",
                    w[0].src, w[0].dst
                )));
            }
        }
        splits.validate(n)?;
        Ok(Self {
            features,
            labels,
            num_classes,
            edges: canon,
            splits,
        })
    }

    /// Builds a graph from a dense symmetric adjacency (diagonal must be zero).
    pub fn from_dense(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        adjacency: ArrayView2<f64>,
        splits: Splits,
    ) -> Result<Self> {
        let n = linalg::ensure_symmetric(adjacency, SYMMETRY_TOL, "adjacency")?;
        if n != features.nrows() {
            return Err(Error::Structural(format!(
                "adjacency is {n}x{n} but there are {} feature rows",
                features.nrows()
            )));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            if adjacency[[i, i]] != 0.0 {
                return Err(Error::Structural(format!("self-loop on node {i}")));
            }
            for j in (i + 1)..n {
                let w = 0.5 * (adjacency[[i, j]] + adjacency[[j, i]]);
                if w != 0.0 {
                    edges.push(Edge { src: i, dst: j, weight: w });
                }
            }
        }
        Self::new(features, labels, num_classes, edges, splits)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn is_weighted(&self) -> bool {
        self.edges.iter().any(|e| e.weight != 1.0)
    }

    pub fn dense_adjacency(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut a = Array2::zeros((n, n));
        for e in &self.edges {
            a[[e.src, e.dst]] = e.weight;
            a[[e.dst, e.src]] = e.weight;
        }
        a
    }

    /// Per-class counts over the training split.
    pub fn train_class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for &i in &self.splits.train {
            hist[self.labels[i]] += 1;
        }
        hist
    }

    /// Training node indices grouped by class.
    pub fn train_nodes_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for &i in &self.splits.train {
            groups[self.labels[i]].push(i);
        }
        groups
    }

    pub fn normalized_laplacian(&self) -> Result<Array2<f64>> {
        normalized_laplacian(self.dense_adjacency().view())
    }

    pub fn gcn_normalize(&self) -> Result<Array2<f64>> {
        gcn_normalize(self.dense_adjacency().view())
    }

    pub fn degree_marginals(&self) -> (Array1<f64>, Array1<f64>) {
        degree_marginals(self.dense_adjacency().view())
    }

    /// Same nodes, features, labels and splits over a different adjacency.
    pub fn with_adjacency(&self, adjacency: ArrayView2<f64>) -> Result<Graph> {
        Graph::from_dense(
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
            adjacency,
            self.splits.clone(),
        )
    }

    pub fn with_splits(&self, splits: Splits) -> Result<Graph> {
        Graph::new(
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
            self.edges.clone(),
            splits,
        )
    }

    /// Induced subgraph on `nodes` (in the given order). Splits are carried over
    /// for the retained nodes.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let n = self.num_nodes();
        let mut position = vec![usize::MAX; n];
        for (new, &old) in nodes.iter().enumerate() {
            if old >= n {
                return Err(Error::Argument(format!("node {old} out of range")));
            }
            if position[old] != usize::MAX {
                return Err(Error::Argument(format!("node {old} listed twice")));
            }
            position[old] = new;
        }
        let features = self.features.select(Axis(0), nodes);
        let labels: Vec<usize> = nodes.iter().map(|&i| self.labels[i]).collect();
        let mut classes: Vec<usize> = labels.clone();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() != self.num_classes {
            return Err(Error::Argument(
                "subgraph must contain every class at least once".into(),
            ));
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| position[e.src] != usize::MAX && position[e.dst] != usize::MAX)
            .map(|e| Edge {
                src: position[e.src],
                dst: position[e.dst],
                weight: e.weight,
            })
            .collect();
        let remap = |idx: &[usize]| -> Vec<usize> {
            let mut out: Vec<usize> = idx
                .iter()
                .filter(|&&i| position[i] != usize::MAX)
                .map(|&i| position[i])
                .collect();
            out.sort_unstable();
            out
        };
        let splits = Splits {
            train: remap(&self.splits.train),
            val: remap(&self.splits.val),
            test: remap(&self.splits.test),
        };
        Graph::new(features, labels, self.num_classes, edges, splits)
    }

    /// Class-stratified random node subsample of size `k`, used to bring large
    /// graphs under the eigendecomposition cap. Results are not comparable to
    /// full-graph runs.
    pub fn subsample(&self, k: usize, seed: u64) -> Result<Graph> {
        let n = self.num_nodes();
        if k >= n {
            return Ok(self.clone());
        }
        if k < self.num_classes {
            return Err(Error::Argument(format!(
                "subsample size {k} is below the class count {}",
                self.num_classes
            )));
        }
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let quota = proportional_allocation(&sizes, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = Vec::with_capacity(k);
        for (members, &q) in by_class.iter_mut().zip(&quota) {
            members.shuffle(&mut rng);
            chosen.extend_from_slice(&members[..q.min(members.len())]);
        }
        chosen.sort_unstable();
        self.induced_subgraph(&chosen)
    }
}

/// Largest-remainder allocation of `total` slots proportional to `weights`,
/// with a floor of one slot for every entry.
pub fn proportional_allocation(weights: &[usize], total: usize) -> Result<Vec<usize>> {
    let k = weights.len();
    if total < k {
        return Err(Error::Argument(format!(
            "cannot allocate {total} slots across {k} classes with a floor of one"
        )));
    }
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return Err(Error::Argument("allocation weights are all zero".into()));
    }
    let exact: Vec<f64> = weights
        .iter()
        .map(|&w| w as f64 * total as f64 / sum as f64)
        .collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    // Largest fractional part first; ties broken by larger weight then index.
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa)
            .unwrap()
            .then(weights[b].cmp(&weights[a]))
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(remaining) {
        alloc[i] += 1;
    }
    remaining = 0;
    let _ = remaining;
    // Enforce the floor by taking slots from the largest allocations.
    loop {
        let Some(empty) = alloc.iter().position(|&a| a == 0) else { break };
        let donor = (0..k)
            .filter(|&i| alloc[i] > 1)
            .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
            .ok_or_else(|| Error::Argument("allocation floor cannot be met".into()))?;
        alloc[donor] -= 1;
        alloc[empty] = 1;
    }
    Ok(alloc)
}

/// Symmetric normalized Laplacian `I − D^{-1/2} A D^{-1/2}`.
///
/// Isolated nodes use a zero `D^{-1/2}` entry, so their row is the identity row.
pub fn normalized_laplacian(adjacency: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = linalg::ensure_symmetric(adjacency, SYMMETRY_TOL, "adjacency")?;
    if adjacency.iter().any(|&v| v < 0.0) {
        return Err(Error::Structural("adjacency has negative entries".into()));
    }
    let inv_sqrt = inverse_sqrt_degrees(adjacency);
    let mut lap = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let off = inv_sqrt[i] * adjacency[[i, j]] * inv_sqrt[j];
            lap[[i, j]] = if i == j { 1.0 - off } else { -off };
        }
    }
    Ok(lap)
}

fn inverse_sqrt_degrees(adjacency: ArrayView2<f64>) -> Array1<f64> {
    adjacency
        .sum_axis(Axis(1))
        .mapv(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
}

/// GCN propagation operator `D̃^{-1/2} (A + I) D̃^{-1/2}`.
pub fn gcn_normalize(adjacency: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = linalg::ensure_symmetric(adjacency, SYMMETRY_TOL, "adjacency")?;
    if adjacency.iter().any(|&v| v < 0.0) {
        return Err(Error::Structural("adjacency has negative entries".into()));
    }
    Ok(gcn_normalize_unchecked(adjacency, n))
}

pub(crate) fn gcn_normalize_unchecked(adjacency: ArrayView2<f64>, n: usize) -> Array2<f64> {
    let deg = adjacency.sum_axis(Axis(1)).mapv(|d| d + 1.0);
    let inv_sqrt = deg.mapv(|d| 1.0 / d.sqrt());
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let a = adjacency[[i, j]] + if i == j { 1.0 } else { 0.0 };
            out[[i, j]] = inv_sqrt[i] * a * inv_sqrt[j];
        }
    }
    out
}

/// Reverse-mode derivative of [`gcn_normalize`].
///
/// Given `upstream = ∂L/∂P` for `P = gcn_normalize(A)`, returns `∂L/∂A` treating
/// every entry `A_ij` as an independent variable (the degree of row `i` depends
/// on row `i` only).
pub fn gcn_normalize_backward(
    adjacency: ArrayView2<f64>,
    propagation: ArrayView2<f64>,
    upstream: ArrayView2<f64>,
) -> Array2<f64> {
    let n = adjacency.nrows();
    let deg = adjacency.sum_axis(Axis(1)).mapv(|d| d + 1.0);
    let inv_sqrt = deg.mapv(|d| 1.0 / d.sqrt());
    // ∂L/∂d_k = −1/(2 d_k) · (Σ_j G_kj P_kj + Σ_i G_ik P_ik)
    let mut grad_deg = Array1::<f64>::zeros(n);
    for k in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += upstream[[k, j]] * propagation[[k, j]] + upstream[[j, k]] * propagation[[j, k]];
        }
        grad_deg[k] = -acc / (2.0 * deg[k]);
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = upstream[[i, j]] * inv_sqrt[i] * inv_sqrt[j] + grad_deg[i];
        }
    }
    out
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending, eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `U diag(λ) Uᵀ` restricted to the eigen-indices `start..`.
    pub fn partial_reconstruction(&self, start: usize) -> Array2<f64> {
        self.range_reconstruction(start, self.len())
    }

    /// `U diag(λ) Uᵀ` restricted to the eigen-indices `start..end`.
    pub fn range_reconstruction(&self, start: usize, end: usize) -> Array2<f64> {
        let n = self.eigenvectors.nrows();
        let end = end.min(self.len());
        if start >= end {
            return Array2::zeros((n, n));
        }
        let u = self.eigenvectors.slice(ndarray::s![.., start..end]);
        let mut scaled = u.to_owned();
        for (mut col, &lam) in scaled
            .axis_iter_mut(Axis(1))
            .zip(self.eigenvalues.slice(ndarray::s![start..end]).iter())
        {
            col.mapv_inplace(|v| v * lam);
        }
        crate::linalg::matmul(scaled.view(), u.t())
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.partial_reconstruction(0)
    }
}

/// Full dense eigendecomposition with the sign convention that the largest-magnitude
/// component of every eigenvector is positive.
pub fn spectral_decompose(matrix: ArrayView2<f64>, cap: usize) -> Result<SpectralDecomposition> {
    let n = linalg::ensure_symmetric(matrix, 1e-8, "matrix")?;
    if n > cap {
        return Err(Error::Capacity { n, cap });
    }
    let (eigenvalues, mut eigenvectors) = linalg::symmetric_eigen(matrix)?;
    linalg::fix_column_signs(&mut eigenvectors);
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Degree distributions `(a, b)` used as transport marginals: row sums normalized to
/// one, with zero-degree nodes floored at [`DEGREE_FLOOR`] before normalization.
pub fn degree_marginals(adjacency: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mut deg = adjacency.sum_axis(Axis(1));
    deg.mapv_inplace(|d| if d > 0.0 { d } else { DEGREE_FLOOR });
    let total = deg.sum();
    let a = deg.mapv(|d| d / total);
    (a.clone(), a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn path3() -> Array2<f64> {
        array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
    }

    fn k3() -> Array2<f64> {
        array![[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]
    }

    #[test]
    fn laplacian_single_edge() {
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        let l = normalized_laplacian(a.view()).unwrap();
        assert_eq!(l, array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn laplacian_edgeless_is_identity() {
        let a = Array2::<f64>::zeros((3, 3));
        assert_eq!(normalized_laplacian(a.view()).unwrap(), Array2::<f64>::eye(3));
    }

    #[test]
    fn laplacian_triangle_spectrum() {
        let l = normalized_laplacian(k3().view()).unwrap();
        let expected = Array2::<f64>::eye(3) - k3() / 2.0;
        assert_abs_diff_eq!(l, expected, epsilon = 1e-15);
        let dec = spectral_decompose(l.view(), DEFAULT_EIGEN_CAP).unwrap();
        assert_abs_diff_eq!(dec.eigenvalues, array![0.0, 1.5, 1.5], epsilon = 1e-12);
    }

    #[test]
    fn laplacian_rejects_asymmetric() {
        let a = array![[0.0, 1.0], [0.0, 0.0]];
        assert!(matches!(normalized_laplacian(a.view()), Err(Error::Structural(_))));
        assert!(matches!(gcn_normalize(a.view()), Err(Error::Structural(_))));
    }

    #[test]
    fn gcn_normalize_examples() {
        let a = Array2::<f64>::zeros((2, 2));
        assert_eq!(gcn_normalize(a.view()).unwrap(), Array2::<f64>::eye(2));
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        assert_abs_diff_eq!(
            gcn_normalize(a.view()).unwrap(),
            array![[0.5, 0.5], [0.5, 0.5]],
            epsilon = 1e-15
        );
    }

    #[test]
    fn gcn_normalize_path3_by_degree_formula() {
        // Degrees of A + I are (2, 3, 2).
        let p = gcn_normalize(path3().view()).unwrap();
        let d = [2.0f64, 3.0, 2.0];
        let a_tilde = path3() + Array2::<f64>::eye(3);
        for i in 0..3 {
            for j in 0..3 {
                let hand = a_tilde[[i, j]] / (d[i] * d[j]).sqrt();
                assert_abs_diff_eq!(p[[i, j]], hand, epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(p[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[[1, 1]], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[[0, 1]], 1.0 / 6.0f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn gcn_normalize_backward_matches_finite_difference() {
        let a = array![
            [0.0, 0.3, 0.7, 0.0],
            [0.3, 0.0, 0.2, 0.9],
            [0.7, 0.2, 0.0, 0.4],
            [0.0, 0.9, 0.4, 0.0]
        ];
        let weights = array![
            [0.2, -1.0, 0.5, 0.3],
            [0.1, 0.4, -0.7, 0.8],
            [-0.6, 0.2, 0.9, -0.1],
            [0.3, 0.3, -0.2, 0.5]
        ];
        let objective = |m: &Array2<f64>| -> f64 {
            let p = gcn_normalize_unchecked(m.view(), 4);
            linalg::inner(p.view(), weights.view())
        };
        let p = gcn_normalize_unchecked(a.view(), 4);
        let grad = gcn_normalize_backward(a.view(), p.view(), weights.view());
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..4 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[[i, j]] += h;
                am[[i, j]] -= h;
                let fd = (objective(&ap) - objective(&am)) / (2.0 * h);
                assert_abs_diff_eq!(fd, grad[[i, j]], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn connected_graph_nullspace_is_sqrt_degree() {
        let a = path3();
        let l = normalized_laplacian(a.view()).unwrap();
        let dec = spectral_decompose(l.view(), DEFAULT_EIGEN_CAP).unwrap();
        assert_abs_diff_eq!(dec.eigenvalues[0], 0.0, epsilon = 1e-12);
        let deg = a.sum_axis(Axis(1)).mapv(f64::sqrt);
        let expected = &deg / deg.dot(&deg).sqrt();
        let u0 = dec.eigenvectors.column(0);
        assert_abs_diff_eq!(u0.to_owned(), expected, epsilon = 1e-12);
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let dec = spectral_decompose(Array2::<f64>::eye(4).view(), DEFAULT_EIGEN_CAP).unwrap();
        assert_abs_diff_eq!(dec.eigenvalues, Array1::from_elem(4, 1.0), epsilon = 1e-14);
    }

    #[test]
    fn eigen_cap_is_enforced() {
        let err = spectral_decompose(Array2::<f64>::eye(5).view(), 4).unwrap_err();
        assert!(matches!(err, Error::Capacity { n: 5, cap: 4 }));
    }

    #[test]
    fn marginals_examples() {
        let (a, b) = degree_marginals(k3().view());
        assert_abs_diff_eq!(a, Array1::from_elem(3, 1.0 / 3.0), epsilon = 1e-15);
        assert_eq!(a, b);

        let mut star = Array2::<f64>::zeros((4, 4));
        for leaf in 1..4 {
            star[[0, leaf]] = 1.0;
            star[[leaf, 0]] = 1.0;
        }
        let (a, _) = degree_marginals(star.view());
        assert_abs_diff_eq!(a, array![3.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0], epsilon = 1e-15);

        let (a, _) = degree_marginals(Array2::<f64>::zeros((5, 5)).view());
        assert_abs_diff_eq!(a, Array1::from_elem(5, 0.2), epsilon = 1e-15);
    }

    #[test]
    fn graph_validation() {
        let feats = Array2::<f64>::zeros((3, 2));
        let splits = Splits {
            train: vec![0],
            val: vec![1],
            test: vec![2],
        };
        let e = |s, d| Edge { src: s, dst: d, weight: 1.0 };
        let g = Graph::new(feats.clone(), vec![0, 1, 0], 2, vec![e(2, 0), e(1, 0)], splits.clone())
            .unwrap();
        assert_eq!(g.edges()[0], e(0, 1));
        assert_eq!(g.edges()[1], e(0, 2));
        assert!(Graph::new(feats.clone(), vec![0, 0, 0], 2, vec![], splits.clone()).is_err());
        assert!(Graph::new(feats.clone(), vec![0, 1, 0], 2, vec![e(1, 1)], splits.clone()).is_err());
        assert!(Graph::new(feats.clone(), vec![0, 1, 0], 2, vec![e(0, 1), e(1, 0)], splits.clone())
            .is_err());
        let overlapping = Splits {
            train: vec![0],
            val: vec![0],
            test: vec![],
        };
        assert!(Graph::new(feats, vec![0, 1, 0], 2, vec![], overlapping).is_err());
    }

    #[test]
    fn allocation_floor_and_rounding() {
        assert_eq!(proportional_allocation(&[20; 7], 35).unwrap(), vec![5; 7]);
        assert_eq!(proportional_allocation(&[100, 1, 1], 3).unwrap(), vec![1, 1, 1]);
        let a = proportional_allocation(&[5, 3, 2], 7).unwrap();
        assert_eq!(a.iter().sum::<usize>(), 7);
        assert_eq!(a, vec![4, 2, 1]);
        assert!(proportional_allocation(&[1, 1, 1], 2).is_err());
    }
}
