//! Entropy-regularized edge intervention.
//!
//! `Δ+` (edges to add) maximizes `J = ⟨ΘL, Δ⟩² + ε·H(Δ)` under degree marginals.
//! The squared term is linearized at the current iterate, which turns every
//! round into a plain Sinkhorn problem with kernel `exp(M_t/ε)`,
//! `M_t = 2⟨ΘL, Δ_t⟩·ΘL`. Rounds stop when `J` moves by less than `tol`.
//!
//! `Δ−` (edges to delete) runs the same rounds with the reward negated, on a
//! kernel restricted to the support of `A` and weighted by `A`, so that `Θ = 0`
//! yields `A / ΣA`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Upper bound on linearize-then-scale rounds.
pub const MAX_ROUNDS: usize = 50;
/// Magnitude of the uniform noise used to initialize Θ.
pub const THETA_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornSettings {
    pub epsilon: f64,
    pub iters: usize,
    pub tol: f64,
}

impl Default for SinkhornSettings {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            iters: 500,
            tol: 1e-6,
        }
    }
}

impl SinkhornSettings {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Argument(format!(
                "entropy weight must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Argument(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InterventionPlan {
    pub delta_plus: Array2<f64>,
    pub delta_minus: Array2<f64>,
    pub theta: Array2<f64>,
    pub settings: SinkhornSettings,
}

impl InterventionPlan {
    pub fn zero(n: usize) -> Self {
        Self {
            delta_plus: Array2::zeros((n, n)),
            delta_minus: Array2::zeros((n, n)),
            theta: Array2::zeros((n, n)),
            settings: SinkhornSettings::default(),
        }
    }
}

pub fn init_theta(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, n), |_| rng.random_range(-THETA_INIT_SCALE..THETA_INIT_SCALE))
}

/// Entropy `H(Δ) = −Σ Δ (log Δ − 1)` with `0 log 0 = 0`.
pub fn entropy(delta: ArrayView2<f64>) -> f64 {
    delta
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * (v.ln() - 1.0))
        .sum()
}

/// `J = ⟨ΘL, Δ⟩² + ε·H(Δ)`.
pub fn objective(theta_l: ArrayView2<f64>, delta: ArrayView2<f64>, epsilon: f64) -> f64 {
    let c = linalg::inner(theta_l, delta);
    c * c + epsilon * entropy(delta)
}

/// Outcome of one Sinkhorn scaling run.
#[derive(Debug, Clone)]
pub struct Scaling {
    pub plan: Array2<f64>,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// Sinkhorn scaling of a nonnegative kernel to row sums `a` and column sums `b`.
///
/// Rows or columns with zero target mass get a zero scaling factor.
pub fn sinkhorn(
    kernel: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    iters: usize,
    tol: f64,
) -> Result<Scaling> {
    let n = kernel.nrows();
    let mut u = Array1::<f64>::ones(n);
    let mut v = Array1::<f64>::ones(kernel.ncols());
    let mut err = f64::INFINITY;
    let mut done = 0;
    let safe_div = |target: f64, denom: f64| -> f64 {
        if target == 0.0 {
            0.0
        } else {
            target / denom
        }
    };
    for it in 0..=iters {
        let kv = kernel.dot(&v);
        if it > 0 {
            // Columns are exact after the v-update; measure the row residual.
            err = u
                .iter()
                .zip(kv.iter())
                .zip(a.iter())
                .map(|((ui, s), t)| (ui * s - t).abs())
                .fold(0.0, f64::max);
            if err < tol || it == iters {
                break;
            }
        }
        Zip::from(&mut u).and(&a).and(&kv).for_each(|u, &t, &s| *u = safe_div(t, s));
        let ktu = u.dot(&kernel);
        Zip::from(&mut v).and(&b).and(&ktu).for_each(|v, &t, &s| *v = safe_div(t, s));
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numeric(
                "Sinkhorn scaling overflowed; increase the entropy weight epsilon".into(),
            ));
        }
        done = it + 1;
    }
    let mut plan = kernel.to_owned();
    for (i, mut row) in plan.axis_iter_mut(Axis(0)).enumerate() {
        let ui = u[i];
        Zip::from(&mut row).and(&v).for_each(|p, &vj| *p *= ui * vj);
    }
    if plan.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(
            "Sinkhorn plan is not finite; increase the entropy weight epsilon".into(),
        ));
    }
    if err >= tol {
        log::debug!("sinkhorn stopped after {done} iterations with marginal error {err:.3e}");
    }
    Ok(Scaling {
        plan,
        iterations: done,
        marginal_error: err,
    })
}

/// `exp(sign·M/ε)` stabilized by its maximum over the allowed entries, times `prior`.
fn kernel_from_reward(
    reward: ArrayView2<f64>,
    sign: f64,
    epsilon: f64,
    prior: &dyn Fn(usize, usize) -> f64,
) -> Result<Array2<f64>> {
    let n = reward.nrows();
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if prior(i, j) > 0.0 {
                max = max.max(sign * reward[[i, j]] / epsilon);
            }
        }
    }
    if !max.is_finite() && max != f64::NEG_INFINITY {
        return Err(Error::Numeric(
            "transport reward is not finite; increase the entropy weight epsilon".into(),
        ));
    }
    let kernel = Array2::from_shape_fn((n, n), |(i, j)| {
        let w = prior(i, j);
        if w > 0.0 {
            w * (sign * reward[[i, j]] / epsilon - max).exp()
        } else {
            0.0
        }
    });
    if kernel.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(
            "transport kernel overflowed; increase the entropy weight epsilon".into(),
        ));
    }
    Ok(kernel)
}

fn check_inputs(
    adjacency: ArrayView2<f64>,
    laplacian: ArrayView2<f64>,
    theta: ArrayView2<f64>,
) -> Result<usize> {
    let n = linalg::ensure_square(adjacency, "adjacency")?;
    if laplacian.dim() != (n, n) || theta.dim() != (n, n) {
        return Err(Error::Structural(format!(
            "adjacency {n}x{n}, laplacian {:?} and theta {:?} must agree",
            laplacian.dim(),
            theta.dim()
        )));
    }
    if theta.iter().chain(laplacian.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("theta or laplacian has non-finite entries".into()));
    }
    Ok(n)
}

/// Linearize-then-scale rounds shared by both plans.
fn majorized_transport(
    theta_l: ArrayView2<f64>,
    sign: f64,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    settings: &SinkhornSettings,
    prior: &dyn Fn(usize, usize) -> f64,
) -> Result<Array2<f64>> {
    let zero = Array2::<f64>::zeros(theta_l.raw_dim());
    let kernel = kernel_from_reward(zero.view(), sign, settings.epsilon, prior)?;
    let mut delta = sinkhorn(kernel.view(), a, b, settings.iters, settings.tol)?.plan;
    let score = |d: &Array2<f64>| {
        let c = linalg::inner(theta_l, d.view());
        sign * c * c + settings.epsilon * entropy(d.view())
    };
    let mut j_prev = score(&delta);
    for _ in 0..MAX_ROUNDS {
        let c = linalg::inner(theta_l, delta.view());
        let reward = theta_l.mapv(|v| 2.0 * c * v);
        let kernel = kernel_from_reward(reward.view(), sign, settings.epsilon, prior)?;
        delta = sinkhorn(kernel.view(), a, b, settings.iters, settings.tol)?.plan;
        let j = score(&delta);
        if !j.is_finite() {
            return Err(Error::Numeric(
                "intervention objective is not finite; increase the entropy weight epsilon".into(),
            ));
        }
        if (j - j_prev).abs() < settings.tol {
            break;
        }
        j_prev = j;
    }
    Ok(delta)
}

/// Edge-addition plan `Δ+` with marginals `a`, `b` and a zero diagonal.
pub fn solve_delta_plus(
    adjacency: ArrayView2<f64>,
    laplacian: ArrayView2<f64>,
    theta: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    settings: &SinkhornSettings,
) -> Result<Array2<f64>> {
    settings.validate()?;
    let n = check_inputs(adjacency, laplacian, theta)?;
    if a.len() != n || b.len() != n {
        return Err(Error::Structural("marginal length does not match adjacency".into()));
    }
    for (name, m) in [("a", a), ("b", b)] {
        let s = m.sum();
        if m.iter().any(|&v| v < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("marginal {name} is not a probability vector")));
        }
    }
    let theta_l = linalg::matmul(theta, laplacian);
    majorized_transport(theta_l.view(), 1.0, a, b, settings, &|i, j| {
        if i == j {
            0.0
        } else {
            1.0
        }
    })
}

/// Edge-deletion plan `Δ−`, supported on the edges of `A` and capped entrywise by `A`.
pub fn solve_delta_minus(
    adjacency: ArrayView2<f64>,
    laplacian: ArrayView2<f64>,
    theta: ArrayView2<f64>,
    settings: &SinkhornSettings,
) -> Result<Array2<f64>> {
    settings.validate()?;
    let n = check_inputs(adjacency, laplacian, theta)?;
    let total: f64 = adjacency.sum();
    if total <= 0.0 {
        return Ok(Array2::zeros((n, n)));
    }
    let deg = adjacency.sum_axis(Axis(1)) / total;
    let deg_t = adjacency.sum_axis(Axis(0)) / total;
    let theta_l = linalg::matmul(theta, laplacian);
    let prior = |i: usize, j: usize| if i == j { 0.0 } else { adjacency[[i, j]].max(0.0) };
    let mut delta = majorized_transport(theta_l.view(), -1.0, deg.view(), deg_t.view(), settings, &prior)?;
    Zip::from(&mut delta)
        .and(&adjacency)
        .for_each(|d, &a| *d = if a > 0.0 { d.min(a) } else { 0.0 });
    Ok(delta)
}

/// Budget `ρ · ΣA` that converts unit-mass plans into adjacency edits.
pub fn perturbation_scale(adjacency: ArrayView2<f64>, rho: f64) -> f64 {
    rho * adjacency.sum()
}

/// `V = clip(A + s·Δ+ − s·Δ−, 0, 1)`, symmetrized, zero diagonal.
pub fn intervene(adjacency: ArrayView2<f64>, plan: &InterventionPlan, scale: f64) -> Result<Array2<f64>> {
    let n = linalg::ensure_square(adjacency, "adjacency")?;
    if plan.delta_plus.dim() != (n, n) || plan.delta_minus.dim() != (n, n) {
        return Err(Error::Structural("plan shape does not match adjacency".into()));
    }
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::Argument(format!("intervention scale must be >= 0, got {scale}")));
    }
    let raw = intervene_unclipped(adjacency, plan, scale);
    let mut v = raw.mapv(|x| x.clamp(0.0, 1.0));
    let vt = v.t().to_owned();
    v = (&v + &vt) * 0.5;
    for i in 0..n {
        v[[i, i]] = 0.0;
    }
    Ok(v)
}

/// `A + s·Δ+ − s·Δ−` before clipping and symmetrization.
pub fn intervene_unclipped(adjacency: ArrayView2<f64>, plan: &InterventionPlan, scale: f64) -> Array2<f64> {
    let mut out = adjacency.to_owned();
    Zip::from(&mut out)
        .and(&plan.delta_plus)
        .and(&plan.delta_minus)
        .for_each(|o, &p, &m| *o += scale * (p - m));
    out
}

/// Ascent step on `⟨ΘL, Δ⟩²`: `Θ + lr·2⟨ΘL, Δ⟩·Δ Lᵀ`, clipped to `[−1, 1]`.
pub fn update_theta(
    theta: ArrayView2<f64>,
    laplacian: ArrayView2<f64>,
    delta: ArrayView2<f64>,
    lr: f64,
) -> Result<Array2<f64>> {
    let n = linalg::ensure_square(theta, "theta")?;
    if laplacian.dim() != (n, n) || delta.dim() != (n, n) {
        return Err(Error::Structural("theta, laplacian and delta must agree in shape".into()));
    }
    let c = linalg::inner(linalg::matmul(theta, laplacian).view(), delta);
    let grad = linalg::matmul(delta, laplacian.t()) * (2.0 * c);
    Ok((&theta + &(grad * lr)).mapv(|v| v.clamp(-1.0, 1.0)))
}

/// Builds both plans for `A` at the current Θ.
pub fn plan(
    adjacency: ArrayView2<f64>,
    laplacian: ArrayView2<f64>,
    theta: Array2<f64>,
    settings: SinkhornSettings,
) -> Result<InterventionPlan> {
    let (a, b) = crate::graph::degree_marginals(adjacency);
    let delta_plus = solve_delta_plus(adjacency, laplacian, theta.view(), a.view(), b.view(), &settings)?;
    let delta_minus = solve_delta_minus(adjacency, laplacian, theta.view(), &settings)?;
    Ok(InterventionPlan {
        delta_plus,
        delta_minus,
        theta,
        settings,
    })
}
