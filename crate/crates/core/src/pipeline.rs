//! End-to-end condensation run: intervention, causal encoder, spectral contrast
//! and gradient matching, combined as `L = L_causal + δ·L_InfoNCE + η·L_cond`.
//!
//! Gradient routing per epoch:
//! - `L_causal` updates the encoder only;
//! - `L_InfoNCE` updates the encoder and the synthetic graph;
//! - `L_cond` updates the synthetic graph only;
//! - the relay is trained on the synthetic graph only.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::causal::{self, CausalWeights, EmbeddingPair};
use crate::condenser::{
    self, logits_grad_from_prop, MatchState, MatchTarget, OuterStep, SynGrad, SynOptimizer,
    SyntheticGraph,
};
use crate::contrast;
use crate::error::{Error, Result};
use crate::graph::{self, Graph, DEFAULT_EIGEN_CAP};
use crate::linalg;
use crate::intervention::{self, SinkhornSettings};
use crate::optim::{Optimizer, OptimizerKind};
use crate::relay::{self, relu_mask, RelayModel};

/// Every hyperparameter of a run. Unknown JSON keys are rejected; missing keys
/// take the defaults listed in the README.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TgccConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub delta: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    pub theta_lr: f64,
    pub kappas: Vec<f64>,
    pub num_negatives: usize,
    pub temperature: f64,
    pub ratio: f64,
    /// Outer steps per relay initialization (T).
    pub horizon: usize,
    pub inner_steps: usize,
    /// Number of relay initializations (R); the run has `R·T` epochs.
    pub relay_inits: usize,
    pub hidden: usize,
    pub optimizer: OptimizerKind,
    pub lr_x: f64,
    pub lr_adj: f64,
    pub lr_relay: f64,
    pub lr_encoder: f64,
    /// Epochs between intervention and negative refreshes.
    pub refresh_every: usize,
    pub eigen_cap: usize,
    /// Use the current relay's first layer as the encoder (no encoder training).
    pub shared_encoder: bool,
    pub seed: u64,
    pub eval: EvalSettings,
}

/// Evaluation protocol settings shared by the bench module and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// Train on the weighted `A_s`; otherwise threshold at `threshold`.
    pub weighted: bool,
    pub threshold: f64,
    pub seeds: Vec<u64>,
    pub link_test_fraction: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            hidden: 64,
            steps: 600,
            lr: 0.01,
            optimizer: OptimizerKind::Adam,
            weighted: true,
            threshold: condenser::EXPORT_THRESHOLD,
            seeds: vec![0, 1, 2, 3, 4],
            link_test_fraction: 0.1,
        }
    }
}

impl Default for TgccConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.1,
            lambda: 0.5,
            delta: 0.5,
            eta: 1.0,
            epsilon: 1.0,
            rho: 0.1,
            sinkhorn_iters: 500,
            sinkhorn_tol: 1e-6,
            theta_lr: 0.1,
            kappas: vec![0.1, 0.2, 0.3],
            num_negatives: 3,
            temperature: 0.5,
            ratio: 0.026,
            horizon: 50,
            inner_steps: 10,
            relay_inits: 5,
            hidden: 64,
            optimizer: OptimizerKind::Adam,
            lr_x: 0.01,
            lr_adj: 0.01,
            lr_relay: 0.01,
            lr_encoder: 0.01,
            refresh_every: 1,
            eigen_cap: DEFAULT_EIGEN_CAP,
            shared_encoder: false,
            seed: 0,
            eval: EvalSettings::default(),
        }
    }
}

impl TgccConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("delta", self.delta),
            ("eta", self.eta),
            ("rho", self.rho),
            ("theta_lr", self.theta_lr),
            ("lr_x", self.lr_x),
            ("lr_adj", self.lr_adj),
            ("lr_relay", self.lr_relay),
            ("lr_encoder", self.lr_encoder),
        ];
        for (name, v) in weights {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Argument(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Argument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Argument(format!("ratio must be in (0, 1), got {}", self.ratio)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Argument("temperature must be > 0".into()));
        }
        for (name, v) in [
            ("horizon", self.horizon),
            ("inner_steps", self.inner_steps),
            ("relay_inits", self.relay_inits),
            ("hidden", self.hidden),
            ("refresh_every", self.refresh_every),
            ("num_negatives", self.num_negatives),
        ] {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be at least 1")));
            }
        }
        if self.num_negatives > self.kappas.len() {
            return Err(Error::Argument(format!(
                "num_negatives = {} but only {} kappa values are configured",
                self.num_negatives,
                self.kappas.len()
            )));
        }
        if self.kappas.iter().any(|k| !(0.0..=1.0).contains(k)) {
            return Err(Error::Argument("kappa values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.horizon * self.relay_inits
    }

    /// Canonical JSON form, also used as the run's config snapshot.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TgccConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn causal_weights(&self) -> CausalWeights {
        CausalWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            lambda: self.lambda,
        }
    }

    fn sinkhorn(&self) -> SinkhornSettings {
        SinkhornSettings {
            epsilon: self.epsilon,
            iters: self.sinkhorn_iters,
            tol: self.sinkhorn_tol,
        }
    }
}

/// Independent sub-seed for stream `k` of a run seed.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub causal: f64,
    pub alignment: f64,
    pub std_penalty: f64,
    pub independence: f64,
    pub infonce: f64,
    pub cond: f64,
    pub cond_real: f64,
    pub cond_aug: f64,
    pub total: f64,
}

impl EpochRecord {
    fn check_finite(&self) -> Result<()> {
        let terms = [
            ("L_causal", self.causal),
            ("L_InfoNCE", self.infonce),
            ("L_cond", self.cond),
            ("total", self.total),
        ];
        for (name, v) in terms {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "{name} became non-finite at epoch {}",
                    self.epoch
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub synthetic: SyntheticGraph,
    pub encoder: RelayModel,
    pub trace: Vec<EpochRecord>,
    pub config_snapshot: String,
    pub seed: u64,
    /// Number of relay updates, all computed from the synthetic graph.
    pub relay_updates: usize,
}

/// Per-epoch loss table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub delta: f64,
    pub eta: f64,
    pub rows: Vec<EpochRecord>,
}

impl LossReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tcausal\tinfonce\tcond\ttotal\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\n",
                r.epoch, r.causal, r.infonce, r.cond, r.total
            ));
        }
        out
    }
}

pub fn loss_report(artifacts: &RunArtifacts) -> Result<LossReport> {
    let cfg = TgccConfig::from_json(&artifacts.config_snapshot)?;
    Ok(LossReport {
        delta: cfg.delta,
        eta: cfg.eta,
        rows: artifacts.trace.clone(),
    })
}

/// Intervened graph, its matching target and the propagated features of the
/// negatives, rebuilt every `refresh_every` epochs.
struct Refresh {
    aug: MatchTarget,
    neg_q: Vec<Array2<f64>>,
}

struct Encoder {
    model: RelayModel,
    opt: Optimizer,
}

/// Gradient of a readout-space loss with respect to `W1`, given `q = P·X`:
/// the readout is `mean_rows(relu(q·W1))`.
fn readout_grad_w1(q: ArrayView2<f64>, u: ArrayView2<f64>, g_h: &Array1<f64>) -> Array2<f64> {
    let n = q.nrows() as f64;
    let g = Array2::from_shape_fn(u.raw_dim(), |(i, k)| if u[[i, k]] > 0.0 { g_h[k] / n } else { 0.0 });
    q.t().dot(&g)
}

/// Runs the full condensation with an observer called after every epoch.
pub fn run_condense_with(
    g: &Graph,
    cfg: &TgccConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let seed = cfg.seed;
    let n = g.num_nodes();
    if n > cfg.eigen_cap {
        return Err(Error::Capacity { n, cap: cfg.eigen_cap });
    }
    let (d, c) = (g.feature_dim(), g.num_classes());
    let adj = g.dense_adjacency();
    let lap = graph::normalized_laplacian(adj.view())?;
    let real = MatchTarget::with_adjacency(g, adj.view())?;
    let weights = cfg.causal_weights();
    let settings = cfg.sinkhorn();
    let kappas = &cfg.kappas[..cfg.num_negatives];

    let mut syn = condenser::init_synthetic(g, cfg.ratio, sub_seed(seed, 1))?;
    let mut syn_opt = SynOptimizer::new(cfg.optimizer, cfg.lr_x, cfg.lr_adj);
    let mut encoder = Encoder {
        model: relay::init_model(d, cfg.hidden, c, sub_seed(seed, 2))?,
        opt: Optimizer::new(cfg.optimizer, cfg.lr_encoder),
    };
    let mut theta = intervention::init_theta(n, sub_seed(seed, 3));
    let mut last_delta_plus: Option<Array2<f64>> = None;
    let mut refresh: Option<Refresh> = None;
    let mut state: Option<MatchState> = None;
    let mut trace = Vec::with_capacity(cfg.epochs());
    let mut relay_updates = 0;

    for epoch in 0..cfg.epochs() {
        if epoch % cfg.horizon == 0 {
            let block = (epoch / cfg.horizon) as u64;
            let relay = relay::init_model(d, cfg.hidden, c, sub_seed(seed, 100 + block))?;
            state = Some(MatchState::new(relay, cfg.horizon)?);
        }
        let state = state.as_mut().expect("initialized at block start");

        // (1) intervention refresh
        if epoch % cfg.refresh_every == 0 {
            if let Some(dp) = &last_delta_plus {
                theta = intervention::update_theta(theta.view(), lap.view(), dp.view(), cfg.theta_lr)?;
            }
            let plan = intervention::plan(adj.view(), lap.view(), theta.clone(), settings)?;
            let scale = intervention::perturbation_scale(adj.view(), cfg.rho);
            let v = intervention::intervene(adj.view(), &plan, scale)?;
            last_delta_plus = Some(plan.delta_plus);
            let aug = MatchTarget::with_adjacency(g, v.view())?;
            let negatives = contrast::build_negatives(v.view(), kappas, cfg.eigen_cap)?;
            let mut neg_q = Vec::with_capacity(negatives.len());
            for neg in negatives {
                let p = graph::gcn_normalize(neg.adjacency_neg.view())?;
                neg_q.push(linalg::matmul(p.view(), g.features().view()));
            }
            refresh = Some(Refresh { aug, neg_q });
        }
        let fresh = refresh.as_ref().expect("refreshed on the first epoch");

        let enc_w1 = if cfg.shared_encoder {
            state.relay.w1.clone()
        } else {
            encoder.model.w1.clone()
        };

        // (2) causal loss on the encoder
        let u_a = real.q.dot(&enc_w1);
        let u_v = fresh.aug.q.dot(&enc_w1);
        let pair = EmbeddingPair::new(u_a.mapv(|x| x.max(0.0)), u_v.mapv(|x| x.max(0.0)))?;
        let (causal_terms, g_za, g_zv) = causal::causal_loss_grad(&pair, &weights);
        let mut enc_grad = real.q.t().dot(&relu_mask(g_za, u_a.view()));
        enc_grad += &fresh.aug.q.t().dot(&relu_mask(g_zv, u_v.view()));

        // (3) InfoNCE between the synthetic readout and the V readout
        let p_s = syn.propagation();
        let q_s = p_s.dot(&syn.xs);
        let u_s = q_s.dot(&enc_w1);
        let h_s = contrast::readout(u_s.mapv(|x| x.max(0.0)).view())?;
        let h_v = contrast::readout(pair.zv.view())?;
        let mut u_negs = Vec::with_capacity(fresh.neg_q.len());
        let mut h_negs = Vec::with_capacity(fresh.neg_q.len());
        for q in &fresh.neg_q {
            let u = q.dot(&enc_w1);
            h_negs.push(contrast::readout(u.mapv(|x| x.max(0.0)).view())?);
            u_negs.push(u);
        }
        let nce = contrast::infonce_grad(h_s.view(), h_v.view(), &h_negs, cfg.temperature)?;
        enc_grad.scaled_add(cfg.delta, &readout_grad_w1(q_s.view(), u_s.view(), &nce.anchor));
        enc_grad.scaled_add(cfg.delta, &readout_grad_w1(fresh.aug.q.view(), u_v.view(), &nce.positive));
        for ((q, u), gneg) in fresh.neg_q.iter().zip(&u_negs).zip(&nce.negatives) {
            enc_grad.scaled_add(cfg.delta, &readout_grad_w1(q.view(), u.view(), gneg));
        }

        // InfoNCE gradient with respect to the synthetic graph.
        let m = syn.num_nodes() as f64;
        let g_us = Array2::from_shape_fn(u_s.raw_dim(), |(i, k)| {
            if u_s[[i, k]] > 0.0 {
                nce.anchor[k] / m
            } else {
                0.0
            }
        });
        let g_qs = g_us.dot(&enc_w1.t());
        let g_ps = g_qs.dot(&syn.xs.t());
        let nce_syn = SynGrad {
            xs: p_s.t().dot(&g_qs),
            logits: logits_grad_from_prop(&syn, g_ps.view()),
        };

        // (4) gradient matching step on the synthetic graph, (5) relay inner steps
        let cond = condenser::outer_step(
            state,
            &real,
            &fresh.aug,
            &mut syn,
            &mut syn_opt,
            Some(&nce_syn.scaled(cfg.delta)),
            OuterStep {
                cond_weight: cfg.eta,
                lr_relay: cfg.lr_relay,
                inner_steps: cfg.inner_steps,
            },
        )?;
        relay_updates += cfg.inner_steps;

        if !cfg.shared_encoder {
            if enc_grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("encoder gradient became non-finite at epoch {epoch}")));
            }
            encoder.opt.step(&mut [&mut encoder.model.w1], &[&enc_grad]);
        }

        let record = EpochRecord {
            epoch,
            causal: causal_terms.total,
            alignment: causal_terms.alignment,
            std_penalty: causal_terms.std_penalty,
            independence: causal_terms.independence,
            infonce: nce.loss,
            cond: cond.loss,
            cond_real: cond.real_term,
            cond_aug: cond.aug_term,
            total: causal_terms.total + cfg.delta * nce.loss + cfg.eta * cond.loss,
        };
        record.check_finite()?;
        observer(&record);
        trace.push(record);
    }

    let encoder_model = if cfg.shared_encoder {
        state.map(|s| s.relay).unwrap_or(encoder.model)
    } else {
        encoder.model
    };
    Ok(RunArtifacts {
        synthetic: syn,
        encoder: encoder_model,
        trace,
        config_snapshot: cfg.to_json(),
        seed,
        relay_updates,
    })
}

pub fn run_condense(g: &Graph, cfg: &TgccConfig) -> Result<RunArtifacts> {
    run_condense_with(g, cfg, |_| {})
}

/// The intervened adjacency `V` of the first epoch of a run with `cfg`.
pub fn intervened_adjacency(g: &Graph, cfg: &TgccConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = g.num_nodes();
    if n > cfg.eigen_cap {
        return Err(Error::Capacity { n, cap: cfg.eigen_cap });
    }
    let adj = g.dense_adjacency();
    let lap = graph::normalized_laplacian(adj.view())?;
    let theta = intervention::init_theta(n, sub_seed(cfg.seed, 3));
    let plan = intervention::plan(adj.view(), lap.view(), theta, cfg.sinkhorn())?;
    intervention::intervene(adj.view(), &plan, intervention::perturbation_scale(adj.view(), cfg.rho))
}
