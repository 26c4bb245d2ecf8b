//! Probabilistic condensation with a lightweight policy-gradient estimator.
//!
//! Each pool pair `(u, i)` carries a selection probability `s`. One outer
//! iteration:
//!
//! 1. draws `M ~ Bernoulli(S)`;
//! 2. takes one SGD step from `θ₀` on the BPR loss of the selected pairs,
//!    normalised by the budget `r·|D|` (not by the realised count);
//! 3. evaluates the BPR loss `ℓ` of the stepped model on a batch of the
//!    original training pairs;
//! 4. moves `S` along `−η_t · ℓ · ∇_S ln p(M | S)` and projects back onto
//!    `{0 ≤ s ≤ 1, Σs ≤ r·|D|}`.
//!
//! Only forward losses are needed for the probability update, so the cost per
//! iteration is one sparse gradient step plus one batched loss evaluation.

mod mask;
mod monitor;
pub mod projection;

use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

pub use mask::{
    finalize_dataset, init_probabilities, log_prob, log_prob_grad, sample_mask, score_function, FinalizeMode,
    InitScheme, ProbabilityMask, SampledMask, BUDGET_TOL,
};
pub use monitor::{ConvergenceMonitor, MonitorRecord};
pub use projection::project_feasible;

use crate::augment::DataPool;
use crate::data::InteractionSet;
use crate::error::{Error, Result};
use crate::model::{self, Architecture, EmbeddingModel, TrainConfig, Triple};
use crate::rng::{self, Rng};

/// What `baseline_subtraction` subtracts from each draw's loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Exponential moving average of the per-iteration mean loss.
    MovingAverage,
    /// Mean loss of the other draws of the same iteration.
    LeaveOneOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CondenseConfig {
    /// Condensation ratio `r = |D_s| / |D|`.
    pub ratio: f64,
    pub outer_epochs: usize,
    /// Initial outer learning rate `η`.
    pub outer_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub lr_floor: f64,
    pub inner_lr: f64,
    pub val_batch_size: usize,
    /// `ε`: probabilities are clamped to `[ε, 1−ε]` inside the score function.
    pub prob_clamp: f64,
    pub init_scheme: InitScheme,
    /// Subtract a baseline from `ℓ` before forming the estimator.
    pub baseline_subtraction: bool,
    pub baseline_kind: BaselineKind,
    /// Weight of the history in the moving-average baseline.
    pub baseline_decay: f64,
    /// Masks drawn (and averaged over) per outer iteration. All draws of one
    /// iteration share `θ₀`, the outer batch and the negative of each pair.
    pub samples_per_step: usize,
    /// Carry the stepped inner model across iterations instead of drawing a
    /// fresh `θ₀` each time.
    pub warm_start: bool,
    pub finalize: FinalizeMode,
    pub seed: u64,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        Self {
            ratio: 0.25,
            outer_epochs: 400,
            outer_lr: 0.1,
            lr_decay_factor: 10.0,
            lr_decay_every: 100,
            lr_floor: 1e-4,
            inner_lr: 1.0,
            val_batch_size: 4096,
            prob_clamp: 1e-4,
            init_scheme: InitScheme::UniformBudget,
            baseline_subtraction: false,
            baseline_kind: BaselineKind::MovingAverage,
            baseline_decay: 0.9,
            samples_per_step: 1,
            warm_start: false,
            finalize: FinalizeMode::Topk,
            seed: 0,
        }
    }
}

impl CondenseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return bad(format!("ratio must lie in (0, 1], got {}", self.ratio));
        }
        if !(self.outer_lr >= 0.0) || !(self.lr_floor >= 0.0) || self.lr_floor > self.outer_lr {
            return bad(format!(
                "need 0 <= lr_floor <= outer_lr, got {} / {}",
                self.lr_floor, self.outer_lr
            ));
        }
        if !(self.lr_decay_factor >= 1.0) || self.lr_decay_every == 0 {
            return bad("lr_decay_factor must be >= 1 and lr_decay_every positive".into());
        }
        if !(self.inner_lr >= 0.0) {
            return bad(format!("inner_lr must be non-negative, got {}", self.inner_lr));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return bad(format!("prob_clamp must lie in (0, 0.5), got {}", self.prob_clamp));
        }
        if self.val_batch_size == 0 || self.samples_per_step == 0 {
            return bad("val_batch_size and samples_per_step must be positive".into());
        }
        if self.baseline_subtraction && self.baseline_kind == BaselineKind::LeaveOneOut && self.samples_per_step < 2 {
            return bad("the leave-one-out baseline needs samples_per_step >= 2".into());
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad(format!("baseline_decay must lie in [0, 1), got {}", self.baseline_decay));
        }
        Ok(())
    }

    /// `η_t = max(floor, η / factor^⌊t / every⌋)`.
    pub fn learning_rate_at(&self, t: usize) -> f64 {
        let decays = (t / self.lr_decay_every) as i32;
        (self.outer_lr / self.lr_decay_factor.powi(decays)).max(self.lr_floor)
    }

    /// `r · |D|`.
    pub fn budget(&self, n_train: usize) -> f64 {
        self.ratio * n_train as f64
    }
}

/// BPR triples for the selected pool pairs, one sampled negative each
/// (negatives avoid every pool pair of the user).
pub fn selected_triples(sample: &SampledMask, pool: &DataPool, rng: &mut Rng) -> Result<Vec<Triple>> {
    let selected: Vec<usize> = sample.selected().collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    model::build_triples(&pool.pool, &pool.pool, &selected, 1, rng)
}

/// `L̂(θ; M) = (1 / (r|D|)) Σ_{m=1} ℓ_BPR`, including the backbone's L2 term
/// per selected triple.
pub fn masked_inner_loss(
    model: &EmbeddingModel,
    sample: &SampledMask,
    pool: &DataPool,
    budget: f64,
    l2_reg: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let triples = selected_triples(sample, pool, rng)?;
    model::weighted_bpr(model, &triples, 1.0 / budget, l2_reg)
}

/// `θ₁ = θ₀ − inner_lr · ∇_θ L̂(θ₀; M)`. `θ₀` is left untouched.
pub fn inner_one_step(
    model0: &EmbeddingModel,
    sample: &SampledMask,
    pool: &DataPool,
    budget: f64,
    inner_lr: f64,
    l2_reg: f64,
    rng: &mut Rng,
) -> Result<EmbeddingModel> {
    let triples = selected_triples(sample, pool, rng)?;
    step_on_triples(model0, &triples, budget, inner_lr, l2_reg)
}

fn step_on_triples(
    model0: &EmbeddingModel,
    triples: &[Triple],
    budget: f64,
    inner_lr: f64,
    l2_reg: f64,
) -> Result<EmbeddingModel> {
    let (_, grad) = model::weighted_bpr_grad(model0, triples, 1.0 / budget, l2_reg)?;
    if !grad.is_finite() {
        return Err(Error::Divergence {
            stage: "inner step",
            iteration: 0,
            detail: "non-finite gradient".into(),
        });
    }
    let mut model1 = model0.clone();
    model1.apply_gradient(&grad, inner_lr);
    Ok(model1)
}

/// Mean BPR loss (no regulariser) of `model` on `min(batch, |D|)` training
/// pairs drawn without replacement, each with one sampled negative. The whole
/// set is used, in order, when `batch ≥ |D|`.
pub fn outer_loss(model: &EmbeddingModel, train: &InteractionSet, val_batch_size: usize, rng: &mut Rng) -> Result<f64> {
    let triples = outer_triples(train, val_batch_size, rng)?;
    model::bpr_loss(model, &triples, 0.0)
}

fn outer_triples(train: &InteractionSet, val_batch_size: usize, rng: &mut Rng) -> Result<Vec<Triple>> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("outer-loss training set".into()));
    }
    let batch: Vec<usize> = if val_batch_size >= train.len() {
        (0..train.len()).collect()
    } else {
        index::sample(rng, train.len(), val_batch_size).into_vec()
    };
    model::build_triples(train, train, &batch, 1, rng)
}

/// `Σ_k (ℓ_k − b) ∇ ln p(M_k | S) / K`.
pub fn policy_gradient(probs: &[f64], draws: &[(SampledMask, f64)], baseline: f64, clamp: f64) -> Vec<f64> {
    let baselines = vec![baseline; draws.len()];
    policy_gradient_with(probs, draws, &baselines, clamp)
}

/// As [`policy_gradient`] with a separate baseline `b_k` per draw.
pub fn policy_gradient_with(probs: &[f64], draws: &[(SampledMask, f64)], baselines: &[f64], clamp: f64) -> Vec<f64> {
    assert_eq!(draws.len(), baselines.len(), "one baseline per draw");
    let mut g = vec![0.0; probs.len()];
    let scale = 1.0 / draws.len() as f64;
    for ((sample, loss), baseline) in draws.iter().zip(baselines) {
        let weight = (loss - baseline) * scale;
        for (gk, sk) in g.iter_mut().zip(score_function(probs, &sample.bits, clamp)) {
            *gk += weight * sk;
        }
    }
    g
}

/// State carried across outer iterations.
pub struct Lpge<'a> {
    pool: &'a DataPool,
    train: &'a InteractionSet,
    config: &'a CondenseConfig,
    backbone: &'a TrainConfig,
    baseline: Option<f64>,
}

impl<'a> Lpge<'a> {
    pub fn new(
        pool: &'a DataPool,
        train: &'a InteractionSet,
        config: &'a CondenseConfig,
        backbone: &'a TrainConfig,
    ) -> Self {
        Self {
            pool,
            train,
            config,
            backbone,
            baseline: None,
        }
    }

    fn stepped_model(
        &self,
        model0: &EmbeddingModel,
        sample: &SampledMask,
        negatives: &mut [Option<usize>],
        budget: f64,
        rng: &mut Rng,
    ) -> Result<EmbeddingModel> {
        let base = if self.backbone.architecture == Architecture::LightGcn {
            let selected = self.pool.pool.subset(sample.selected());
            model0.clone().with_lightgcn(&selected, self.backbone.n_layers)?
        } else {
            model0.clone()
        };
        if sample.count() == 0 {
            return Ok(base);
        }
        let pool = &self.pool.pool;
        let mut triples = Vec::with_capacity(sample.count());
        for k in sample.selected() {
            let (u, i) = pool.pair(k);
            let neg = match negatives[k] {
                Some(j) => j,
                None => {
                    let j = model::sample_negatives(pool, u, 1, rng)?[0];
                    negatives[k] = Some(j);
                    j
                }
            };
            triples.push(Triple::new(u, i, neg));
        }
        step_on_triples(&base, &triples, budget, self.config.inner_lr, self.backbone.l2_reg)
    }

    /// One outer iteration at index `t`; updates `mask` in place, appends to
    /// `monitor` and returns the stepped inner model of the last draw.
    pub fn step(
        &mut self,
        t: usize,
        mask: &mut ProbabilityMask,
        model0: &EmbeddingModel,
        rng: &mut Rng,
        monitor: &mut ConvergenceMonitor,
    ) -> Result<EmbeddingModel> {
        let diverged = |detail: String| Error::Divergence {
            stage: "lpge",
            iteration: t,
            detail,
        };
        let eta = self.config.learning_rate_at(t);
        let budget = mask.budget();
        let mut update_time = std::time::Duration::ZERO;

        let outer = outer_triples(self.train, self.config.val_batch_size, rng)?;
        let mut negatives = vec![None; self.pool.len()];
        let mut draws = Vec::with_capacity(self.config.samples_per_step);
        let mut last_model = None;
        for _ in 0..self.config.samples_per_step {
            let clock = Instant::now();
            let sample = sample_mask(mask, rng);
            update_time += clock.elapsed();
            let model1 = self.stepped_model(model0, &sample, &mut negatives, budget, rng)?;
            let loss = model::bpr_loss(&model1, &outer, 0.0)?;
            if !loss.is_finite() {
                return Err(diverged(format!("outer loss {loss}")));
            }
            draws.push((sample, loss));
            last_model = Some(model1);
        }
        let mean_loss = draws.iter().map(|d| d.1).sum::<f64>() / draws.len() as f64;

        let k = draws.len() as f64;
        let baselines: Vec<f64> = match (self.config.baseline_subtraction, self.config.baseline_kind) {
            (false, _) => vec![0.0; draws.len()],
            (true, BaselineKind::LeaveOneOut) => draws
                .iter()
                .map(|d| (mean_loss * k - d.1) / (k - 1.0))
                .collect(),
            (true, BaselineKind::MovingAverage) => {
                // The first iteration has no history and takes no step.
                let b = self.baseline.unwrap_or(mean_loss);
                let decay = self.config.baseline_decay;
                self.baseline = Some(match self.baseline {
                    Some(prev) => decay * prev + (1.0 - decay) * mean_loss,
                    None => mean_loss,
                });
                vec![b; draws.len()]
            }
        };

        let clock = Instant::now();
        let before = mask.probs().to_vec();
        let grad = policy_gradient_with(&before, &draws, &baselines, self.config.prob_clamp);
        let stepped: Vec<f64> = before.iter().zip(&grad).map(|(s, g)| s - eta * g).collect();
        if stepped.iter().any(|v| !v.is_finite()) {
            return Err(diverged("non-finite probability update".into()));
        }
        mask.set_projected(stepped);
        update_time += clock.elapsed();

        let grad_mapping_sq = if eta > 0.0 {
            before
                .iter()
                .zip(mask.probs())
                .map(|(a, b)| ((a - b) / eta).powi(2))
                .sum()
        } else {
            0.0
        };
        if !mask.is_feasible() {
            return Err(Error::Contract(format!("mask left the feasible region at iteration {t}")));
        }
        monitor.push(MonitorRecord {
            iter: t,
            outer_loss: mean_loss,
            grad_mapping_sq,
            sum_s: mask.sum(),
            eta,
            data_update: update_time,
        });
        Ok(last_model.expect("samples_per_step >= 1"))
    }
}

#[derive(Debug, Clone)]
pub struct Condensation {
    pub mask: ProbabilityMask,
    pub monitor: ConvergenceMonitor,
}

/// Runs `outer_epochs` LPGE iterations over `pool`, with the outer loss
/// measured on `train`.
pub fn condense(
    pool: &DataPool,
    train: &InteractionSet,
    backbone: &TrainConfig,
    config: &CondenseConfig,
) -> Result<Condensation> {
    config.validate()?;
    backbone.validate()?;
    if pool.is_empty() || train.is_empty() {
        return Err(Error::EmptyDataset("condensation needs a non-empty pool and training set".into()));
    }
    pool.pool.check_same_space(train)?;
    let budget = config.budget(train.len());
    let mut mask = init_probabilities(pool, budget, config.init_scheme, config.prob_clamp)?;
    let mut monitor = ConvergenceMonitor::new();
    let mut rng = rng::child(config.seed, 0xC0DE);
    let mut lpge = Lpge::new(pool, train, config, backbone);
    let inner_config = TrainConfig {
        architecture: Architecture::Mf,
        ..backbone.clone()
    };
    let (nu, ni) = (train.n_users(), train.n_items());
    let mut carried: Option<EmbeddingModel> = None;

    for t in 0..config.outer_epochs {
        let model0 = match (&carried, config.warm_start) {
            (Some(m), true) => m.clone(),
            _ => model::init_model_seeded(nu, ni, &inner_config, None, rng::derive_seed(config.seed, 1_000_000 + t as u64))?,
        };
        let model1 = lpge.step(t, &mut mask, &model0, &mut rng, &mut monitor)?;
        if config.warm_start {
            carried = Some(model1);
        }
        if t % 50 == 0 {
            let r = monitor.records().last().expect("just pushed");
            log::debug!(
                "lpge t={t} loss={:.6} |G|^2={:.4e} sum_s={:.3} eta={:.1e}",
                r.outer_loss,
                r.grad_mapping_sq,
                r.sum_s,
                r.eta
            );
        }
    }
    Ok(Condensation { mask, monitor })
}

/// Condensation from an explicit mask (e.g. to resume).
pub fn mask_from_probs(pool: &DataPool, probs: Vec<f64>, budget: f64) -> Result<ProbabilityMask> {
    ProbabilityMask::new(Arc::new(pool.pool.clone()), probs, budget)
}
