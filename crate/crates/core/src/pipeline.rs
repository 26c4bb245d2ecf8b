//! Stage functions shared by the command line and the test suites.

use std::time::{Duration, Instant};

use crate::augment::{self, DataPool};
use crate::baselines;
use crate::condense::{self, ConvergenceMonitor, ProbabilityMask};
use crate::config::{CondenseMethod, RunConfig};
use crate::data::{group_users, DatasetSplit, InteractionSet, UserGroupPartition};
use crate::error::Result;
use crate::eval::{self, EvalReport};
use crate::model::{self, EmbeddingModel};
use crate::rng;

/// Trains the proxy on `split.train` and mines the pseudo pool.
pub fn augment_stage(split: &DatasetSplit, cfg: &RunConfig) -> Result<(EmbeddingModel, DataPool)> {
    let proxy_cfg = cfg.proxy_config();
    let proxy = augment::train_proxy(&split.train, &split.validation, proxy_cfg.architecture, &proxy_cfg)?;
    let pool = augment::build_data_pool(&split.train, &proxy, cfg.pseudo_budget())?;
    Ok((proxy, pool))
}

#[derive(Debug, Clone)]
pub struct CondenseOutcome {
    pub condensed: InteractionSet,
    /// Present for the probability-based methods.
    pub mask: Option<ProbabilityMask>,
    pub monitor: Option<ConvergenceMonitor>,
    pub elapsed: Duration,
}

/// Produces the condensed set with the configured method. Selection
/// baselines only look at the original pairs of `pool`; gradient matching
/// uses the whole pool only when `gm_from_pool` is set.
pub fn condense_stage(
    pool: &DataPool,
    train: &InteractionSet,
    val: &InteractionSet,
    cfg: &RunConfig,
) -> Result<CondenseOutcome> {
    let clock = Instant::now();
    let bcfg = cfg.baseline_config();
    let finalize = |c: condense::Condensation, seed_stream: u64| -> CondenseOutcome {
        let mut r = rng::child(cfg.seed, seed_stream);
        let condensed = condense::finalize_dataset(&c.mask, cfg.finalize, &mut r);
        CondenseOutcome {
            condensed,
            mask: Some(c.mask),
            monitor: Some(c.monitor),
            elapsed: Duration::ZERO,
        }
    };
    let mut out = match cfg.method {
        CondenseMethod::Dconrec => {
            let c = condense::condense(pool, train, &cfg.backbone_config(), &cfg.condense_config())?;
            finalize(c, 0xF1)
        }
        CondenseMethod::Gradmatch => {
            let source = if bcfg.gm_from_pool {
                pool.clone()
            } else {
                DataPool::original_only(train)
            };
            let c = baselines::gradmatch_condense(&source, train, &cfg.backbone_config(), &bcfg, cfg.val_batch_size)?;
            finalize(c, 0xF2)
        }
        CondenseMethod::Random => selection(baselines::random_select(train, cfg.ratio, bcfg.seed)?),
        CondenseMethod::Majority => selection(baselines::majority_select(train, cfg.ratio)?),
        CondenseMethod::SvpCf => selection(baselines::svp_cf_select(
            train,
            val,
            cfg.ratio,
            &cfg.proxy_config(),
            cfg.svp_direction,
        )?),
    };
    out.elapsed = clock.elapsed();
    Ok(out)
}

fn selection(condensed: InteractionSet) -> CondenseOutcome {
    CondenseOutcome {
        condensed,
        mask: None,
        monitor: None,
        elapsed: Duration::ZERO,
    }
}

/// The user partition requested by `cfg.groups`, computed on the original
/// training split.
pub fn partition(train: &InteractionSet, cfg: &RunConfig) -> Result<Option<UserGroupPartition>> {
    cfg.groups
        .map(|[lo, hi]| group_users(train, lo, hi))
        .transpose()
}

/// Trains the test model on `condensed` (early stopping on the validation
/// split) and evaluates it on the test split, excluding original training
/// pairs from the ranking.
pub fn train_eval_stage(
    condensed: &InteractionSet,
    split: &DatasetSplit,
    cfg: &RunConfig,
) -> Result<(EmbeddingModel, EvalReport)> {
    let test_cfg = cfg.test_config();
    let init = model::init_model(condensed.n_users(), condensed.n_items(), &test_cfg, Some(condensed))?;
    let trained = model::train(&init, condensed, &split.validation, &test_cfg)?;
    let groups = partition(&split.train, cfg)?;
    let report = eval::evaluate_against(&trained, &split.train, &split.test, &cfg.ks, groups.as_ref())?;
    Ok((trained, report))
}

/// The pool the configured method condenses from: the pre-augmented pool
/// for DConRec (and pool-based GradMatch) when pseudo data is requested,
/// the original training pairs otherwise.
pub fn pool_for(split: &DatasetSplit, cfg: &RunConfig) -> Result<DataPool> {
    let needs_pool = cfg.method == CondenseMethod::Dconrec || (cfg.method == CondenseMethod::Gradmatch && cfg.gm_from_pool);
    if needs_pool && (cfg.r_ps > 0.0 || cfg.pseudo_k.is_some_and(|k| k > 0)) {
        Ok(augment_stage(split, cfg)?.1)
    } else {
        Ok(DataPool::original_only(&split.train))
    }
}

/// The whole pipeline after the split: pool, condense, then train and
/// evaluate.
pub fn run_all(split: &DatasetSplit, cfg: &RunConfig) -> Result<(CondenseOutcome, EvalReport)> {
    let pool = pool_for(split, cfg)?;
    let outcome = condense_stage(&pool, &split.train, &split.validation, cfg)?;
    let (_, report) = train_eval_stage(&outcome.condensed, split, cfg)?;
    Ok((outcome, report))
}
