//! Bernoulli selection masks over the data pool.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::projection;
use crate::augment::{DataPool, Origin};
use crate::data::InteractionSet;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Tolerance on `Σs ≤ budget`.
pub const BUDGET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Every pool pair starts at `budget / |pool|`.
    UniformBudget,
    /// Original pairs start at twice the pseudo-pair value, rescaled to the
    /// budget.
    OriginWeighted,
}

/// Selection probabilities `s` for every pair of the pool, in pool pair-index
/// order. Pairs outside the support have probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask {
    support: Arc<InteractionSet>,
    probs: Vec<f64>,
    budget: f64,
}

impl ProbabilityMask {
    pub fn new(support: Arc<InteractionSet>, probs: Vec<f64>, budget: f64) -> Result<Self> {
        if probs.len() != support.len() {
            return Err(Error::Contract(format!(
                "{} probabilities for a support of {}",
                probs.len(),
                support.len()
            )));
        }
        let mask = Self { support, probs, budget };
        if !mask.is_feasible() {
            return Err(Error::Contract("initial probabilities are outside the feasible region".into()));
        }
        Ok(mask)
    }

    pub fn support(&self) -> &InteractionSet {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn is_feasible(&self) -> bool {
        projection::is_feasible(&self.probs, self.budget, BUDGET_TOL)
    }

    /// Replaces the probabilities with the projection of `values`.
    pub fn set_projected(&mut self, mut values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.probs.len());
        projection::project_in_place(&mut values, self.budget);
        self.probs = values;
    }

    /// `user<TAB>item<TAB>s` for the full support.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            for ((u, i), s) in self.support.pairs().zip(&self.probs) {
                writeln!(w, "{u}\t{i}\t{s}")?;
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }
}

/// Initial probabilities for `pool` with expected sample size `budget`.
pub fn init_probabilities(pool: &DataPool, budget: f64, scheme: InitScheme, clamp: f64) -> Result<ProbabilityMask> {
    let n = pool.len();
    if n == 0 {
        return Err(Error::EmptyDataset("data pool".into()));
    }
    if !(budget > 0.0) || budget > n as f64 {
        return Err(Error::Config(format!(
            "budget {budget} must lie in (0, |pool| = {n}]"
        )));
    }
    let mut probs: Vec<f64> = match scheme {
        InitScheme::UniformBudget => vec![budget / n as f64; n],
        InitScheme::OriginWeighted => {
            let weight = |o: &Origin| if *o == Origin::Original { 2.0 } else { 1.0 };
            let total: f64 = pool.origin.iter().map(weight).sum();
            pool.origin.iter().map(|o| weight(o) * budget / total).collect()
        }
    };
    probs.iter_mut().for_each(|s| *s = s.clamp(clamp, 1.0 - clamp));
    if probs.iter().sum::<f64>() > budget {
        projection::project_in_place(&mut probs, budget);
    }
    ProbabilityMask::new(Arc::new(pool.pool.clone()), probs, budget)
}

/// A binary draw `m ~ Bernoulli(s)` over a mask's support.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledMask {
    pub bits: Vec<bool>,
}

impl SampledMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Pair indices with `m = 1`.
    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(k, _)| k)
    }
}

/// Independent per-entry Bernoulli draws.
pub fn sample_mask(mask: &ProbabilityMask, rng: &mut Rng) -> SampledMask {
    SampledMask {
        bits: mask.probs.iter().map(|&s| rng.random::<f64>() < s).collect(),
    }
}

/// `∇_s ln p(m | s) = m/s − (1 − m)/(1 − s)` entry-wise, with `s` clamped to
/// `[clamp, 1 − clamp]`.
pub fn log_prob_grad(mask: &ProbabilityMask, sample: &SampledMask, clamp: f64) -> Vec<f64> {
    score_function(&mask.probs, &sample.bits, clamp)
}

pub fn score_function(probs: &[f64], bits: &[bool], clamp: f64) -> Vec<f64> {
    probs
        .iter()
        .zip(bits)
        .map(|(&s, &m)| {
            let s = s.clamp(clamp, 1.0 - clamp);
            if m {
                1.0 / s
            } else {
                -1.0 / (1.0 - s)
            }
        })
        .collect()
}

/// `ln p(m | s)` for independent Bernoulli entries.
pub fn log_prob(probs: &[f64], bits: &[bool]) -> f64 {
    probs
        .iter()
        .zip(bits)
        .map(|(&s, &m)| if m { s.ln() } else { (1.0 - s).ln() })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalizeMode {
    /// Independent draws, truncated to the `⌈budget⌉` highest-`s` selections.
    Bernoulli,
    /// The `⌊budget⌋` highest-`s` pairs.
    Topk,
}

/// Materialises a condensed interaction set from `mask`.
pub fn finalize_dataset(mask: &ProbabilityMask, mode: FinalizeMode, rng: &mut Rng) -> InteractionSet {
    let by_prob = |a: &usize, b: &usize| mask.probs[*b].total_cmp(&mask.probs[*a]).then(a.cmp(b));
    let chosen: Vec<usize> = match mode {
        FinalizeMode::Topk => {
            let k = (mask.budget.floor() as usize).min(mask.len());
            let mut idx: Vec<usize> = (0..mask.len()).collect();
            idx.sort_by(by_prob);
            idx.truncate(k);
            idx
        }
        FinalizeMode::Bernoulli => {
            let cap = mask.budget.ceil() as usize;
            let mut picked: Vec<usize> = sample_mask(mask, rng).selected().collect();
            if picked.len() > cap {
                picked.sort_by(by_prob);
                picked.truncate(cap);
            }
            picked
        }
    };
    if chosen.is_empty() {
        log::warn!("condensation produced an empty dataset");
    }
    mask.support.subset(chosen)
}
