//! Flat key-value run configuration.
//!
//! Every knob is a top-level TOML key; CLI `--set key=value` overrides are
//! applied on the raw table before typing, so overrides and files share one
//! schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::PseudoBudget;
use crate::baselines::{BaselineConfig, MatchingDistance, Method, SvpDirection};
use crate::condense::{BaselineKind, CondenseConfig, FinalizeMode, InitScheme};
use crate::data::SplitMode;
use crate::error::{Error, Result};
use crate::model::{Architecture, Optimizer, TrainConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondenseMethod {
    Dconrec,
    Random,
    Majority,
    SvpCf,
    Gradmatch,
}

impl std::str::FromStr for CondenseMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dconrec" => CondenseMethod::Dconrec,
            "random" => CondenseMethod::Random,
            "majority" => CondenseMethod::Majority,
            "svp_cf" | "svp-cf" => CondenseMethod::SvpCf,
            "gradmatch" => CondenseMethod::Gradmatch,
            other => return Err(Error::Config(format!("unknown method {other:?}"))),
        })
    }
}

impl CondenseMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CondenseMethod::Dconrec => "dconrec",
            CondenseMethod::Random => "random",
            CondenseMethod::Majority => "majority",
            CondenseMethod::SvpCf => "svp_cf",
            CondenseMethod::Gradmatch => "gradmatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Ratio,
    RPs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub split_fractions: [f64; 3],
    pub split_mode: String,

    pub method: CondenseMethod,
    pub ratio: f64,
    pub r_ps: f64,
    /// Fixed pseudo items per user; overrides `r_ps` when set.
    pub pseudo_k: Option<usize>,

    pub outer_epochs: usize,
    pub outer_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub lr_floor: f64,
    pub inner_lr: f64,
    pub val_batch_size: usize,
    pub prob_clamp: f64,
    pub init_scheme: InitScheme,
    pub baseline_subtraction: bool,
    pub baseline_kind: BaselineKind,
    pub baseline_decay: f64,
    pub samples_per_step: usize,
    pub warm_start: bool,
    pub finalize: FinalizeMode,

    pub embedding_dim: usize,
    pub n_layers: usize,
    pub l2_reg: f64,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub adam_betas: [f64; 2],

    pub proxy_model: Architecture,
    pub proxy_lr: f64,
    pub proxy_epochs: usize,
    pub proxy_patience: usize,

    pub backbone_model: Architecture,

    pub test_model: Architecture,
    pub test_lr: f64,
    pub test_epochs: usize,
    pub test_patience: usize,

    pub svp_direction: SvpDirection,
    pub gm_distance: MatchingDistance,
    pub gm_outer_epochs: usize,
    pub gm_lr: f64,
    pub gm_from_pool: bool,

    pub ks: Vec<usize>,
    pub groups: Option<[usize; 2]>,

    pub sweep_axis: SweepAxis,
    pub sweep_values: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = CondenseConfig::default();
        let t = TrainConfig::default();
        let b = BaselineConfig::default();
        Self {
            seed: 0,
            split_fractions: [0.8, 0.1, 0.1],
            split_mode: "per-user".into(),
            method: CondenseMethod::Dconrec,
            ratio: c.ratio,
            r_ps: 0.3,
            pseudo_k: None,
            outer_epochs: c.outer_epochs,
            outer_lr: c.outer_lr,
            lr_decay_factor: c.lr_decay_factor,
            lr_decay_every: c.lr_decay_every,
            lr_floor: c.lr_floor,
            inner_lr: c.inner_lr,
            val_batch_size: c.val_batch_size,
            prob_clamp: c.prob_clamp,
            init_scheme: c.init_scheme,
            baseline_subtraction: c.baseline_subtraction,
            baseline_kind: c.baseline_kind,
            baseline_decay: c.baseline_decay,
            samples_per_step: c.samples_per_step,
            warm_start: c.warm_start,
            finalize: c.finalize,
            embedding_dim: t.embedding_dim,
            n_layers: t.n_layers,
            l2_reg: t.l2_reg,
            batch_size: t.batch_size,
            negatives_per_positive: t.negatives_per_positive,
            adam_betas: [t.adam_betas.0, t.adam_betas.1],
            proxy_model: Architecture::Mf,
            proxy_lr: t.learning_rate,
            proxy_epochs: t.max_epochs,
            proxy_patience: t.early_stop_patience,
            backbone_model: Architecture::Mf,
            test_model: Architecture::Mf,
            test_lr: t.learning_rate,
            test_epochs: t.max_epochs,
            test_patience: t.early_stop_patience,
            svp_direction: b.svp_direction,
            gm_distance: b.gm_distance,
            gm_outer_epochs: b.gm_outer_epochs,
            gm_lr: b.gm_lr,
            gm_from_pool: b.gm_from_pool,
            ks: vec![5, 10],
            groups: None,
            sweep_axis: SweepAxis::Ratio,
            sweep_values: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            sweep_seeds: vec![0, 1, 2],
        }
    }
}

/// Stage-specific seed streams derived from the global seed.
mod stream {
    pub const PROXY: u64 = 1;
    pub const BACKBONE: u64 = 2;
    pub const CONDENSE: u64 = 3;
    pub const TEST: u64 = 4;
    pub const BASELINE: u64 = 5;
}

impl RunConfig {
    /// Parses a TOML file, applies `key=value` overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            let (key, value) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {ov:?} is not key=value")))?;
            table.insert(key.trim().to_string(), parse_value(value.trim()));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.split_mode()?;
        self.condense_config().validate()?;
        for cfg in [self.proxy_config(), self.backbone_config(), self.test_config()] {
            cfg.validate()?;
        }
        if !(self.r_ps >= 0.0) {
            return Err(Error::Config(format!("r_ps must be >= 0, got {}", self.r_ps)));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be non-empty positive cutoffs".into()));
        }
        if let Some([lo, hi]) = self.groups {
            if lo >= hi {
                return Err(Error::Config(format!("groups need lower < upper, got {lo},{hi}")));
            }
        }
        Ok(())
    }

    pub fn split_mode(&self) -> Result<SplitMode> {
        match self.split_mode.as_str() {
            "per-user" | "per_user" => Ok(SplitMode::PerUser),
            "global" => Ok(SplitMode::Global),
            other => Err(Error::Config(format!("unknown split_mode {other:?}"))),
        }
    }

    pub fn pseudo_budget(&self) -> PseudoBudget {
        match self.pseudo_k {
            Some(k) => PseudoBudget::Fixed(k),
            None => PseudoBudget::Proportional(self.r_ps),
        }
    }

    fn base_train(&self) -> TrainConfig {
        TrainConfig {
            embedding_dim: self.embedding_dim,
            n_layers: self.n_layers,
            l2_reg: self.l2_reg,
            batch_size: self.batch_size,
            negatives_per_positive: self.negatives_per_positive,
            adam_betas: (self.adam_betas[0], self.adam_betas[1]),
            optimizer: Optimizer::Adam,
            ..TrainConfig::default()
        }
    }

    pub fn proxy_config(&self) -> TrainConfig {
        TrainConfig {
            architecture: self.proxy_model,
            learning_rate: self.proxy_lr,
            max_epochs: self.proxy_epochs,
            early_stop_patience: self.proxy_patience.min(self.proxy_epochs.max(1)),
            seed: derive_seed(self.seed, stream::PROXY),
            ..self.base_train()
        }
    }

    /// The inner model of condensation (one SGD step per outer iteration).
    pub fn backbone_config(&self) -> TrainConfig {
        TrainConfig {
            architecture: self.backbone_model,
            optimizer: Optimizer::Sgd,
            learning_rate: self.inner_lr.max(f64::MIN_POSITIVE),
            seed: derive_seed(self.seed, stream::BACKBONE),
            ..self.base_train()
        }
    }

    pub fn test_config(&self) -> TrainConfig {
        TrainConfig {
            architecture: self.test_model,
            learning_rate: self.test_lr,
            max_epochs: self.test_epochs,
            early_stop_patience: self.test_patience.min(self.test_epochs.max(1)),
            seed: derive_seed(self.seed, stream::TEST),
            ..self.base_train()
        }
    }

    pub fn condense_config(&self) -> CondenseConfig {
        CondenseConfig {
            ratio: self.ratio,
            outer_epochs: self.outer_epochs,
            outer_lr: self.outer_lr,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_every: self.lr_decay_every,
            lr_floor: self.lr_floor,
            inner_lr: self.inner_lr,
            val_batch_size: self.val_batch_size,
            prob_clamp: self.prob_clamp,
            init_scheme: self.init_scheme,
            baseline_subtraction: self.baseline_subtraction,
            baseline_kind: self.baseline_kind,
            baseline_decay: self.baseline_decay,
            samples_per_step: self.samples_per_step,
            warm_start: self.warm_start,
            finalize: self.finalize,
            seed: derive_seed(self.seed, stream::CONDENSE),
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            method: match self.method {
                CondenseMethod::Random | CondenseMethod::Dconrec => Method::Random,
                CondenseMethod::Majority => Method::Majority,
                CondenseMethod::SvpCf => Method::SvpCf,
                CondenseMethod::Gradmatch => Method::Gradmatch,
            },
            ratio: self.ratio,
            seed: derive_seed(self.seed, stream::BASELINE),
            svp_direction: self.svp_direction,
            gm_distance: self.gm_distance,
            gm_outer_epochs: self.gm_outer_epochs,
            gm_lr: self.gm_lr,
            gm_batch_size: self.val_batch_size,
            gm_from_pool: self.gm_from_pool,
        }
    }
}

/// Interprets an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        assert_eq!(RunConfig::load(Some(&path), &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::load(
            None,
            &[
                "ratio=0.5".into(),
                "method=gradmatch".into(),
                "groups=[10,100]".into(),
                "test_model=lightgcn".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.ratio, 0.5);
        assert_eq!(cfg.method, CondenseMethod::Gradmatch);
        assert_eq!(cfg.groups, Some([10, 100]));
        assert_eq!(cfg.test_config().architecture, Architecture::LightGcn);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::load(None, &["nonsense=1".into()]).is_err());
        assert!(RunConfig::load(None, &["ratio=2.0".into()]).is_err());
    }

    #[test]
    fn documented_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.ratio, 0.25);
        assert_eq!(cfg.embedding_dim, 64);
        assert_eq!(cfg.lr_decay_factor, 10.0);
        assert_eq!(cfg.lr_decay_every, 100);
        assert_eq!(cfg.lr_floor, 1e-4);
        assert_eq!(cfg.ks, vec![5, 10]);
        assert_eq!(cfg.proxy_model, Architecture::Mf);
    }
}
