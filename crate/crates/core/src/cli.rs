//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error
//! (bad flags, unreadable config, missing input files).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augment::DataPool;
use crate::config::{RunConfig, SweepAxis};
use crate::data::{self, DatasetSplit, Format, IdMap, InteractionSet};
use crate::error::Error;
use crate::eval;
use crate::model;
use crate::pipeline;
use crate::synthetic::{self, PlantedConfig};

#[derive(Debug, Parser)]
#[command(name = "dconrec", version, about = "Dataset condensation for implicit-feedback recommendation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Global seed; every stage derives its own stream from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override a configuration key, e.g. `--set ratio=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Condensation knobs exposed as flags.
#[derive(Debug, Args, Default)]
pub struct CondenseFlags {
    /// dconrec, random, majority, svp_cf or gradmatch.
    #[arg(long)]
    pub method: Option<String>,
    /// Condensation ratio r.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Pseudo-data ratio.
    #[arg(long = "r-ps")]
    pub r_ps: Option<f64>,
}

/// Test-model knobs exposed as flags.
#[derive(Debug, Args, Default)]
pub struct EvalFlags {
    /// Test model architecture: mf or lightgcn.
    #[arg(long)]
    pub model: Option<String>,
    /// Head/torso/tail degree thresholds, e.g. `10,100`.
    #[arg(long)]
    pub groups: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a raw interaction file, remap ids and split it.
    Split {
        #[command(flatten)]
        common: Common,
        /// Interaction file (`user item` per line, TSV or CSV).
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the proxy model and build the pre-augmented pool.
    Augment {
        #[command(flatten)]
        common: Common,
        /// Directory written by `split`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Condense the training split with the configured method.
    Condense {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        knobs: CondenseFlags,
        /// Directory written by `split`.
        #[arg(long)]
        data: PathBuf,
        /// Pool written by `augment`. Without it, DConRec trains the proxy
        /// and builds the pool itself.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Train the test model on a condensed set and evaluate it.
    TrainEval {
        #[command(flatten)]
        common: Common,
        /// Directory written by `split`.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        knobs: EvalFlags,
        /// Interactions to train on; the full training split otherwise.
        #[arg(long)]
        condensed: Option<PathBuf>,
        /// Also export the learned factors.
        #[arg(long)]
        embeddings: bool,
    },
    /// Run augment, condense and train-eval over a grid of values and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        knobs: CondenseFlags,
        #[command(flatten)]
        eval: EvalFlags,
        /// Directory written by `split`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a planted block-structured interaction file.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 2)]
        clusters: usize,
        #[arg(long, default_value_t = 20)]
        per_user: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Split { common, input } => split(&load_config(&common, &[])?, &common, &input),
        Command::Augment { common, data } => augment(&load_config(&common, &[])?, &common, &data),
        Command::Condense {
            common,
            knobs,
            data,
            pool,
        } => condense(&load_config(&common, &knobs.overrides())?, &common, &data, pool.as_deref()),
        Command::TrainEval {
            common,
            knobs,
            data,
            condensed,
            embeddings,
        } => train_eval(&load_config(&common, &knobs.overrides()?)?, &common, &data, condensed.as_deref(), embeddings),
        Command::Sweep {
            common,
            knobs,
            eval,
            data,
        } => {
            let mut extra = knobs.overrides();
            extra.extend(eval.overrides()?);
            sweep(&load_config(&common, &extra)?, &common, &data)
        }
        Command::Synth {
            common,
            users,
            items,
            clusters,
            per_user,
            noise,
        } => synth(&load_config(&common, &[])?, &common, users, items, clusters, per_user, noise),
    }
}

impl CondenseFlags {
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(m) = &self.method {
            out.push(format!("method={m:?}"));
        }
        if let Some(r) = self.ratio {
            out.push(format!("ratio={r:?}"));
        }
        if let Some(r) = self.r_ps {
            out.push(format!("r_ps={r:?}"));
        }
        out
    }
}

impl EvalFlags {
    fn overrides(&self) -> CliResult<Vec<String>> {
        let mut out = Vec::new();
        if let Some(m) = &self.model {
            out.push(format!("test_model={m:?}"));
        }
        if let Some(g) = &self.groups {
            let parts: Vec<&str> = g.split(',').map(str::trim).collect();
            if parts.len() != 2 || parts.iter().any(|p| p.parse::<usize>().is_err()) {
                return Err(CliError::Usage(format!("--groups expects LOWER,UPPER, got {g:?}")));
            }
            out.push(format!("groups=[{},{}]", parts[0], parts[1]));
        }
        Ok(out)
    }
}

/// File configuration, then `--set` overrides, then command flags, then `--seed`.
fn load_config(common: &Common, flags: &[String]) -> CliResult<RunConfig> {
    if let Some(p) = &common.config {
        require(p)?;
    }
    let mut overrides = common.overrides.clone();
    overrides.extend(flags.iter().cloned());
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    Ok(RunConfig::load(common.config.as_deref(), &overrides)?)
}

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input not found: {}", path.display())))
    }
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(Error::io(dir, e)))
}

/// Reads the directory layout written by `split`.
pub fn load_split(dir: &Path) -> crate::Result<(DatasetSplit, IdMap)> {
    let ids = IdMap::read(&dir.join("id_map.tsv"))?;
    let (nu, ni) = (ids.users.len(), ids.items.len());
    let split = DatasetSplit {
        train: data::read_interactions(&dir.join("train.tsv"), nu, ni)?,
        validation: data::read_interactions(&dir.join("val.tsv"), nu, ni)?,
        test: data::read_interactions(&dir.join("test.tsv"), nu, ni)?,
    };
    Ok((split, ids))
}

fn require_split(dir: &Path) -> CliResult<(DatasetSplit, IdMap)> {
    for name in ["id_map.tsv", "train.tsv", "val.tsv", "test.tsv"] {
        require(&dir.join(name))?;
    }
    Ok(load_split(dir)?)
}

fn split(cfg: &RunConfig, common: &Common, input: &Path) -> CliResult<()> {
    require(input)?;
    let loaded = data::load_interactions(input, Format::from_path(input))?;
    if loaded.duplicates_dropped > 0 {
        log::warn!("dropped {} duplicate interactions", loaded.duplicates_dropped);
    }
    let [a, b, c] = cfg.split_fractions;
    let s = data::split_dataset(&loaded.interactions, (a, b, c), cfg.seed, cfg.split_mode()?)?;
    let out = &common.out;
    prepare_out(out)?;
    data::write_interactions(&out.join("train.tsv"), &s.train)?;
    data::write_interactions(&out.join("val.tsv"), &s.validation)?;
    data::write_interactions(&out.join("test.tsv"), &s.test)?;
    loaded.ids.write(&out.join("id_map.tsv"))?;
    cfg.write(&out.join("config.toml"))?;
    log::info!(
        "split {} interactions: train {}, val {}, test {}",
        loaded.interactions.len(),
        s.train.len(),
        s.validation.len(),
        s.test.len()
    );
    Ok(())
}

fn augment(cfg: &RunConfig, common: &Common, data_dir: &Path) -> CliResult<()> {
    let (split, _) = require_split(data_dir)?;
    let (proxy, pool) = pipeline::augment_stage(&split, cfg)?;
    prepare_out(&common.out)?;
    pool.write(&common.out.join("pool.tsv"))?;
    model::write_checkpoint(&common.out.join("proxy.ckpt"), &proxy)?;
    cfg.write(&common.out.join("config.toml"))?;
    Ok(())
}

fn condense(cfg: &RunConfig, common: &Common, data_dir: &Path, pool_path: Option<&Path>) -> CliResult<()> {
    if let Some(p) = pool_path {
        require(p)?;
    }
    let (split, _) = require_split(data_dir)?;
    let pool = match pool_path {
        Some(p) => DataPool::read(p, split.train.n_users(), split.train.n_items())?,
        None => pipeline::pool_for(&split, cfg)?,
    };
    let outcome = pipeline::condense_stage(&pool, &split.train, &split.validation, cfg)?;
    let out = &common.out;
    prepare_out(out)?;
    data::write_interactions(&out.join("condensed.tsv"), &outcome.condensed)?;
    pool.write(&out.join("pool.tsv"))?;
    if let Some(mask) = &outcome.mask {
        mask.write(&out.join("mask.tsv"))?;
    }
    if let Some(monitor) = &outcome.monitor {
        monitor.write_csv(&out.join("monitor.csv"))?;
    }
    cfg.write(&out.join("config.toml"))?;
    log::info!(
        "{}: condensed {} of {} training pairs in {:.2?}",
        cfg.method.as_str(),
        outcome.condensed.len(),
        split.train.len(),
        outcome.elapsed
    );
    Ok(())
}

/// The configuration that produced `condensed`, read from the
/// `config.toml` written next to it by `condense`, if any.
fn producer_config(condensed: &Path) -> Option<RunConfig> {
    let path = condensed.parent()?.join("config.toml");
    RunConfig::load(Some(&path), &[]).ok()
}

fn metadata(cfg: &RunConfig, n_train_on: usize) -> serde_json::Value {
    serde_json::json!({
        "method": cfg.method.as_str(),
        "ratio": cfg.ratio,
        "r_ps": cfg.r_ps,
        "seed": cfg.seed,
        "test_model": cfg.test_model.as_str(),
        "n_train_pairs": n_train_on,
    })
}

fn train_eval(cfg: &RunConfig, common: &Common, data_dir: &Path, condensed: Option<&Path>, embeddings: bool) -> CliResult<()> {
    if let Some(p) = condensed {
        require(p)?;
    }
    let (split, _) = require_split(data_dir)?;
    let train_on: InteractionSet = match condensed {
        Some(p) => data::read_interactions(p, split.train.n_users(), split.train.n_items())?,
        None => split.train.clone(),
    };
    let (trained, report) = pipeline::train_eval_stage(&train_on, &split, cfg)?;
    let out = &common.out;
    prepare_out(out)?;
    // Condensation provenance comes from the producing run; the test-model
    // settings from this one.
    let mut meta = match condensed.and_then(producer_config) {
        Some(producer) => metadata(&producer, train_on.len()),
        None => {
            let full = RunConfig {
                ratio: 1.0,
                r_ps: 0.0,
                ..cfg.clone()
            };
            let mut m = metadata(&full, train_on.len());
            m["method"] = serde_json::json!("full");
            m
        }
    };
    meta["test_model"] = serde_json::json!(cfg.test_model.as_str());
    meta["eval_seed"] = serde_json::json!(cfg.seed);
    report.write_json(&out.join("report.json"), meta)?;
    cfg.write(&out.join("config.toml"))?;
    model::write_checkpoint(&out.join("model.ckpt"), &trained)?;
    if embeddings {
        eval::export_embeddings(&trained, &out.join("embeddings.tsv"))?;
    }
    for (k, v) in report.flat() {
        println!("{k}\t{v:.6}");
    }
    Ok(())
}

fn format_value(v: f64) -> String {
    format!("{v}")
}

fn sweep(base: &RunConfig, common: &Common, data_dir: &Path) -> CliResult<()> {
    let (split, _) = require_split(data_dir)?;
    if base.sweep_values.is_empty() || base.sweep_seeds.is_empty() {
        return Err(CliError::Usage("sweep_values and sweep_seeds must be non-empty".into()));
    }
    let axis = match base.sweep_axis {
        SweepAxis::Ratio => "ratio",
        SweepAxis::RPs => "r_ps",
    };
    let out = &common.out;
    prepare_out(out)?;
    base.write(&out.join("config.toml"))?;
    let metric_keys: Vec<String> = base
        .ks
        .iter()
        .flat_map(|k| [format!("recall@{k}"), format!("ndcg@{k}")])
        .collect();
    let mut csv = format!("{axis},seed,method,status,n_train_pairs,{}\n", metric_keys.join(","));
    let mut failures = 0usize;
    for &value in &base.sweep_values {
        for &seed in &base.sweep_seeds {
            let mut cfg: RunConfig = base.clone();
            cfg.seed = seed;
            match base.sweep_axis {
                SweepAxis::Ratio => cfg.ratio = value,
                SweepAxis::RPs => cfg.r_ps = value,
            }
            let cell = out.join(format!("{axis}={}", format_value(value))).join(format!("seed={seed}"));
            let report_path = cell.join("report.json");
            let outcome = if report_path.exists() {
                log::info!("skipping finished cell {}", cell.display());
                read_cell(&report_path, &metric_keys)
            } else {
                run_cell(&cell, &split, &cfg, &metric_keys)
            };
            let _ = write!(csv, "{},{seed},{},", format_value(value), cfg.method.as_str());
            match outcome {
                Ok((n, values)) => {
                    let cols: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
                    let _ = writeln!(csv, "ok,{n},{}", cols.join(","));
                }
                Err(e) => {
                    failures += 1;
                    log::error!("cell {} failed: {e}", cell.display());
                    let _ = writeln!(csv, "failed,,{}", vec![""; metric_keys.len()].join(","));
                }
            }
        }
    }
    let csv_path = out.join("sweep.csv");
    std::fs::write(&csv_path, csv).map_err(|e| CliError::Runtime(Error::io(&csv_path, e)))?;
    if failures > 0 {
        return Err(CliError::Runtime(Error::Contract(format!("{failures} sweep cell(s) failed"))));
    }
    Ok(())
}

fn run_cell(cell: &Path, split: &DatasetSplit, cfg: &RunConfig, keys: &[String]) -> crate::Result<(usize, Vec<f64>)> {
    cfg.validate()?;
    let (outcome, report) = pipeline::run_all(split, cfg)?;
    std::fs::create_dir_all(cell).map_err(|e| Error::io(cell, e))?;
    data::write_interactions(&cell.join("condensed.tsv"), &outcome.condensed)?;
    if let Some(m) = &outcome.monitor {
        m.write_csv(&cell.join("monitor.csv"))?;
    }
    cfg.write(&cell.join("config.toml"))?;
    let n = outcome.condensed.len();
    report.write_json(&cell.join("report.json"), metadata(cfg, n))?;
    let values = keys.iter().map(|k| report.metrics.get(k).copied().unwrap_or(f64::NAN)).collect();
    Ok((n, values))
}

fn read_cell(path: &Path, keys: &[String]) -> crate::Result<(usize, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let n = v["metadata"]["n_train_pairs"].as_u64().unwrap_or(0) as usize;
    let values = keys.iter().map(|k| v[k.as_str()].as_f64().unwrap_or(f64::NAN)).collect();
    Ok((n, values))
}

fn synth(
    cfg: &RunConfig,
    common: &Common,
    users: usize,
    items: usize,
    clusters: usize,
    per_user: usize,
    noise: f64,
) -> CliResult<()> {
    let planted = synthetic::planted_blocks(&PlantedConfig {
        n_users: users,
        n_items: items,
        n_clusters: clusters,
        interactions_per_user: per_user,
        noise,
        seed: cfg.seed,
        ..PlantedConfig::default()
    })?;
    prepare_out(&common.out)?;
    let path = common.out.join("interactions.tsv");
    data::write_interactions(&path, &planted.interactions)?;
    println!("{}", path.display());
    Ok(())
}
