//! Runs the planted-block ordering protocol: Random-select versus DConRec
//! with and without pre-augmentation, with 20% of the pseudo candidates
//! replaced by wrong-cluster items.
//!
//! ```text
//! cargo run --release --example planted_bench -- [n_seeds] [config.toml] [key=value ...]
//! ```

use std::path::PathBuf;

use dconrec::augment::DataPool;
use dconrec::config::{CondenseMethod, RunConfig};
use dconrec::pipeline;
use dconrec::synthetic::{planted_benchmark, PlantedConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() -> dconrec::Result<()> {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let mut seeds = 5u64;
    if let Some(n) = args.first().and_then(|a| a.parse().ok()) {
        seeds = n;
        args.remove(0);
    }
    let mut config: Option<PathBuf> = None;
    if args.first().is_some_and(|a| a.ends_with(".toml")) {
        config = Some(PathBuf::from(args.remove(0)));
    }
    let names = ["random", "dconrec", "dconrec-noaug"];
    let mut rows = vec![Vec::new(); 3];
    for seed in 0..seeds {
        let mut overrides = args.clone();
        overrides.push(format!("seed={seed}"));
        let cfg = RunConfig::load(config.as_deref(), &overrides)?;
        let bench = planted_benchmark(&PlantedConfig { seed, ..Default::default() }, &cfg, 0.2)?;
        let plain = DataPool::original_only(&bench.split.train);
        let random = RunConfig {
            method: CondenseMethod::Random,
            ..cfg.clone()
        };
        let variants: [(&RunConfig, &DataPool); 3] = [(&random, &plain), (&cfg, &bench.pool), (&cfg, &plain)];
        for (slot, (c, p)) in variants.into_iter().enumerate() {
            let out = pipeline::condense_stage(p, &bench.split.train, &bench.split.validation, c)?;
            let (_, report) = pipeline::train_eval_stage(&out.condensed, &bench.split, c)?;
            let r10 = report.get("recall", 10).expect("k=10 is evaluated");
            let n_pseudo = out.condensed.pairs().filter(|&(u, i)| !bench.split.train.contains(u, i)).count();
            let (g1, g2) = out.monitor.as_ref().map(|m| m.half_means()).unwrap_or_default();
            println!(
                "seed {seed} {:>13}: recall@10 {r10:.4}  |Ds| {}  pseudo {n_pseudo}  wrong-cluster {}  |G|^2 halves {g1:.3e} -> {g2:.3e}  {:.2?}",
                names[slot],
                out.condensed.len(),
                bench.wrong_cluster(&out.condensed),
                out.elapsed
            );
            rows[slot].push(r10);
        }
    }
    for (name, r) in names.iter().zip(rows) {
        println!("{name:>13}: median recall@10 {:.4}  {:?}", median(r.clone()), r);
    }
    Ok(())
}
