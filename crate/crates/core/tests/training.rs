use std::path::PathBuf;

use rand::Rng;
use rayon::prelude::*;

use dconrec::augment::{build_data_pool, train_proxy, PseudoBudget};
use dconrec::config::RunConfig;
use dconrec::data::{split_dataset, InteractionSet, SplitMode};
use dconrec::model::{self, sample_negatives, Architecture, TrainConfig};
use dconrec::pipeline;
use dconrec::synthetic::{planted_benchmark, planted_blocks, Planted, PlantedConfig};

fn planted() -> Planted {
    planted_blocks(&PlantedConfig::default()).unwrap()
}

fn small_config(architecture: Architecture) -> TrainConfig {
    TrainConfig {
        architecture,
        embedding_dim: 8,
        learning_rate: 0.01,
        batch_size: 128,
        max_epochs: 60,
        ..TrainConfig::default()
    }
}

/// Share of sampled (u, in-cluster, out-of-cluster) triples ranked correctly.
fn in_cluster_preference(model: &model::EmbeddingModel, planted: &Planted) -> f64 {
    let mut rng = dconrec::rng::seeded(99);
    let (nu, ni) = (planted.interactions.n_users(), planted.interactions.n_items());
    let mut correct = 0;
    let trials = 5000;
    let emb = model.embeddings();
    for _ in 0..trials {
        let u = rng.random_range(0..nu);
        let (inside, outside) = loop {
            let a = rng.random_range(0..ni);
            let b = rng.random_range(0..ni);
            if planted.in_cluster(u, a) && !planted.in_cluster(u, b) {
                break (a, b);
            }
        };
        if emb.score(u, inside) > emb.score(u, outside) {
            correct += 1;
        }
    }
    correct as f64 / trials as f64
}

#[test]
fn trained_models_recover_planted_blocks() {
    let p = planted();
    let empty = InteractionSet::empty(p.interactions.n_users(), p.interactions.n_items());
    for arch in [Architecture::Mf, Architecture::LightGcn] {
        let cfg = small_config(arch);
        let init = model::init_model(200, 100, &cfg, Some(&p.interactions)).unwrap();
        let trained = model::train(&init, &p.interactions, &empty, &cfg).unwrap();
        let share = in_cluster_preference(&trained, &p);
        assert!(share >= 0.95, "{arch:?}: {share}");
    }
}

#[test]
fn proxy_pseudo_items_stay_in_cluster() {
    let p = planted();
    let split = split_dataset(&p.interactions, (0.8, 0.1, 0.1), 0, SplitMode::PerUser).unwrap();
    let proxy = train_proxy(&split.train, &split.validation, Architecture::Mf, &small_config(Architecture::Mf)).unwrap();
    let pool = build_data_pool(&split.train, &proxy, PseudoBudget::Proportional(0.3)).unwrap();
    let pseudo = pool.pseudo();
    let inside = pseudo.pairs().filter(|&(u, i)| p.in_cluster(u, i)).count();
    assert!(inside as f64 >= 0.95 * pseudo.len() as f64, "{inside}/{}", pseudo.len());
    // |D_ps| / |D| tracks r_ps.
    let ratio = pseudo.len() as f64 / split.train.len() as f64;
    assert!((ratio - 0.3).abs() <= 0.02, "{ratio}");
}

#[test]
fn negatives_are_uniform_over_unseen_items() {
    // User 0 has seen items 0..5 of 20; the 15 others should be equally likely.
    let set = InteractionSet::new(1, 20, (0..5).map(|i| (0, i))).unwrap();
    let mut rng = dconrec::rng::seeded(5);
    let draws = 30_000;
    let mut counts = [0usize; 20];
    for _ in 0..draws / 10 {
        for j in sample_negatives(&set, 0, 10, &mut rng).unwrap() {
            counts[j] += 1;
        }
    }
    assert!(counts[..5].iter().all(|&c| c == 0));
    let expected = draws as f64 / 15.0;
    let chi2: f64 = counts[5..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 14 degrees of freedom, p = 0.001.
    assert!(chi2 < 36.12, "chi2 = {chi2}");

    // Dense users go through the complement path; same check.
    let dense = InteractionSet::new(1, 20, (0..16).map(|i| (0, i))).unwrap();
    let mut counts = [0usize; 20];
    for _ in 0..4000 {
        for j in sample_negatives(&dense, 0, 2, &mut rng).unwrap() {
            counts[j] += 1;
        }
    }
    let expected = 8000.0 / 4.0;
    let chi2: f64 = counts[16..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 16.27, "chi2 = {chi2}");
}

fn profile(seed: u64) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/planted.toml");
    RunConfig::load(Some(&path), &[format!("seed={seed}")]).unwrap()
}

#[test]
fn condensed_masks_favour_in_cluster_pairs() {
    let separated: Vec<bool> = (0..5u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = profile(seed);
            let bench = planted_benchmark(&PlantedConfig { seed, ..Default::default() }, &cfg, 0.2).unwrap();
            let out = pipeline::condense_stage(&bench.pool, &bench.split.train, &bench.split.validation, &cfg).unwrap();
            let mask = out.mask.unwrap();
            let (mut inside, mut outside) = ((0.0, 0), (0.0, 0));
            for (k, (u, i)) in mask.support().pairs().enumerate() {
                let slot = if bench.planted.in_cluster(u, i) { &mut inside } else { &mut outside };
                slot.0 += mask.probs()[k];
                slot.1 += 1;
            }
            inside.0 / inside.1 as f64 > outside.0 / outside.1 as f64
        })
        .collect();
    assert!(separated.iter().all(|&s| s), "{separated:?}");
}

#[test]
fn condensation_runs_are_reproducible() {
    let mut cfg = profile(3);
    cfg.outer_epochs = 30;
    let bench = planted_benchmark(&PlantedConfig { seed: 3, ..Default::default() }, &cfg, 0.2).unwrap();
    let run = || pipeline::condense_stage(&bench.pool, &bench.split.train, &bench.split.validation, &cfg).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.condensed, b.condensed);
    assert_eq!(a.mask.unwrap().probs(), b.mask.unwrap().probs());
}
