//! Planted block-structured datasets for testing and benchmarking.
//!
//! Users and items are split into `n_clusters` equal blocks. Each user draws
//! its items from its own block with a Zipf-like popularity profile, plus an
//! optional fraction of uniformly random off-block noise.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment::DataPool;
use crate::config::RunConfig;
use crate::data::{split_dataset, DatasetSplit, InteractionSet, SplitMode};
use crate::pipeline;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub interactions_per_user: usize,
    /// Exponent of the in-block popularity profile `(rank + 1)^(−a)`.
    pub popularity_exponent: f64,
    /// Fraction of each user's interactions drawn uniformly outside its block.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 100,
            n_clusters: 2,
            interactions_per_user: 20,
            popularity_exponent: 1.0,
            noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub interactions: InteractionSet,
    pub user_cluster: Vec<usize>,
    pub item_cluster: Vec<usize>,
}

impl Planted {
    pub fn in_cluster(&self, user: usize, item: usize) -> bool {
        self.user_cluster[user] == self.item_cluster[item]
    }
}

fn block_of(index: usize, n: usize, blocks: usize) -> usize {
    (index * blocks) / n
}

/// Weighted sampling of `k` distinct entries (Efraimidis–Spirakis keys).
fn weighted_distinct(weights: &[f64], k: usize, rng: &mut rng::Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| (rng.random::<f64>().powf(1.0 / w), i))
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, i)| i).collect()
}

pub fn planted_blocks(config: &PlantedConfig) -> Result<Planted> {
    let c = config.n_clusters;
    if c == 0 || config.n_users < c || config.n_items < c {
        return Err(Error::Config("need at least one user and item per cluster".into()));
    }
    if !(0.0..1.0).contains(&config.noise) {
        return Err(Error::Config(format!("noise must lie in [0, 1), got {}", config.noise)));
    }
    let user_cluster: Vec<usize> = (0..config.n_users).map(|u| block_of(u, config.n_users, c)).collect();
    let item_cluster: Vec<usize> = (0..config.n_items).map(|i| block_of(i, config.n_items, c)).collect();
    let blocks: Vec<Vec<usize>> = (0..c)
        .map(|b| (0..config.n_items).filter(|&i| item_cluster[i] == b).collect())
        .collect();
    let mut rng = rng::child(config.seed, 0xB10C);
    let mut pairs = Vec::new();
    for u in 0..config.n_users {
        let block = &blocks[user_cluster[u]];
        let n_noise = ((config.noise * config.interactions_per_user as f64).round() as usize)
            .min(config.n_items - block.len());
        let n_in = (config.interactions_per_user - n_noise).min(block.len());
        let weights: Vec<f64> = (0..block.len())
            .map(|r| ((r + 1) as f64).powf(-config.popularity_exponent))
            .collect();
        pairs.extend(weighted_distinct(&weights, n_in, &mut rng).into_iter().map(|r| (u, block[r])));
        let outside: Vec<usize> = (0..config.n_items).filter(|&i| item_cluster[i] != user_cluster[u]).collect();
        pairs.extend(
            index::sample(&mut rng, outside.len(), n_noise)
                .into_iter()
                .map(|k| (u, outside[k])),
        );
    }
    Ok(Planted {
        interactions: InteractionSet::new(config.n_users, config.n_items, pairs)?,
        user_cluster,
        item_cluster,
    })
}

/// Replaces a `fraction` of `pool`'s pseudo pairs with off-block items the
/// user has not interacted with in `train`.
pub fn inject_adversarial(
    pool: &DataPool,
    train: &InteractionSet,
    planted: &Planted,
    fraction: f64,
    seed: u64,
) -> Result<DataPool> {
    let pseudo = pool.pseudo();
    let mut rng = rng::child(seed, 0xADD);
    let n_replace = (fraction * pseudo.len() as f64).round() as usize;
    let replace: Vec<usize> = index::sample(&mut rng, pseudo.len(), n_replace).into_vec();
    let mut keep: Vec<(usize, usize)> = Vec::new();
    let mut replaced = vec![false; pseudo.len()];
    for k in replace {
        replaced[k] = true;
    }
    for (k, p) in pseudo.pairs().enumerate() {
        if !replaced[k] {
            keep.push(p);
        }
    }
    for (k, (u, _)) in pseudo.pairs().enumerate() {
        if !replaced[k] {
            continue;
        }
        let candidates: Vec<usize> = (0..train.n_items())
            .filter(|&i| !planted.in_cluster(u, i) && !train.contains(u, i) && !keep.contains(&(u, i)))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        keep.push((u, candidates[rng.random_range(0..candidates.len())]));
    }
    let pseudo = InteractionSet::new(train.n_users(), train.n_items(), keep)?;
    DataPool::new(train, &pseudo)
}

/// The planted benchmark for one seed: data, 80/10/10 per-user split and the
/// pre-augmented pool with a share of its pseudo pairs made adversarial.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub planted: Planted,
    pub split: DatasetSplit,
    pub pool: DataPool,
}

impl Benchmark {
    /// Number of pairs of `set` whose item lies outside the user's block.
    pub fn wrong_cluster(&self, set: &InteractionSet) -> usize {
        set.pairs().filter(|&(u, i)| !self.planted.in_cluster(u, i)).count()
    }
}

pub fn planted_benchmark(data: &PlantedConfig, run: &RunConfig, adversarial: f64) -> Result<Benchmark> {
    let planted = planted_blocks(data)?;
    let split = split_dataset(&planted.interactions, (0.8, 0.1, 0.1), data.seed, SplitMode::PerUser)?;
    let (_, pool) = pipeline::augment_stage(&split, run)?;
    let pool = inject_adversarial(&pool, &split.train, &planted, adversarial, data.seed)?;
    Ok(Benchmark { planted, split, pool })
}
