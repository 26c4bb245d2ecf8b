//! Selection and condensation baselines: Random, Majority, SVP-CF and
//! one-step gradient matching.

use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::augment::DataPool;
use crate::condense::{self, Condensation, ConvergenceMonitor, MonitorRecord, ProbabilityMask};
use crate::data::InteractionSet;
use crate::error::{Error, Result};
use crate::model::{self, dot, sigmoid, Architecture, EmbeddingModel, TrainConfig, Triple};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Majority,
    SvpCf,
    Gradmatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvpDirection {
    Hardest,
    Easiest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchingDistance {
    /// `Σ_matrices (1 − cos(G_real, G_syn))` over the user and item matrices.
    CosinePerMatrix,
    /// `Σ_matrices ‖G_real − G_syn‖²`.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub method: Method,
    pub ratio: f64,
    pub seed: u64,
    pub svp_direction: SvpDirection,
    pub gm_distance: MatchingDistance,
    pub gm_outer_epochs: usize,
    pub gm_lr: f64,
    /// Real-gradient batch size for gradient matching.
    pub gm_batch_size: usize,
    /// Condense from the augmented pool instead of the original pairs.
    pub gm_from_pool: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            method: Method::Random,
            ratio: 0.25,
            seed: 0,
            svp_direction: SvpDirection::Hardest,
            gm_distance: MatchingDistance::CosinePerMatrix,
            gm_outer_epochs: 400,
            gm_lr: 0.1,
            gm_batch_size: 4096,
            gm_from_pool: false,
        }
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("ratio must lie in (0, 1], got {r}")))
    }
}

/// `⌊r·|D|⌋`.
pub fn selection_size(n: usize, r: f64) -> usize {
    ((r * n as f64).floor() as usize).min(n)
}

/// Uniform sample of `⌊r·|D|⌋` pairs without replacement.
pub fn random_select(train: &InteractionSet, r: f64, seed: u64) -> Result<InteractionSet> {
    check_ratio(r)?;
    if r == 1.0 {
        return Ok(train.clone());
    }
    let k = selection_size(train.len(), r);
    let mut rng = rng::child(seed, 0x5E1);
    Ok(train.subset(index::sample(&mut rng, train.len(), k).into_iter()))
}

/// Fills the budget with whole users in ascending degree order (ties by user
/// id); the boundary user contributes its lowest item ids.
pub fn majority_select(train: &InteractionSet, r: f64) -> Result<InteractionSet> {
    check_ratio(r)?;
    let budget = selection_size(train.len(), r);
    let mut users: Vec<usize> = (0..train.n_users()).filter(|&u| train.degree(u) > 0).collect();
    users.sort_by_key(|&u| (train.degree(u), u));
    let mut chosen = Vec::with_capacity(budget);
    for u in users {
        let room = budget - chosen.len();
        if room == 0 {
            break;
        }
        chosen.extend(train.user_range(u).take(room));
    }
    Ok(train.subset(chosen))
}

/// Per-pair BPR loss under `proxy` against one fixed sampled negative.
pub fn proxy_pair_losses(proxy: &EmbeddingModel, train: &InteractionSet, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng::child(seed, 0x5F9);
    let order: Vec<usize> = (0..train.len()).collect();
    let triples = model::build_triples(train, train, &order, 1, &mut rng)?;
    let emb = proxy.embeddings();
    Ok(triples
        .iter()
        .map(|t| model::neg_log_sigmoid(emb.score(t.user, t.pos) - emb.score(t.user, t.neg)))
        .collect())
}

/// Keeps the `⌊r·|D|⌋` pairs with the highest (`Hardest`) or lowest
/// (`Easiest`) `losses`, ties by pair index.
pub fn select_by_loss(train: &InteractionSet, losses: &[f64], r: f64, direction: SvpDirection) -> Result<InteractionSet> {
    check_ratio(r)?;
    if losses.len() != train.len() {
        return Err(Error::Contract("one loss per training pair expected".into()));
    }
    let k = selection_size(train.len(), r);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = match direction {
            SvpDirection::Hardest => losses[b].total_cmp(&losses[a]),
            SvpDirection::Easiest => losses[a].total_cmp(&losses[b]),
        };
        ord.then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(train.subset(idx))
}

/// SVP-CF: train an MF proxy, score each training pair by its BPR loss, keep
/// the hardest (or easiest) `⌊r·|D|⌋`.
pub fn svp_cf_select(
    train: &InteractionSet,
    val: &InteractionSet,
    r: f64,
    proxy_config: &TrainConfig,
    direction: SvpDirection,
) -> Result<InteractionSet> {
    check_ratio(r)?;
    if r == 1.0 {
        return Ok(train.clone());
    }
    let cfg = TrainConfig {
        architecture: Architecture::Mf,
        ..proxy_config.clone()
    };
    let init = model::init_model(train.n_users(), train.n_items(), &cfg, None)?;
    let proxy = model::train(&init, train, val, &cfg)?;
    let losses = proxy_pair_losses(&proxy, train, proxy_config.seed)?;
    select_by_loss(train, &losses, r, direction)
}

/// `1 − ⟨a, b⟩ / (‖a‖ ‖b‖)`; zero vectors are at distance 1.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot(a, b) / (na * nb)
}

/// Value of the distance on one matrix and its gradient with respect to `syn`.
fn distance_and_grad(real: &[f64], syn: &[f64], kind: MatchingDistance) -> (f64, Vec<f64>) {
    match kind {
        MatchingDistance::Euclidean => {
            let diff: Vec<f64> = real.iter().zip(syn).map(|(a, b)| a - b).collect();
            let value = dot(&diff, &diff);
            (value, diff.iter().map(|d| -2.0 * d).collect())
        }
        MatchingDistance::CosinePerMatrix => {
            let na = dot(real, real).sqrt();
            let nb = dot(syn, syn).sqrt();
            if na == 0.0 || nb == 0.0 {
                return (1.0, vec![0.0; syn.len()]);
            }
            let ab = dot(real, syn);
            let value = 1.0 - ab / (na * nb);
            let grad = real
                .iter()
                .zip(syn)
                .map(|(a, b)| -(a / (na * nb) - ab * b / (na * nb * nb * nb)))
                .collect();
            (value, grad)
        }
    }
}

/// Dense BPR gradient (no regulariser) of `weights[k] · ℓ(triples[k])` for an
/// MF model, as `(user matrix, item matrix)`.
fn dense_gradient(model: &EmbeddingModel, triples: &[Triple], weights: impl Fn(usize) -> f64) -> (Vec<f64>, Vec<f64>) {
    let dim = model.dim();
    let mut gu = vec![0.0; model.n_users() * dim];
    let mut gi = vec![0.0; model.n_items() * dim];
    for (k, t) in triples.iter().enumerate() {
        let w = weights(k);
        if w == 0.0 {
            continue;
        }
        let (eu, ep, en) = (model.user_row(t.user), model.item_row(t.pos), model.item_row(t.neg));
        let c = -w * sigmoid(-(dot(eu, ep) - dot(eu, en)));
        for d in 0..dim {
            gu[t.user * dim + d] += c * (ep[d] - en[d]);
            gi[t.pos * dim + d] += c * eu[d];
            gi[t.neg * dim + d] -= c * eu[d];
        }
    }
    (gu, gi)
}

/// Matching distance between the mean real-batch gradient and the
/// `weights`-weighted synthetic gradient (scaled by `1/budget`).
pub fn gradient_matching_distance(
    model: &EmbeddingModel,
    real: &[Triple],
    synthetic: &[Triple],
    weights: &[f64],
    budget: f64,
    kind: MatchingDistance,
) -> f64 {
    let n = real.len() as f64;
    let (ru, ri) = dense_gradient(model, real, |_| 1.0 / n);
    let (su, si) = dense_gradient(model, synthetic, |k| weights[k] / budget);
    distance_and_grad(&ru, &su, kind).0 + distance_and_grad(&ri, &si, kind).0
}

/// Derivative of the matching distance with respect to each synthetic weight.
fn distance_weight_gradient(
    model: &EmbeddingModel,
    synthetic: &[Triple],
    weights: &[f64],
    budget: f64,
    real: &(Vec<f64>, Vec<f64>),
    kind: MatchingDistance,
) -> (f64, Vec<f64>) {
    let dim = model.dim();
    let (su, si) = dense_gradient(model, synthetic, |k| weights[k] / budget);
    let (du, dgu) = distance_and_grad(&real.0, &su, kind);
    let (di, dgi) = distance_and_grad(&real.1, &si, kind);
    // ∂D/∂s_k = (1/budget) ⟨∂D/∂G_syn, ∇ℓ_k⟩, touching rows u, pos and neg only.
    let grad = synthetic
        .iter()
        .map(|t| {
            let (eu, ep, en) = (model.user_row(t.user), model.item_row(t.pos), model.item_row(t.neg));
            let c = -sigmoid(-(dot(eu, ep) - dot(eu, en)));
            let mut acc = 0.0;
            for d in 0..dim {
                acc += dgu[t.user * dim + d] * c * (ep[d] - en[d]);
                acc += dgi[t.pos * dim + d] * c * eu[d];
                acc -= dgi[t.neg * dim + d] * c * eu[d];
            }
            acc / budget
        })
        .collect();
    (du + di, grad)
}

/// One-step gradient matching over the same probability parameterisation
/// and projection as [`condense::condense`]. The inner model is MF.
pub fn gradmatch_condense(
    pool: &DataPool,
    train: &InteractionSet,
    backbone: &TrainConfig,
    config: &BaselineConfig,
    val_batch_size: usize,
) -> Result<Condensation> {
    check_ratio(config.ratio)?;
    if pool.is_empty() || train.is_empty() {
        return Err(Error::EmptyDataset("gradient matching needs a non-empty pool and training set".into()));
    }
    let budget = config.ratio * train.len() as f64;
    let mut mask = condense::init_probabilities(pool, budget, condense::InitScheme::UniformBudget, 1e-4)?;
    let inner = TrainConfig {
        architecture: Architecture::Mf,
        ..backbone.clone()
    };
    let mut monitor = ConvergenceMonitor::new();
    let mut rng = rng::child(config.seed, 0x6A7);
    let pool_order: Vec<usize> = (0..pool.len()).collect();
    let batch = val_batch_size.min(train.len());
    for t in 0..config.gm_outer_epochs {
        let theta0 = model::init_model_seeded(
            train.n_users(),
            train.n_items(),
            &inner,
            None,
            rng::derive_seed(config.seed, 2_000_000 + t as u64),
        )?;
        let real_idx: Vec<usize> = if batch == train.len() {
            (0..train.len()).collect()
        } else {
            index::sample(&mut rng, train.len(), batch).into_vec()
        };
        let real = model::build_triples(train, train, &real_idx, 1, &mut rng)?;
        let n = real.len() as f64;
        let real_grad = dense_gradient(&theta0, &real, |_| 1.0 / n);
        let clock = Instant::now();
        let synthetic = model::build_triples(&pool.pool, &pool.pool, &pool_order, 1, &mut rng)?;
        let (distance, grad_mapping_sq) = gradmatch_update(&mut mask, &theta0, &synthetic, &real_grad, config, t)?;
        monitor.push(MonitorRecord {
            iter: t,
            outer_loss: distance,
            grad_mapping_sq,
            sum_s: mask.sum(),
            eta: config.gm_lr,
            data_update: clock.elapsed(),
        });
    }
    Ok(Condensation { mask, monitor })
}

/// One projected descent step of the matching distance in the weights;
/// returns the distance and `‖Ĝ‖²`.
fn gradmatch_update(
    mask: &mut ProbabilityMask,
    theta0: &EmbeddingModel,
    synthetic: &[Triple],
    real_grad: &(Vec<f64>, Vec<f64>),
    config: &BaselineConfig,
    t: usize,
) -> Result<(f64, f64)> {
    let budget = mask.budget();
    let before = mask.probs().to_vec();
    let (distance, grad) = distance_weight_gradient(theta0, synthetic, &before, budget, real_grad, config.gm_distance);
    if !distance.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            stage: "gradmatch",
            iteration: t,
            detail: format!("matching distance {distance}"),
        });
    }
    let eta = config.gm_lr;
    mask.set_projected(before.iter().zip(&grad).map(|(s, g)| s - eta * g).collect());
    let grad_mapping_sq = if eta > 0.0 {
        before.iter().zip(mask.probs()).map(|(a, b)| ((a - b) / eta).powi(2)).sum()
    } else {
        0.0
    };
    Ok((distance, grad_mapping_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn degrees_set() -> InteractionSet {
        // u0: 1 pair, u1: 2 pairs, u2: 4 pairs
        InteractionSet::new(3, 6, [(0, 3), (1, 0), (1, 5), (2, 4), (2, 1), (2, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn random_identity_and_size() {
        let s = degrees_set();
        assert_eq!(random_select(&s, 1.0, 0).unwrap(), s);
        let half = random_select(&s, 0.5, 3).unwrap();
        assert_eq!(half.len(), 3);
        assert!(half.pairs().all(|(u, i)| s.contains(u, i)));
        assert_eq!(random_select(&s, 0.5, 3).unwrap(), half);
        assert!(random_select(&s, 0.0, 3).is_err());
    }

    #[test]
    fn random_size_on_large_count() {
        assert_eq!(selection_size(284_086, 0.25), 71_021);
    }

    #[test]
    fn majority_greedy_fill() {
        let s = degrees_set();
        let three = majority_select(&s, 3.0 / 7.0).unwrap();
        assert_eq!(three.pairs().collect::<Vec<_>>(), vec![(0, 3), (1, 0), (1, 5)]);
        let four = majority_select(&s, 4.0 / 7.0).unwrap();
        assert_eq!(four.pairs().collect::<Vec<_>>(), vec![(0, 3), (1, 0), (1, 5), (2, 0)]);
        assert_eq!(majority_select(&s, 1.0).unwrap(), s);
    }

    #[test]
    fn loss_selection_directions() {
        let s = degrees_set();
        let losses = [0.5, 0.1, 0.9, 0.3, 0.9, 0.2, 0.7];
        let hard = select_by_loss(&s, &losses, 3.0 / 7.0, SvpDirection::Hardest).unwrap();
        let easy = select_by_loss(&s, &losses, 3.0 / 7.0, SvpDirection::Easiest).unwrap();
        let idx = |set: &InteractionSet| set.pairs().map(|(u, i)| s.index_of(u, i).unwrap()).collect::<Vec<_>>();
        assert_eq!(idx(&hard), vec![2, 4, 6]);
        assert_eq!(idx(&easy), vec![1, 3, 5]);
        assert_eq!(select_by_loss(&s, &losses, 1.0, SvpDirection::Easiest).unwrap(), s);
    }

    #[test]
    fn cosine_extremes() {
        let a = [1.0, -2.0, 0.5];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_relative_eq!(cosine_distance(&a, &a), 0.0, epsilon = 1e-15);
        assert_relative_eq!(cosine_distance(&a, &neg), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn self_match_is_zero() {
        let cfg = TrainConfig {
            embedding_dim: 4,
            ..Default::default()
        };
        let m = model::init_model(3, 6, &cfg, None).unwrap();
        let triples = vec![Triple::new(0, 3, 1), Triple::new(1, 0, 2), Triple::new(2, 4, 5)];
        let d = gradient_matching_distance(&m, &triples, &triples, &[1.0; 3], 1.7, MatchingDistance::CosinePerMatrix);
        assert!(d.abs() < 1e-12);
        let e = gradient_matching_distance(&m, &triples, &triples, &[1.0; 3], 3.0, MatchingDistance::Euclidean);
        assert!(e.abs() < 1e-24);
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            embedding_dim: 3,
            seed: 2,
            ..Default::default()
        };
        let m = model::init_model(3, 6, &cfg, None).unwrap();
        let real = vec![Triple::new(0, 3, 1), Triple::new(1, 0, 2)];
        let syn = vec![Triple::new(0, 3, 2), Triple::new(1, 5, 4), Triple::new(2, 4, 0), Triple::new(2, 1, 3)];
        let weights = vec![0.3, 0.6, 0.2, 0.8];
        let n = real.len() as f64;
        let rg = dense_gradient(&m, &real, |_| 1.0 / n);
        for kind in [MatchingDistance::CosinePerMatrix, MatchingDistance::Euclidean] {
            let (_, grad) = distance_weight_gradient(&m, &syn, &weights, 2.0, &rg, kind);
            for k in 0..weights.len() {
                let h = 1e-6;
                let mut up = weights.clone();
                up[k] += h;
                let mut dn = weights.clone();
                dn[k] -= h;
                let fd = (gradient_matching_distance(&m, &real, &syn, &up, 2.0, kind)
                    - gradient_matching_distance(&m, &real, &syn, &dn, 2.0, kind))
                    / (2.0 * h);
                assert_relative_eq!(grad[k], fd, epsilon = 1e-8, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn zero_lr_gradmatch_keeps_mask() {
        let s = degrees_set();
        let pool = DataPool::original_only(&s);
        let cfg = BaselineConfig {
            method: Method::Gradmatch,
            ratio: 0.5,
            gm_outer_epochs: 1,
            gm_lr: 0.0,
            ..Default::default()
        };
        let bb = TrainConfig {
            embedding_dim: 4,
            ..Default::default()
        };
        let out = gradmatch_condense(&pool, &s, &bb, &cfg, 16).unwrap();
        let init = condense::init_probabilities(&pool, 3.5, condense::InitScheme::UniformBudget, 1e-4).unwrap();
        assert_eq!(out.mask, init);
        assert_eq!(out.monitor.len(), 1);
    }

    #[test]
    fn gradmatch_stays_feasible() {
        let s = degrees_set();
        let pool = DataPool::original_only(&s);
        let cfg = BaselineConfig {
            ratio: 0.5,
            gm_outer_epochs: 20,
            gm_lr: 5.0,
            ..Default::default()
        };
        let bb = TrainConfig {
            embedding_dim: 4,
            ..Default::default()
        };
        let out = gradmatch_condense(&pool, &s, &bb, &cfg, 16).unwrap();
        for r in out.monitor.records() {
            assert!(r.sum_s <= 3.5 + 1e-9);
        }
        assert!(out.mask.is_feasible());
    }
}
