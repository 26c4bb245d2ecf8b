//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Run with `cargo test -p dconrec --test acceptance`.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use dconrec::augment::DataPool;
use dconrec::baselines::gradmatch_condense;
use dconrec::condense::{self, log_prob, log_prob_grad, project_feasible, sample_mask, ProbabilityMask, SampledMask};
use dconrec::config::{CondenseMethod, RunConfig};
use dconrec::data::InteractionSet;
use dconrec::eval::{ndcg_at_k, recall_at_k};
use dconrec::model::{weighted_bpr, weighted_bpr_grad, EmbeddingModel, Triple};
use dconrec::pipeline::{self, CondenseOutcome};
use dconrec::synthetic::{planted_benchmark, Benchmark, PlantedConfig};

// Pinned tolerances.
const PGE_SAMPLES: usize = 100_000;
const PGE_SIGMAS: f64 = 3.0;
const PROJECTION_CASES: usize = 10_000;
const IDEMPOTENCE_TOL: f64 = 1e-12;
const EXPANSION_SLACK: f64 = 1e-9;
const KKT_TOL: f64 = 1e-6;
const BPR_FD_TOL: f64 = 1e-4;
const LOG_PROB_FD_TOL: f64 = 1e-6;
const BUDGET_SLACK: f64 = 1e-9;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SPEEDUP_REQUIRED: f64 = 2.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// 1. Score-function estimator against exact enumeration.

fn mask_probability(probs: &[f64], bits: usize) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(k, &s)| if bits >> k & 1 == 1 { s } else { 1.0 - s })
        .product()
}

fn criterion_pge() -> Verdict {
    const N: usize = 8;
    let support = Arc::new(InteractionSet::new(1, N, (0..N).map(|i| (0, i))).unwrap());
    let mut worst = 0.0f64;
    let mut failures = 0;
    for case in 0..10u64 {
        let mut r = rng(100 + case);
        let table: Vec<f64> = (0..1usize << N).map(|_| r.random_range(0.0..2.0)).collect();
        let probs: Vec<f64> = (0..N).map(|_| r.random_range(0.05..0.95)).collect();
        // d/ds_k Σ_M p(M) ℓ(M) = Σ_{M∖k} p(M∖k) (ℓ(M, m_k=1) − ℓ(M, m_k=0)).
        let exact: Vec<f64> = (0..N)
            .map(|k| {
                let mut others = probs.clone();
                others[k] = 1.0;
                (0..1usize << N)
                    .filter(|m| m >> k & 1 == 1)
                    .map(|m| mask_probability(&others, m) * (table[m] - table[m & !(1 << k)]))
                    .sum()
            })
            .collect();
        let mask = ProbabilityMask::new(support.clone(), probs.clone(), N as f64).unwrap();
        let mut sum = vec![0.0; N];
        let mut sum_sq = vec![0.0; N];
        let mut draw_rng = dconrec::rng::seeded(200 + case);
        for _ in 0..PGE_SAMPLES {
            let sample = sample_mask(&mask, &mut draw_rng);
            let index = sample.bits.iter().enumerate().fold(0usize, |acc, (k, &b)| acc | (b as usize) << k);
            let grad = log_prob_grad(&mask, &sample, 1e-4);
            for k in 0..N {
                let g = table[index] * grad[k];
                sum[k] += g;
                sum_sq[k] += g * g;
            }
        }
        let n = PGE_SAMPLES as f64;
        for k in 0..N {
            let mean = sum[k] / n;
            let var = (sum_sq[k] / n - mean * mean) * n / (n - 1.0);
            let se = (var / n).sqrt();
            let z = (mean - exact[k]).abs() / se;
            worst = worst.max(z);
            if z > PGE_SIGMAS {
                failures += 1;
            }
        }
    }
    verdict(
        failures == 0,
        format!("80 entries, worst |mean − exact| = {worst:.2} standard errors (limit {PGE_SIGMAS})"),
    )
}

// ---------------------------------------------------------------------------
// 2. Projection properties and a KKT / grid oracle in three dimensions.

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Enumerates every active set of `{0 ≤ x ≤ 1, Σx ≤ c}` in three dimensions
/// and returns the closest feasible KKT candidate.
fn kkt_oracle(x: &[f64; 3], c: f64) -> [f64; 3] {
    let mut best: Option<([f64; 3], f64)> = None;
    for code in 0..27usize {
        let state = [code % 3, code / 3 % 3, code / 9];
        for sum_active in [false, true] {
            let free: Vec<usize> = (0..3).filter(|&i| state[i] == 2).collect();
            let ones = state.iter().filter(|&&s| s == 1).count() as f64;
            let mu = if sum_active {
                if free.is_empty() {
                    continue;
                }
                (free.iter().map(|&i| x[i]).sum::<f64>() + ones - c) / free.len() as f64
            } else {
                0.0
            };
            if mu < -1e-12 {
                continue;
            }
            let mut y = [0.0; 3];
            let mut ok = true;
            for i in 0..3 {
                y[i] = match state[i] {
                    0 => 0.0,
                    1 => 1.0,
                    _ => x[i] - mu,
                };
                // Sign conditions of the box multipliers.
                ok &= match state[i] {
                    0 => x[i] - mu <= 1e-12,
                    1 => x[i] - mu >= 1.0 - 1e-12,
                    _ => (-1e-12..=1.0 + 1e-12).contains(&y[i]),
                };
            }
            let total: f64 = y.iter().sum();
            ok &= total <= c + 1e-12;
            if sum_active {
                ok &= (total - c).abs() <= 1e-9;
            }
            if ok {
                let d = dist2(&y, x);
                if best.as_ref().is_none_or(|(_, bd)| d < *bd) {
                    best = Some((y, d));
                }
            }
        }
    }
    best.expect("the feasible set is non-empty").0
}

fn criterion_projection() -> Verdict {
    let mut r = rng(7);
    let mut worst_idem = 0.0f64;
    let mut worst_firm = f64::NEG_INFINITY;
    let mut worst_nonexp = f64::NEG_INFINITY;
    let mut infeasible = 0;
    for _ in 0..PROJECTION_CASES {
        let n = r.random_range(2..=50);
        let budget = r.random_range(0.05..n as f64);
        let spread = r.random_range(0.1..3.0);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-spread..1.0 + spread)).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-spread..1.0 + spread)).collect();
        let px = project_feasible(&x, budget);
        let py = project_feasible(&y, budget);
        if px.iter().any(|&v| !(0.0..=1.0).contains(&v)) || px.iter().sum::<f64>() > budget + BUDGET_SLACK {
            infeasible += 1;
        }
        let ppx = project_feasible(&px, budget);
        worst_idem = worst_idem.max(px.iter().zip(&ppx).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let dp: Vec<f64> = px.iter().zip(&py).map(|(a, b)| a - b).collect();
        let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        // ‖Px − Py‖² ≤ ⟨Px − Py, x − y⟩ and ‖Px − Py‖ ≤ ‖x − y‖.
        worst_firm = worst_firm.max(dot(&dp, &dp) - dot(&dp, &dx));
        worst_nonexp = worst_nonexp.max(dot(&dp, &dp).sqrt() - dot(&dx, &dx).sqrt());
    }

    let mut worst_kkt = 0.0f64;
    let mut grid_violations = 0;
    for case in 0..300 {
        let x = [r.random_range(-0.5..1.5), r.random_range(-0.5..1.5), r.random_range(-0.5..1.5)];
        let c = r.random_range(0.1..3.0);
        let p = project_feasible(&x, c);
        let oracle = kkt_oracle(&x, c);
        worst_kkt = worst_kkt.max(p.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        if case < 30 {
            // No feasible grid point is closer than the projection.
            let d = dist2(&p, &x);
            let steps = 50;
            for a in 0..=steps {
                for b in 0..=steps {
                    for e in 0..=steps {
                        let g = [a as f64 / steps as f64, b as f64 / steps as f64, e as f64 / steps as f64];
                        if g.iter().sum::<f64>() <= c && dist2(&g, &x) < d - 1e-12 {
                            grid_violations += 1;
                        }
                    }
                }
            }
        }
    }
    let pass = infeasible == 0
        && worst_idem <= IDEMPOTENCE_TOL
        && worst_firm <= EXPANSION_SLACK
        && worst_nonexp <= EXPANSION_SLACK
        && worst_kkt <= KKT_TOL
        && grid_violations == 0;
    verdict(
        pass,
        format!(
            "{PROJECTION_CASES} cases: infeasible {infeasible}, idempotence {worst_idem:.1e}, firm slack {worst_firm:.1e}, \
             nonexpansive slack {worst_nonexp:.1e}; 3-d KKT max diff {worst_kkt:.1e}, grid violations {grid_violations}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Gradient fidelity.

fn random_model(r: &mut ChaCha8Rng, lightgcn: bool) -> (EmbeddingModel, Vec<Triple>, f64, f64) {
    let nu = r.random_range(2..6);
    let ni = r.random_range(3..8);
    let d = r.random_range(2..6);
    let users: Vec<f64> = (0..nu * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let items: Vec<f64> = (0..ni * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut model = EmbeddingModel::from_factors(nu, ni, d, users, items).unwrap();
    let mut triples = Vec::new();
    for _ in 0..r.random_range(1..10) {
        let u = r.random_range(0..nu);
        let pos = r.random_range(0..ni);
        let mut neg = r.random_range(0..ni);
        while neg == pos {
            neg = r.random_range(0..ni);
        }
        triples.push(Triple::new(u, pos, neg));
    }
    if lightgcn {
        let pairs: Vec<(usize, usize)> = triples.iter().map(|t| (t.user, t.pos)).collect();
        let train = InteractionSet::new(nu, ni, pairs).unwrap();
        model = model.with_lightgcn(&train, r.random_range(1..4)).unwrap();
    }
    let weight = r.random_range(0.1..2.0);
    let l2 = if r.random_bool(0.5) { r.random_range(0.0..0.1) } else { 0.0 };
    (model, triples, weight, l2)
}

fn criterion_gradients() -> Verdict {
    let mut r = rng(11);
    let mut worst_bpr = 0.0f64;
    for case in 0..100 {
        let (model, triples, weight, l2) = random_model(&mut r, case % 2 == 1);
        let (_, grad) = weighted_bpr_grad(&model, &triples, weight, l2).unwrap();
        let h = 1e-6;
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for side in 0..2 {
            let rows = if side == 0 { model.n_users() } else { model.n_items() };
            for row in 0..rows {
                for c in 0..model.dim() {
                    let eval = |delta: f64| {
                        let mut m = model.clone();
                        if side == 0 {
                            m.user_row_mut(row)[c] += delta;
                        } else {
                            m.item_row_mut(row)[c] += delta;
                        }
                        weighted_bpr(&m, &triples, weight, l2).unwrap()
                    };
                    numeric.push((eval(h) - eval(-h)) / (2.0 * h));
                    let map = if side == 0 { &grad.users } else { &grad.items };
                    analytic.push(map.get(&row).map_or(0.0, |g| g[c]));
                }
            }
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = dot(&analytic, &analytic).sqrt().max(dot(&numeric, &numeric).sqrt()).max(1e-8);
        worst_bpr = worst_bpr.max(diff / scale);
    }

    let mut worst_lp = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(2..12);
        let probs: Vec<f64> = (0..n).map(|_| r.random_range(0.02..0.98)).collect();
        let bits: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let support = Arc::new(InteractionSet::new(1, n, (0..n).map(|i| (0, i))).unwrap());
        let mask = ProbabilityMask::new(support, probs.clone(), n as f64).unwrap();
        let analytic = log_prob_grad(&mask, &SampledMask { bits: bits.clone() }, 1e-4);
        let h = 1e-7;
        for k in 0..n {
            let mut up = probs.clone();
            let mut down = probs.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (log_prob(&up, &bits) - log_prob(&down, &bits)) / (2.0 * h);
            worst_lp = worst_lp.max((analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()));
        }
    }
    verdict(
        worst_bpr < BPR_FD_TOL && worst_lp < LOG_PROB_FD_TOL,
        format!("BPR max relative error {worst_bpr:.2e} (limit {BPR_FD_TOL:.0e}); ln p max relative error {worst_lp:.2e} (limit {LOG_PROB_FD_TOL:.0e})"),
    )
}

// ---------------------------------------------------------------------------
// Shared planted-benchmark runs for criteria 4, 5 and 8.

fn profile(seed: u64, overrides: &[&str]) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/planted.toml");
    let mut all: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    all.push(format!("seed={seed}"));
    RunConfig::load(Some(&path), &all).expect("benchmark profile loads")
}

struct BudgetCheck {
    label: String,
    size: usize,
    limit: usize,
    max_sum: f64,
    budget: f64,
}

impl BudgetCheck {
    fn from_outcome(label: String, outcome: &CondenseOutcome, n_train: usize, ratio: f64) -> Self {
        let budget = ratio * n_train as f64;
        Self {
            label,
            size: outcome.condensed.len(),
            limit: budget.ceil() as usize,
            max_sum: outcome.monitor.as_ref().map_or(0.0, |m| m.max_sum_s()),
            budget,
        }
    }

    fn ok(&self) -> bool {
        self.size <= self.limit && self.max_sum <= self.budget + BUDGET_SLACK
    }
}

struct SeedRun {
    random: f64,
    dconrec: f64,
    no_aug: f64,
    halves: (f64, f64),
    wrong_selected: usize,
    budget: Vec<BudgetCheck>,
}

fn run_seed(seed: u64) -> dconrec::Result<SeedRun> {
    let cfg = profile(seed, &[]);
    let bench: Benchmark = planted_benchmark(&PlantedConfig { seed, ..Default::default() }, &cfg, 0.2)?;
    let (train, val) = (&bench.split.train, &bench.split.validation);
    let plain = DataPool::original_only(train);
    let random_cfg = RunConfig {
        method: CondenseMethod::Random,
        ..cfg.clone()
    };
    let with_aug = pipeline::condense_stage(&bench.pool, train, val, &cfg)?;
    let no_aug = pipeline::condense_stage(&plain, train, val, &cfg)?;
    let random = pipeline::condense_stage(&plain, train, val, &random_cfg)?;
    let recall = |o: &CondenseOutcome| -> dconrec::Result<f64> {
        let (_, report) = pipeline::train_eval_stage(&o.condensed, &bench.split, &cfg)?;
        Ok(report.get("recall", 10).expect("k = 10 evaluated"))
    };
    let n = train.len();
    Ok(SeedRun {
        random: recall(&random)?,
        dconrec: recall(&with_aug)?,
        no_aug: recall(&no_aug)?,
        halves: with_aug.monitor.as_ref().expect("lpge records").half_means(),
        wrong_selected: bench.wrong_cluster(&with_aug.condensed),
        budget: vec![
            BudgetCheck::from_outcome(format!("seed {seed} dconrec"), &with_aug, n, cfg.ratio),
            BudgetCheck::from_outcome(format!("seed {seed} dconrec-noaug"), &no_aug, n, cfg.ratio),
            BudgetCheck::from_outcome(format!("seed {seed} random"), &random, n, cfg.ratio),
        ],
    })
}

fn criterion_monitor(runs: &[SeedRun]) -> Verdict {
    let ok = runs.iter().filter(|r| r.halves.1 <= r.halves.0).count();
    let halves: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.2e}->{:.2e}", r.halves.0, r.halves.1))
        .collect();
    verdict(ok >= 4, format!("second-half mean ≤ first-half mean on {ok}/5 seeds [{}]", halves.join(", ")))
}

fn criterion_ordering(runs: &[SeedRun]) -> Verdict {
    let dc = median(runs.iter().map(|r| r.dconrec).collect());
    let rnd = median(runs.iter().map(|r| r.random).collect());
    let noaug = median(runs.iter().map(|r| r.no_aug).collect());
    let wrong: Vec<usize> = runs.iter().map(|r| r.wrong_selected).collect();
    verdict(
        dc > rnd && dc > noaug,
        format!(
            "median Recall@10: DConRec {dc:.4}, Random {rnd:.4}, DConRec w/o pre-augmentation {noaug:.4}; wrong-cluster pairs selected {wrong:?}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Data-update time of LPGE against one-step gradient matching.

fn criterion_efficiency(budget: &mut Vec<BudgetCheck>) -> dconrec::Result<Verdict> {
    let cfg = profile(0, &["outer_epochs=100", "gm_outer_epochs=100", "gm_from_pool=true", "embedding_dim=64"]);
    let bench = planted_benchmark(&PlantedConfig::default(), &cfg, 0.2)?;
    let train = &bench.split.train;
    let lpge = condense::condense(&bench.pool, train, &cfg.backbone_config(), &cfg.condense_config())?;
    let gm = gradmatch_condense(&bench.pool, train, &cfg.backbone_config(), &cfg.baseline_config(), cfg.val_batch_size)?;
    let t_lpge: Duration = lpge.monitor.total_data_update();
    let t_gm: Duration = gm.monitor.total_data_update();
    let speedup = t_gm.as_secs_f64() / t_lpge.as_secs_f64();
    let b = cfg.ratio * train.len() as f64;
    for (label, c) in [("efficiency lpge", &lpge), ("efficiency gradmatch", &gm)] {
        let mut r = dconrec::rng::seeded(0);
        let condensed = condense::finalize_dataset(&c.mask, cfg.finalize, &mut r);
        budget.push(BudgetCheck {
            label: label.into(),
            size: condensed.len(),
            limit: b.ceil() as usize,
            max_sum: c.monitor.max_sum_s(),
            budget: b,
        });
    }
    Ok(verdict(
        speedup >= SPEEDUP_REQUIRED,
        format!(
            "100 data-update epochs over a {}-pair mask: LPGE {:.1?}, GradMatch {:.1?}, speed-up {speedup:.1}x (required {SPEEDUP_REQUIRED}x)",
            bench.pool.len(),
            t_lpge,
            t_gm
        ),
    ))
}

// ---------------------------------------------------------------------------
// 7. Ranking metrics against an exhaustive oracle.

/// Rank of `item` among the non-excluded items: the number of candidates
/// scored strictly higher, or equal with a smaller id.
fn oracle_rank(scores: &[f64], excluded: &[usize], item: usize) -> usize {
    (0..scores.len())
        .filter(|j| !excluded.contains(j) && *j != item)
        .filter(|&j| scores[j] > scores[item] || (scores[j] == scores[item] && j < item))
        .count()
}

fn oracle_metrics(scores: &[Vec<f64>], train: &[Vec<usize>], test: &[Vec<usize>], k: usize) -> (f64, f64) {
    let (mut recall, mut ndcg, mut users) = (0.0, 0.0, 0.0);
    for u in 0..scores.len() {
        if test[u].is_empty() {
            continue;
        }
        let mut ranks: Vec<usize> = test[u].iter().map(|&i| oracle_rank(&scores[u], &train[u], i)).filter(|&r| r < k).collect();
        ranks.sort_unstable();
        recall += ranks.len() as f64 / test[u].len() as f64;
        let dcg: f64 = ranks.iter().map(|&r| 1.0 / ((r + 2) as f64).log2()).sum();
        let idcg: f64 = (0..k.min(test[u].len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        ndcg += dcg / idcg;
        users += 1.0;
    }
    (recall / users, ndcg / users)
}

fn score_model(scores: &[Vec<f64>]) -> EmbeddingModel {
    let ni = scores[0].len();
    let users: Vec<f64> = scores.iter().flatten().copied().collect();
    let mut items = vec![0.0; ni * ni];
    for i in 0..ni {
        items[i * ni + i] = 1.0;
    }
    EmbeddingModel::from_factors(scores.len(), ni, ni, users, items).unwrap()
}

fn criterion_metrics() -> Verdict {
    let mut r = rng(13);
    let mut mismatches = 0;
    let mut transform_changes = 0;
    for case in 0..10 {
        let ni = r.random_range(5..12);
        // Coarse scores so ties occur.
        let scores: Vec<Vec<f64>> = (0..3).map(|_| (0..ni).map(|_| r.random_range(0..8) as f64 / 4.0).collect()).collect();
        let mut train_sets = Vec::new();
        let mut test_sets = Vec::new();
        for _ in 0..3 {
            let mut items: Vec<usize> = (0..ni).collect();
            for i in (1..ni).rev() {
                items.swap(i, r.random_range(0..=i));
            }
            let n_train = r.random_range(0..3);
            let n_test = r.random_range(1..4);
            train_sets.push(items[..n_train].to_vec());
            test_sets.push(items[n_train..n_train + n_test].to_vec());
        }
        let pairs = |sets: &Vec<Vec<usize>>| -> InteractionSet {
            InteractionSet::new(3, ni, sets.iter().enumerate().flat_map(|(u, s)| s.iter().map(move |&i| (u, i)))).unwrap()
        };
        let (train, test) = (pairs(&train_sets), pairs(&test_sets));
        let model = score_model(&scores);
        for k in [1, 3, 5, 10] {
            let (or, on) = oracle_metrics(&scores, &train_sets, &test_sets, k);
            let got_r = recall_at_k(&model, &train, &test, k).unwrap();
            let got_n = ndcg_at_k(&model, &train, &test, k).unwrap();
            if got_r != or || got_n != on {
                mismatches += 1;
            }
        }
        // Strictly increasing transforms, two per instance.
        for t in 0..2 {
            let a = r.random_range(0.5..3.0);
            let b = r.random_range(-2.0..2.0);
            let f = |x: f64| -> f64 {
                if (case + t) % 2 == 0 {
                    a * x + b
                } else {
                    (a * x).exp() + x.powi(3) + b
                }
            };
            let transformed: Vec<Vec<f64>> = scores.iter().map(|row| row.iter().map(|&x| f(x)).collect()).collect();
            let tm = score_model(&transformed);
            for k in [1, 3, 5, 10] {
                if recall_at_k(&tm, &train, &test, k).unwrap() != recall_at_k(&model, &train, &test, k).unwrap()
                    || ndcg_at_k(&tm, &train, &test, k).unwrap() != ndcg_at_k(&model, &train, &test, k).unwrap()
                {
                    transform_changes += 1;
                }
            }
        }
    }
    verdict(
        mismatches == 0 && transform_changes == 0,
        format!("10 instances × 4 cutoffs: {mismatches} oracle mismatches; 20 monotone transforms: {transform_changes} metric changes"),
    )
}

fn criterion_budget(checks: &[BudgetCheck]) -> Verdict {
    let bad: Vec<&str> = checks.iter().filter(|c| !c.ok()).map(|c| c.label.as_str()).collect();
    let worst = checks.iter().map(|c| c.max_sum - c.budget).fold(f64::NEG_INFINITY, f64::max);
    verdict(
        bad.is_empty(),
        format!(
            "{} runs checked, max (Σs − r|D|) = {worst:.2e}, violations: {}",
            checks.len(),
            if bad.is_empty() { "none".to_string() } else { bad.join(", ") }
        ),
    )
}

fn report(id: usize, name: &str, elapsed: Duration, v: &Verdict) {
    println!(
        "[{}] criterion {id} {name}: {} ({elapsed:.1?})",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
    );
}

fn main() {
    let mut verdicts = Vec::new();
    let mut record = |id: usize, name: &str, elapsed: Duration, v: Verdict| {
        report(id, name, elapsed, &v);
        verdicts.push(v.pass);
    };

    let t = Instant::now();
    let v = criterion_pge();
    record(1, "policy-gradient unbiasedness", t.elapsed(), v);
    let t = Instant::now();
    let v = criterion_projection();
    record(2, "projection", t.elapsed(), v);
    let t = Instant::now();
    let v = criterion_gradients();
    record(3, "gradient fidelity", t.elapsed(), v);

    // Efficiency runs first and alone so its timings are not contended.
    let mut budget = Vec::new();
    let t = Instant::now();
    let eff = criterion_efficiency(&mut budget).unwrap_or_else(|e| verdict(false, format!("run failed: {e}")));
    let eff_time = t.elapsed();

    let t_bench = Instant::now();
    let runs: Vec<dconrec::Result<SeedRun>> = SEEDS.par_iter().map(|&s| run_seed(s)).collect();
    let runs: Result<Vec<SeedRun>, _> = runs.into_iter().collect();
    let bench_time = t_bench.elapsed();
    match runs {
        Ok(runs) => {
            record(4, "convergence monitor", bench_time, criterion_monitor(&runs));
            record(5, "end-to-end ordering", bench_time, criterion_ordering(&runs));
            record(6, "efficiency", eff_time, eff);
            budget.extend(runs.into_iter().flat_map(|r| r.budget));
        }
        Err(e) => {
            for (id, name) in [(4, "convergence monitor"), (5, "end-to-end ordering")] {
                record(id, name, bench_time, verdict(false, format!("benchmark run failed: {e}")));
            }
            record(6, "efficiency", eff_time, eff);
        }
    }
    let t = Instant::now();
    let v = criterion_metrics();
    record(7, "metric correctness", t.elapsed(), v);
    let t = Instant::now();
    let v = criterion_budget(&budget);
    record(8, "budget discipline", t.elapsed(), v);

    let failed = verdicts.iter().filter(|p| !**p).count();
    println!("acceptance: {}/{} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
