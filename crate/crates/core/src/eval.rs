//! Full-catalog top-K evaluation: Recall@K, NDCG@K, per-group breakdowns and
//! embedding export.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{DatasetSplit, InteractionSet, UserGroup, UserGroupPartition};
use crate::error::{Error, Result};
use crate::model::{EmbeddingModel, Embeddings};

/// Top-`k` items for `user` among items it has no training pair with.
/// Ties are broken by ascending item id.
pub fn rank_items(emb: &Embeddings<'_>, train: &InteractionSet, user: usize, k: usize) -> Vec<usize> {
    let scores = emb.user_scores(user);
    top_k_excluding(&scores, train.user_items(user), k)
}

/// Indices of the `k` largest `scores`, skipping the sorted `excluded` ids.
pub fn top_k_excluding(scores: &[f64], excluded: &[usize], k: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| excluded.binary_search(i).is_err())
        .map(|(i, &s)| (s, i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k == 0 {
        return Vec::new();
    }
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, i)| i).collect()
}

#[inline]
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Binary-relevance recall and NDCG of one ranking against `relevant`
/// (sorted) at every cutoff in `ks`.
fn ranking_metrics(ranking: &[usize], relevant: &[usize], ks: &[usize]) -> Vec<(f64, f64)> {
    let hits: Vec<bool> = ranking.iter().map(|i| relevant.binary_search(i).is_ok()).collect();
    ks.iter()
        .map(|&k| {
            let top = &hits[..k.min(hits.len())];
            let n_hit = top.iter().filter(|h| **h).count();
            let dcg: f64 = top
                .iter()
                .enumerate()
                .filter(|(_, h)| **h)
                .map(|(p, _)| discount(p + 1))
                .sum();
            let idcg: f64 = (1..=k.min(relevant.len())).map(discount).sum();
            (n_hit as f64 / relevant.len() as f64, dcg / idcg)
        })
        .collect()
}

/// Per-user `(recall, ndcg)` at each `k`, for every user with test items, in
/// ascending user order.
fn per_user_metrics(
    model: &EmbeddingModel,
    train: &InteractionSet,
    test: &InteractionSet,
    ks: &[usize],
) -> Result<Vec<(usize, Vec<(f64, f64)>)>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config(format!("cutoffs must be non-empty and >= 1, got {ks:?}")));
    }
    train.check_same_space(test)?;
    if model.n_users() != train.n_users() || model.n_items() != train.n_items() {
        return Err(Error::Contract("model and evaluation data id spaces differ".into()));
    }
    let emb = model.embeddings();
    let k_max = *ks.iter().max().expect("non-empty");
    Ok((0..test.n_users())
        .into_par_iter()
        .filter(|&u| test.degree(u) > 0)
        .map(|u| {
            let ranking = rank_items(&emb, train, u, k_max);
            (u, ranking_metrics(&ranking, test.user_items(u), ks))
        })
        .collect())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean Recall@k over users with at least one test item.
pub fn recall_at_k(model: &EmbeddingModel, train: &InteractionSet, test: &InteractionSet, k: usize) -> Result<f64> {
    let rows = per_user_metrics(model, train, test, &[k])?;
    Ok(mean(rows.iter().map(|(_, m)| m[0].0)))
}

/// Mean binary-relevance NDCG@k over users with at least one test item.
pub fn ndcg_at_k(model: &EmbeddingModel, train: &InteractionSet, test: &InteractionSet, k: usize) -> Result<f64> {
    let rows = per_user_metrics(model, train, test, &[k])?;
    Ok(mean(rows.iter().map(|(_, m)| m[0].1)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    /// `recall@K` / `ndcg@K` → value.
    pub metrics: BTreeMap<String, f64>,
    /// group name → metric key → value.
    pub groups: BTreeMap<String, BTreeMap<String, f64>>,
    pub group_sizes: BTreeMap<String, usize>,
    pub n_evaluated_users: usize,
}

impl EvalReport {
    pub fn get(&self, metric: &str, k: usize) -> Option<f64> {
        self.metrics.get(&format!("{metric}@{k}")).copied()
    }

    /// Flat `metric@K` and `group.metric@K` map.
    pub fn flat(&self) -> BTreeMap<String, f64> {
        let mut out = self.metrics.clone();
        for (g, m) in &self.groups {
            for (k, v) in m {
                out.insert(format!("{g}.{k}"), *v);
            }
        }
        out
    }

    /// Writes the flat metrics plus `metadata` as a JSON object.
    pub fn write_json(&self, path: &Path, metadata: serde_json::Value) -> Result<()> {
        let mut obj = serde_json::Map::new();
        for (k, v) in self.flat() {
            obj.insert(k, serde_json::json!(v));
        }
        obj.insert("n_evaluated_users".into(), serde_json::json!(self.n_evaluated_users));
        for (g, n) in &self.group_sizes {
            obj.insert(format!("{g}.n_users"), serde_json::json!(n));
        }
        obj.insert("metadata".into(), metadata);
        let text = serde_json::to_string_pretty(&serde_json::Value::Object(obj))
            .map_err(|e| Error::Contract(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Overall and optional per-group metrics, ranking against `split.train` and
/// scoring against `split.test`.
pub fn evaluate(
    model: &EmbeddingModel,
    split: &DatasetSplit,
    ks: &[usize],
    groups: Option<&UserGroupPartition>,
) -> Result<EvalReport> {
    evaluate_against(model, &split.train, &split.test, ks, groups)
}

pub fn evaluate_against(
    model: &EmbeddingModel,
    exclusion: &InteractionSet,
    target: &InteractionSet,
    ks: &[usize],
    groups: Option<&UserGroupPartition>,
) -> Result<EvalReport> {
    let rows = per_user_metrics(model, exclusion, target, ks)?;
    let summarize = |subset: &[&(usize, Vec<(f64, f64)>)]| -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (j, k) in ks.iter().enumerate() {
            m.insert(format!("recall@{k}"), mean(subset.iter().map(|r| r.1[j].0)));
            m.insert(format!("ndcg@{k}"), mean(subset.iter().map(|r| r.1[j].1)));
        }
        m
    };
    let all: Vec<_> = rows.iter().collect();
    let mut report = EvalReport {
        metrics: summarize(&all),
        n_evaluated_users: rows.len(),
        ..Default::default()
    };
    if let Some(part) = groups {
        for g in UserGroup::ALL {
            let members = part.members(g);
            let subset: Vec<_> = rows
                .iter()
                .filter(|(u, _)| members.binary_search(u).is_ok())
                .collect();
            report.group_sizes.insert(g.name().into(), subset.len());
            report.groups.insert(g.name().into(), summarize(&subset));
        }
    }
    Ok(report)
}

/// Writes the base factors as
/// `# dim <d>` then `{user|item}<TAB>id<TAB>v_1<TAB>…<TAB>v_d`.
pub fn export_embeddings(model: &EmbeddingModel, path: &Path) -> Result<()> {
    if !model.is_finite() {
        return Err(Error::Contract("refusing to export non-finite embeddings".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let dim = model.dim();
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "# dim\t{dim}")?;
        for (tag, rows) in [("user", model.user_factors()), ("item", model.item_factors())] {
            for (id, row) in rows.chunks_exact(dim).enumerate() {
                write!(w, "{tag}\t{id}")?;
                for v in row {
                    write!(w, "\t{v}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Reads an [`export_embeddings`] file back into an MF model.
pub fn import_embeddings(path: &Path) -> Result<EmbeddingModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut dim = None;
    let mut users: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut items: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols[0] == "# dim" {
            dim = Some(cols.get(1).and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| perr(n + 1, "bad dim".into()))?);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let d = dim.ok_or_else(|| perr(n + 1, "missing `# dim` header".into()))?;
        if cols.len() != d + 2 {
            return Err(perr(n + 1, format!("expected {} columns, got {}", d + 2, cols.len())));
        }
        let id: usize = cols[1].parse().map_err(|_| perr(n + 1, "bad id".into()))?;
        let vals = cols[2..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| perr(n + 1, format!("bad value {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let target = match cols[0] {
            "user" => &mut users,
            "item" => &mut items,
            other => return Err(perr(n + 1, format!("unknown row kind {other:?}"))),
        };
        target.insert(id, vals);
    }
    let dim = dim.ok_or_else(|| perr(0, "missing `# dim` header".into()))?;
    let flatten = |m: BTreeMap<usize, Vec<f64>>, kind: &str| -> Result<Vec<f64>> {
        if m.keys().enumerate().any(|(a, b)| a != *b) {
            return Err(perr(0, format!("{kind} ids are not contiguous")));
        }
        Ok(m.into_values().flatten().collect())
    };
    let (nu, ni) = (users.len(), items.len());
    EmbeddingModel::from_factors(nu, ni, dim, flatten(users, "user")?, flatten(items, "item")?)
}

/// Orders `(score, id)` pairs the way rankings do: score descending, id ascending.
pub fn ranking_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}
