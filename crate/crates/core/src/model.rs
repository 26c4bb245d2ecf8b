//! Embedding recommenders trained with the BPR pairwise loss.
//!
//! Two architectures share one parameter layout (a `|U|×d` user matrix and an
//! `|I|×d` item matrix, row-major):
//!
//! * `Mf` scores `⟨p_u, q_i⟩` directly on the factors.
//! * `LightGcn` first propagates the stacked factors over the
//!   symmetric-normalised bipartite adjacency and averages layers `0..=L`.
//!   With `L = 0` it scores exactly like `Mf`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::InteractionSet;
use crate::error::{Error, Result};
use crate::eval;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mf,
    #[serde(alias = "lightgcn")]
    LightGcn,
}

impl Architecture {
    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::Mf => "mf",
            Architecture::LightGcn => "lightgcn",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mf" => Ok(Architecture::Mf),
            "lightgcn" => Ok(Architecture::LightGcn),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub architecture: Architecture,
    /// Propagation depth, only used by `LightGcn`.
    pub n_layers: usize,
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub adam_betas: (f64, f64),
    pub l2_reg: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub negatives_per_positive: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Mf,
            n_layers: 2,
            embedding_dim: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            adam_betas: (0.9, 0.999),
            l2_reg: 1e-4,
            batch_size: 2048,
            max_epochs: 200,
            early_stop_patience: 20,
            negatives_per_positive: 1,
            init_std: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2_reg >= 0.0) {
            return bad(format!("l2_reg must be non-negative, got {}", self.l2_reg));
        }
        if self.batch_size == 0 || self.negatives_per_positive == 0 {
            return bad("batch_size and negatives_per_positive must be positive".into());
        }
        if self.early_stop_patience > self.max_epochs && self.max_epochs > 0 {
            return bad(format!(
                "early_stop_patience ({}) exceeds max_epochs ({})",
                self.early_stop_patience, self.max_epochs
            ));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("adam betas must lie in [0, 1), got {:?}", self.adam_betas));
        }
        if !(self.init_std > 0.0) {
            return bad("init_std must be positive".into());
        }
        Ok(())
    }
}

/// Symmetric-normalised bipartite adjacency over stacked nodes
/// `[users; items]`, item `i` living at node `n_users + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n_nodes: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_interactions(train: &InteractionSet) -> Self {
        let n_users = train.n_users();
        let n_nodes = n_users + train.n_items();
        let item_deg = train.item_degrees();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
        for (u, i) in train.pairs() {
            let w = 1.0 / ((train.degree(u) as f64) * (item_deg[i] as f64)).sqrt();
            rows[u].push((n_users + i, w));
            rows[n_users + i].push((u, w));
        }
        let mut indptr = Vec::with_capacity(n_nodes + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (j, w) in row {
                indices.push(j);
                values.push(w);
            }
            indptr.push(indices.len());
        }
        Self {
            n_nodes,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entry `(row, col)`, zero when absent.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.indptr[row]..self.indptr[row + 1];
        match self.indices[range.clone()].binary_search(&col) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// `out = A · x` for a row-major `n_nodes × dim` matrix.
    fn multiply(&self, x: &[f64], dim: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for row in 0..self.n_nodes {
            let dst = &mut out[row * dim..(row + 1) * dim];
            for k in self.indptr[row]..self.indptr[row + 1] {
                let w = self.values[k];
                let src = &x[self.indices[k] * dim..(self.indices[k] + 1) * dim];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    /// `(1/(L+1)) Σ_{l=0..=L} A^l x`.
    fn layer_mean(&self, x: &[f64], dim: usize, n_layers: usize) -> Vec<f64> {
        let mut acc = x.to_vec();
        let mut cur = x.to_vec();
        let mut next = vec![0.0; x.len()];
        for _ in 0..n_layers {
            self.multiply(&cur, dim, &mut next);
            std::mem::swap(&mut cur, &mut next);
            acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += c);
        }
        let scale = 1.0 / (n_layers as f64 + 1.0);
        acc.iter_mut().for_each(|a| *a *= scale);
        acc
    }
}

/// Read-only view of the embeddings used for scoring.
#[derive(Debug, Clone, Copy)]
pub struct Embeddings<'a> {
    pub users: &'a [f64],
    pub items: &'a [f64],
    pub dim: usize,
}

impl<'a> Embeddings<'a> {
    #[inline]
    pub fn user(&self, u: usize) -> &'a [f64] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    #[inline]
    pub fn item(&self, i: usize) -> &'a [f64] {
        &self.items[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn score(&self, u: usize, i: usize) -> f64 {
        dot(self.user(u), self.item(i))
    }

    /// Scores of `u` against every item.
    pub fn user_scores(&self, u: usize) -> Vec<f64> {
        let eu = self.user(u);
        self.items.chunks_exact(self.dim).map(|q| dot(eu, q)).collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    n_users: usize,
    n_items: usize,
    dim: usize,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    architecture: Architecture,
    n_layers: usize,
    adjacency: Option<Arc<NormalizedAdjacency>>,
    propagated: OnceLock<Arc<(Vec<f64>, Vec<f64>)>>,
}

impl PartialEq for EmbeddingModel {
    fn eq(&self, other: &Self) -> bool {
        self.n_users == other.n_users
            && self.n_items == other.n_items
            && self.dim == other.dim
            && self.architecture == other.architecture
            && self.n_layers == other.n_layers
            && self.user_factors == other.user_factors
            && self.item_factors == other.item_factors
    }
}

/// Builds a model with i.i.d. `N(0, init_std²)` factors from `config.seed`.
pub fn init_model(
    n_users: usize,
    n_items: usize,
    config: &TrainConfig,
    adjacency_source: Option<&InteractionSet>,
) -> Result<EmbeddingModel> {
    init_model_seeded(n_users, n_items, config, adjacency_source, config.seed)
}

pub(crate) fn init_model_seeded(
    n_users: usize,
    n_items: usize,
    config: &TrainConfig,
    adjacency_source: Option<&InteractionSet>,
    seed: u64,
) -> Result<EmbeddingModel> {
    if n_users == 0 || n_items == 0 {
        return Err(Error::Config("model needs at least one user and one item".into()));
    }
    if config.embedding_dim == 0 {
        return Err(Error::Config("embedding_dim must be positive".into()));
    }
    let adjacency = match (config.architecture, adjacency_source) {
        (Architecture::LightGcn, Some(train)) => {
            if train.n_users() != n_users || train.n_items() != n_items {
                return Err(Error::Config("adjacency source has a different id space".into()));
            }
            Some(Arc::new(NormalizedAdjacency::from_interactions(train)))
        }
        (Architecture::LightGcn, None) => {
            return Err(Error::Config(
                "lightgcn requires a training set to build its adjacency".into(),
            ))
        }
        (Architecture::Mf, _) => None,
    };
    let dim = config.embedding_dim;
    let normal = Normal::new(0.0, config.init_std)
        .map_err(|e| Error::Config(format!("init_std: {e}")))?;
    let mut rng = rng::child(seed, 0x1417);
    let user_factors = (0..n_users * dim).map(|_| normal.sample(&mut rng)).collect();
    let item_factors = (0..n_items * dim).map(|_| normal.sample(&mut rng)).collect();
    Ok(EmbeddingModel {
        n_users,
        n_items,
        dim,
        user_factors,
        item_factors,
        architecture: config.architecture,
        n_layers: match config.architecture {
            Architecture::Mf => 0,
            Architecture::LightGcn => config.n_layers,
        },
        adjacency,
        propagated: OnceLock::new(),
    })
}

impl EmbeddingModel {
    /// Model with explicit factors (row-major).
    pub fn from_factors(
        n_users: usize,
        n_items: usize,
        dim: usize,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || user_factors.len() != n_users * dim || item_factors.len() != n_items * dim {
            return Err(Error::Config(format!(
                "factor shapes do not match {n_users}x{dim} / {n_items}x{dim}"
            )));
        }
        Ok(Self {
            n_users,
            n_items,
            dim,
            user_factors,
            item_factors,
            architecture: Architecture::Mf,
            n_layers: 0,
            adjacency: None,
            propagated: OnceLock::new(),
        })
    }

    /// Switches to LightGCN scoring over the adjacency of `train`.
    pub fn with_lightgcn(mut self, train: &InteractionSet, n_layers: usize) -> Result<Self> {
        if train.n_users() != self.n_users || train.n_items() != self.n_items {
            return Err(Error::Config("adjacency source has a different id space".into()));
        }
        self.architecture = Architecture::LightGcn;
        self.n_layers = n_layers;
        self.adjacency = Some(Arc::new(NormalizedAdjacency::from_interactions(train)));
        self.propagated = OnceLock::new();
        Ok(self)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn adjacency(&self) -> Option<&NormalizedAdjacency> {
        self.adjacency.as_deref()
    }

    pub fn user_factors(&self) -> &[f64] {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.item_factors
    }

    pub fn user_row(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_row(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn user_row_mut(&mut self, u: usize) -> &mut [f64] {
        self.propagated = OnceLock::new();
        &mut self.user_factors[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_row_mut(&mut self, i: usize) -> &mut [f64] {
        self.propagated = OnceLock::new();
        &mut self.item_factors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.user_factors.iter().chain(&self.item_factors).all(|v| v.is_finite())
    }

    /// Scoring embeddings: the factors themselves for MF, the layer-averaged
    /// propagation for LightGCN (computed once and cached until the next
    /// mutation).
    pub fn embeddings(&self) -> Embeddings<'_> {
        match (&self.adjacency, self.architecture) {
            (Some(adj), Architecture::LightGcn) if self.n_layers > 0 => {
                let cached = self.propagated.get_or_init(|| {
                    let stacked = self.stacked();
                    let out = adj.layer_mean(&stacked, self.dim, self.n_layers);
                    let (u, i) = out.split_at(self.n_users * self.dim);
                    Arc::new((u.to_vec(), i.to_vec()))
                });
                Embeddings {
                    users: &cached.0,
                    items: &cached.1,
                    dim: self.dim,
                }
            }
            _ => Embeddings {
                users: &self.user_factors,
                items: &self.item_factors,
                dim: self.dim,
            },
        }
    }

    fn stacked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.user_factors.len() + self.item_factors.len());
        v.extend_from_slice(&self.user_factors);
        v.extend_from_slice(&self.item_factors);
        v
    }

    fn check_ids(&self, u: usize, i: usize) -> Result<()> {
        if u >= self.n_users {
            return Err(Error::IdOutOfRange {
                kind: "user",
                id: u,
                bound: self.n_users,
            });
        }
        if i >= self.n_items {
            return Err(Error::IdOutOfRange {
                kind: "item",
                id: i,
                bound: self.n_items,
            });
        }
        Ok(())
    }

    pub fn score(&self, u: usize, i: usize) -> Result<f64> {
        self.check_ids(u, i)?;
        Ok(self.embeddings().score(u, i))
    }

    /// `θ ← θ − lr·g` on the rows present in `grad`.
    pub fn apply_gradient(&mut self, grad: &SparseGradient, lr: f64) {
        if lr == 0.0 {
            return;
        }
        for (&u, g) in &grad.users {
            for (p, gv) in self.user_row_mut(u).iter_mut().zip(g) {
                *p -= lr * gv;
            }
        }
        for (&i, g) in &grad.items {
            for (p, gv) in self.item_row_mut(i).iter_mut().zip(g) {
                *p -= lr * gv;
            }
        }
    }
}

/// A BPR training triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

impl Triple {
    pub fn new(user: usize, pos: usize, neg: usize) -> Self {
        Self { user, pos, neg }
    }
}

/// Row-sparse gradient keyed by user / item id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGradient {
    pub users: BTreeMap<usize, Vec<f64>>,
    pub items: BTreeMap<usize, Vec<f64>>,
}

impl SparseGradient {
    pub fn is_finite(&self) -> bool {
        self.users
            .values()
            .chain(self.items.values())
            .all(|r| r.iter().all(|v| v.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.users
            .values()
            .chain(self.items.values())
            .flat_map(|r| r.iter())
            .map(|v| v * v)
            .sum()
    }

    fn row<'a>(map: &'a mut BTreeMap<usize, Vec<f64>>, id: usize, dim: usize) -> &'a mut Vec<f64> {
        map.entry(id).or_insert_with(|| vec![0.0; dim])
    }
}

/// `−ln σ(x)`, numerically stable.
#[inline]
pub fn neg_log_sigmoid(x: f64) -> f64 {
    let z = -x;
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_triples(model: &EmbeddingModel, triples: &[Triple]) -> Result<()> {
    if triples.is_empty() {
        return Err(Error::Contract("BPR loss needs at least one triple".into()));
    }
    for t in triples {
        if t.pos == t.neg {
            return Err(Error::Contract(format!(
                "triple for user {} has identical positive and negative item {}",
                t.user, t.pos
            )));
        }
        model.check_ids(t.user, t.pos)?;
        model.check_ids(t.user, t.neg)?;
    }
    Ok(())
}

fn reg_term(model: &EmbeddingModel, t: &Triple) -> f64 {
    let sq = |r: &[f64]| dot(r, r);
    sq(model.user_row(t.user)) + sq(model.item_row(t.pos)) + sq(model.item_row(t.neg))
}

/// `weight · Σ_t [−ln σ(x_t) + l2·(‖p_u‖² + ‖q_pos‖² + ‖q_neg‖²)]` with
/// `x_t = score(u, pos) − score(u, neg)`. The regulariser always acts on the
/// base factors.
pub fn weighted_bpr(model: &EmbeddingModel, triples: &[Triple], weight: f64, l2_reg: f64) -> Result<f64> {
    check_triples(model, triples)?;
    let emb = model.embeddings();
    let mut total = 0.0;
    for t in triples {
        let x = emb.score(t.user, t.pos) - emb.score(t.user, t.neg);
        total += neg_log_sigmoid(x);
        if l2_reg != 0.0 {
            total += l2_reg * reg_term(model, t);
        }
    }
    Ok(weight * total)
}

/// Value and gradient of [`weighted_bpr`] with respect to the base factors.
pub fn weighted_bpr_grad(
    model: &EmbeddingModel,
    triples: &[Triple],
    weight: f64,
    l2_reg: f64,
) -> Result<(f64, SparseGradient)> {
    check_triples(model, triples)?;
    let dim = model.dim;
    let emb = model.embeddings();
    let mut loss = 0.0;
    let mut grad = SparseGradient::default();
    for t in triples {
        let (eu, ep, en) = (emb.user(t.user), emb.item(t.pos), emb.item(t.neg));
        let x = dot(eu, ep) - dot(eu, en);
        loss += neg_log_sigmoid(x);
        // d/dx −ln σ(x) = −σ(−x)
        let coef = -weight * sigmoid(-x);
        {
            let gu = SparseGradient::row(&mut grad.users, t.user, dim);
            for d in 0..dim {
                gu[d] += coef * (ep[d] - en[d]);
            }
        }
        {
            let gp = SparseGradient::row(&mut grad.items, t.pos, dim);
            for d in 0..dim {
                gp[d] += coef * eu[d];
            }
        }
        {
            let gn = SparseGradient::row(&mut grad.items, t.neg, dim);
            for d in 0..dim {
                gn[d] -= coef * eu[d];
            }
        }
    }
    loss *= weight;

    if model.architecture == Architecture::LightGcn && model.n_layers > 0 {
        grad = backprop_propagation(model, grad);
    }

    if l2_reg != 0.0 {
        let c = 2.0 * weight * l2_reg;
        for t in triples {
            loss += weight * l2_reg * reg_term(model, t);
            let gu = SparseGradient::row(&mut grad.users, t.user, dim);
            for (g, p) in gu.iter_mut().zip(model.user_row(t.user)) {
                *g += c * p;
            }
            for item in [t.pos, t.neg] {
                let gi = SparseGradient::row(&mut grad.items, item, dim);
                for (g, p) in gi.iter_mut().zip(model.item_row(item)) {
                    *g += c * p;
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Maps a gradient with respect to propagated embeddings back to the base
/// factors. The adjacency is symmetric, so the adjoint of the layer mean is
/// the layer mean itself.
fn backprop_propagation(model: &EmbeddingModel, grad: SparseGradient) -> SparseGradient {
    let adj = model.adjacency.as_ref().expect("lightgcn model has adjacency");
    let dim = model.dim;
    let nu = model.n_users;
    let mut dense = vec![0.0; (model.n_users + model.n_items) * dim];
    for (u, g) in grad.users {
        dense[u * dim..(u + 1) * dim].copy_from_slice(&g);
    }
    for (i, g) in grad.items {
        dense[(nu + i) * dim..(nu + i + 1) * dim].copy_from_slice(&g);
    }
    let back = adj.layer_mean(&dense, dim, model.n_layers);
    let mut out = SparseGradient::default();
    for (node, row) in back.chunks_exact(dim).enumerate() {
        if row.iter().all(|v| *v == 0.0) {
            continue;
        }
        if node < nu {
            out.users.insert(node, row.to_vec());
        } else {
            out.items.insert(node - nu, row.to_vec());
        }
    }
    out
}

/// Mean BPR loss over `triples` plus `l2_reg` times the mean squared norm of
/// the involved factor rows.
pub fn bpr_loss(model: &EmbeddingModel, triples: &[Triple], l2_reg: f64) -> Result<f64> {
    let w = 1.0 / triples.len().max(1) as f64;
    weighted_bpr(model, triples, w, l2_reg)
}

/// One full-batch gradient descent step on [`bpr_loss`] over `batch`.
pub fn gradient_step(
    model: &EmbeddingModel,
    batch: &[Triple],
    learning_rate: f64,
    l2_reg: f64,
) -> Result<EmbeddingModel> {
    let w = 1.0 / batch.len().max(1) as f64;
    let (_, grad) = weighted_bpr_grad(model, batch, w, l2_reg)?;
    if !grad.is_finite() {
        return Err(Error::Divergence {
            stage: "gradient_step",
            iteration: 0,
            detail: "non-finite gradient".into(),
        });
    }
    let mut next = model.clone();
    next.apply_gradient(&grad, learning_rate);
    Ok(next)
}

/// `k` items drawn uniformly (with replacement across draws) from the items
/// `user` has no pair with in `exclusion`.
pub fn sample_negatives(exclusion: &InteractionSet, user: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let n_items = exclusion.n_items();
    let seen = exclusion.user_items(user);
    if seen.len() >= n_items {
        return Err(Error::NegativesExhausted { user });
    }
    if seen.len() * 2 > n_items {
        // Dense user: draw from the explicit complement.
        let candidates: Vec<usize> = (0..n_items).filter(|i| seen.binary_search(i).is_err()).collect();
        return Ok((0..k).map(|_| candidates[rng.random_range(0..candidates.len())]).collect());
    }
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let i = rng.random_range(0..n_items);
        if seen.binary_search(&i).is_err() {
            out.push(i);
        }
    }
    Ok(out)
}

/// Per-row Adam moments, updated lazily on touched rows only.
#[derive(Debug, Clone)]
struct AdamState {
    betas: (f64, f64),
    step: i32,
    m_users: Vec<f64>,
    v_users: Vec<f64>,
    m_items: Vec<f64>,
    v_items: Vec<f64>,
}

const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    fn new(model: &EmbeddingModel, betas: (f64, f64)) -> Self {
        Self {
            betas,
            step: 0,
            m_users: vec![0.0; model.user_factors.len()],
            v_users: vec![0.0; model.user_factors.len()],
            m_items: vec![0.0; model.item_factors.len()],
            v_items: vec![0.0; model.item_factors.len()],
        }
    }

    fn apply(&mut self, model: &mut EmbeddingModel, grad: &SparseGradient, lr: f64) {
        self.step += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let dim = model.dim;
        let update = |params: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for d in 0..dim {
                m[d] = b1 * m[d] + (1.0 - b1) * g[d];
                v[d] = b2 * v[d] + (1.0 - b2) * g[d] * g[d];
                let mhat = m[d] / c1;
                let vhat = v[d] / c2;
                params[d] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        };
        model.propagated = OnceLock::new();
        for (&u, g) in &grad.users {
            let r = u * dim..(u + 1) * dim;
            update(
                &mut model.user_factors[r.clone()],
                &mut self.m_users[r.clone()],
                &mut self.v_users[r],
                g,
            );
        }
        for (&i, g) in &grad.items {
            let r = i * dim..(i + 1) * dim;
            update(
                &mut model.item_factors[r.clone()],
                &mut self.m_items[r.clone()],
                &mut self.v_items[r],
                g,
            );
        }
    }
}

/// BPR triples for every pair of `train` in `order`, with
/// `negatives_per_positive` sampled negatives each.
pub(crate) fn build_triples(
    train: &InteractionSet,
    exclusion: &InteractionSet,
    order: &[usize],
    negatives_per_positive: usize,
    rng: &mut Rng,
) -> Result<Vec<Triple>> {
    let mut triples = Vec::with_capacity(order.len() * negatives_per_positive);
    for &k in order {
        let (u, i) = train.pair(k);
        for neg in sample_negatives(exclusion, u, negatives_per_positive, rng)? {
            triples.push(Triple::new(u, i, neg));
        }
    }
    Ok(triples)
}

/// Mini-batch BPR training.
///
/// When `val` is non-empty the parameters of the epoch with the best
/// validation Recall@10 are returned and training stops after
/// `early_stop_patience` epochs without improvement. Otherwise the last epoch
/// is returned.
pub fn train(
    model: &EmbeddingModel,
    train: &InteractionSet,
    val: &InteractionSet,
    config: &TrainConfig,
) -> Result<EmbeddingModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    train.check_same_space(val)?;
    let mut current = model.clone();
    if config.max_epochs == 0 {
        return Ok(current);
    }
    let mut rng = rng::child(config.seed, 0x7EA1);
    let mut adam = match config.optimizer {
        Optimizer::Adam => Some(AdamState::new(&current, config.adam_betas)),
        Optimizer::Sgd => None,
    };
    let mut best: Option<(f64, EmbeddingModel)> = None;
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let triples = build_triples(train, train, chunk, config.negatives_per_positive, &mut rng)?;
            let w = 1.0 / triples.len() as f64;
            let (loss, grad) = weighted_bpr_grad(&current, &triples, w, config.l2_reg)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence {
                    stage: "train",
                    iteration: epoch,
                    detail: format!("loss {loss}"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            match adam.as_mut() {
                Some(state) => state.apply(&mut current, &grad, config.learning_rate),
                None => current.apply_gradient(&grad, config.learning_rate),
            }
        }
        log::debug!(
            "epoch {epoch}: mean loss {:.6}",
            epoch_loss / train.len() as f64
        );

        if val.is_empty() {
            continue;
        }
        let recall = eval::recall_at_k(&current, train, val, 10)?;
        match &best {
            Some((r, _)) if recall <= *r => {
                since_best += 1;
                if since_best >= config.early_stop_patience {
                    log::debug!("early stop at epoch {epoch}");
                    break;
                }
            }
            _ => {
                best = Some((recall, current.clone()));
                since_best = 0;
            }
        }
    }
    Ok(match best {
        Some((_, m)) => m,
        None => current,
    })
}

const CHECKPOINT_MAGIC: &str = "dconrec-model v1";

/// Writes a text checkpoint. Values use the shortest round-trip decimal
/// form, so a re-import is bit-exact.
///
/// ```text
/// dconrec-model v1
/// n_users <U>
/// n_items <I>
/// dim <d>
/// architecture <mf|lightgcn>
/// n_layers <L>
/// user <id> <d values>
/// ...
/// item <id> <d values>
/// ...
/// ```
///
/// The LightGCN adjacency is not stored; pass the training set again on
/// import.
pub fn write_checkpoint(path: &Path, model: &EmbeddingModel) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        writeln!(w, "n_users {}", model.n_users)?;
        writeln!(w, "n_items {}", model.n_items)?;
        writeln!(w, "dim {}", model.dim)?;
        writeln!(w, "architecture {}", model.architecture.as_str())?;
        writeln!(w, "n_layers {}", model.n_layers)?;
        for (tag, rows) in [("user", &model.user_factors), ("item", &model.item_factors)] {
            for (id, row) in rows.chunks_exact(model.dim).enumerate() {
                write!(w, "{tag} {id}")?;
                for v in row {
                    write!(w, " {v}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path, adjacency_source: Option<&InteractionSet>) -> Result<EmbeddingModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut next_line = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n + 1, l)),
            Some((_, Err(e))) => Err(Error::io(path, e)),
            None => Err(perr(0, format!("unexpected end of file, wanted {expect}"))),
        }
    };
    let (n, magic) = next_line("header")?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(perr(n, format!("bad magic {magic:?}")));
    }
    let mut header = |key: &str| -> Result<String> {
        let (n, l) = next_line(key)?;
        let mut it = l.split_whitespace();
        match (it.next(), it.next()) {
            (Some(k), Some(v)) if k == key => Ok(v.to_string()),
            _ => Err(perr(n, format!("expected `{key} <value>`"))),
        }
    };
    let num = |s: String| -> Result<usize> { s.parse().map_err(|_| perr(0, format!("bad count {s:?}"))) };
    let n_users = num(header("n_users")?)?;
    let n_items = num(header("n_items")?)?;
    let dim = num(header("dim")?)?;
    let architecture: Architecture = header("architecture")?.parse()?;
    let n_layers = num(header("n_layers")?)?;

    let mut users = vec![0.0; n_users * dim];
    let mut items = vec![0.0; n_items * dim];
    let mut seen = (0usize, 0usize);
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let tag = it.next().unwrap_or_default();
        let id: usize = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(n + 1, "missing row id".into()))?;
        let (target, bound) = match tag {
            "user" => {
                seen.0 += 1;
                (&mut users, n_users)
            }
            "item" => {
                seen.1 += 1;
                (&mut items, n_items)
            }
            other => return Err(perr(n + 1, format!("unknown row tag {other:?}"))),
        };
        if id >= bound {
            return Err(perr(n + 1, format!("row id {id} out of range")));
        }
        let vals: Vec<f64> = it
            .map(|s| s.parse::<f64>().map_err(|_| perr(n + 1, format!("bad value {s:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != dim {
            return Err(perr(n + 1, format!("expected {dim} values, got {}", vals.len())));
        }
        target[id * dim..(id + 1) * dim].copy_from_slice(&vals);
    }
    if seen != (n_users, n_items) {
        return Err(perr(0, format!("expected {n_users} user and {n_items} item rows, got {seen:?}")));
    }
    let model = EmbeddingModel::from_factors(n_users, n_items, dim, users, items)?;
    match architecture {
        Architecture::Mf => Ok(model),
        Architecture::LightGcn => {
            let train = adjacency_source.ok_or_else(|| {
                Error::Config("lightgcn checkpoint needs its training set for the adjacency".into())
            })?;
            model.with_lightgcn(train, n_layers)
        }
    }
}
