//! Pre-augmentation: mine pseudo interactions with a proxy recommender and
//! assemble the data pool (original pairs plus pseudo pairs).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::data::InteractionSet;
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{self, Architecture, EmbeddingModel, TrainConfig};

/// Trains the proxy model on the original training set.
pub fn train_proxy(
    train: &InteractionSet,
    val: &InteractionSet,
    architecture: Architecture,
    config: &TrainConfig,
) -> Result<EmbeddingModel> {
    let config = TrainConfig {
        architecture,
        ..config.clone()
    };
    let init = model::init_model(train.n_users(), train.n_items(), &config, Some(train))?;
    model::train(&init, train, val, &config)
}

/// The `k` unexposed items with the highest proxy score for `user`, ties by
/// ascending item id. Returns every unexposed item when fewer than `k` exist.
pub fn topk_unexposed(proxy: &EmbeddingModel, train: &InteractionSet, user: usize, k: usize) -> Vec<usize> {
    eval::rank_items(&proxy.embeddings(), train, user, k)
}

/// How many pseudo items each user receives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PseudoBudget {
    /// `round(ratio · degree(u))` per user.
    Proportional(f64),
    /// The same `k` for every user with at least one training pair.
    Fixed(usize),
}

impl PseudoBudget {
    fn for_degree(&self, degree: usize) -> usize {
        match *self {
            PseudoBudget::Proportional(r) => (r * degree as f64).round() as usize,
            PseudoBudget::Fixed(k) if degree > 0 => k,
            PseudoBudget::Fixed(_) => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PseudoDataset {
    pub pairs: InteractionSet,
    pub per_user_k: usize,
    pub provenance: String,
}

/// Mines pseudo pairs for every user.
pub fn mine_pseudo(train: &InteractionSet, proxy: &EmbeddingModel, budget: PseudoBudget) -> Result<PseudoDataset> {
    if let PseudoBudget::Proportional(r) = budget {
        if !(r >= 0.0) {
            return Err(Error::Config(format!("pseudo-data ratio must be >= 0, got {r}")));
        }
    }
    let per_user: Vec<Vec<(usize, usize)>> = (0..train.n_users())
        .into_par_iter()
        .map(|u| {
            let k = budget.for_degree(train.degree(u));
            topk_unexposed(proxy, train, u, k).into_iter().map(|i| (u, i)).collect()
        })
        .collect();
    let per_user_k = per_user.iter().map(Vec::len).max().unwrap_or(0);
    let pairs = InteractionSet::new(train.n_users(), train.n_items(), per_user.into_iter().flatten())?;
    Ok(PseudoDataset {
        pairs,
        per_user_k,
        provenance: format!("proxy={} dim={}", proxy.architecture().as_str(), proxy.dim()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Original,
    Pseudo,
}

impl Origin {
    pub fn tag(&self) -> &'static str {
        match self {
            Origin::Original => "orig",
            Origin::Pseudo => "pseudo",
        }
    }
}

/// Original training pairs plus pseudo pairs. `origin[k]` describes pool
/// pair `k` (pair-index order of `pool`).
#[derive(Debug, Clone)]
pub struct DataPool {
    pub pool: InteractionSet,
    pub origin: Vec<Origin>,
    pub r_ps: f64,
}

impl DataPool {
    /// Disjoint union of `original` and `pseudo`.
    pub fn new(original: &InteractionSet, pseudo: &InteractionSet) -> Result<Self> {
        original.check_same_space(pseudo)?;
        if let Some((u, i)) = pseudo.pairs().find(|&(u, i)| original.contains(u, i)) {
            return Err(Error::Contract(format!("pseudo pair ({u}, {i}) is already observed")));
        }
        let pool = original.union(pseudo)?;
        let origin = pool
            .pairs()
            .map(|(u, i)| if original.contains(u, i) { Origin::Original } else { Origin::Pseudo })
            .collect();
        let r_ps = if original.is_empty() {
            0.0
        } else {
            pseudo.len() as f64 / original.len() as f64
        };
        Ok(Self { pool, origin, r_ps })
    }

    /// A pool without augmentation.
    pub fn original_only(train: &InteractionSet) -> Self {
        Self {
            pool: train.clone(),
            origin: vec![Origin::Original; train.len()],
            r_ps: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn n_pseudo(&self) -> usize {
        self.origin.iter().filter(|o| **o == Origin::Pseudo).count()
    }

    pub fn n_original(&self) -> usize {
        self.len() - self.n_pseudo()
    }

    fn filter(&self, want: Origin) -> InteractionSet {
        self.pool.subset((0..self.len()).filter(|&k| self.origin[k] == want))
    }

    pub fn original(&self) -> InteractionSet {
        self.filter(Origin::Original)
    }

    pub fn pseudo(&self) -> InteractionSet {
        self.filter(Origin::Pseudo)
    }

    /// `user<TAB>item<TAB>{orig|pseudo}`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            for (k, (u, i)) in self.pool.pairs().enumerate() {
                writeln!(w, "{u}\t{i}\t{}", self.origin[k].tag())?;
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, n_users: usize, n_items: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut orig = Vec::new();
        let mut pseudo = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(perr(format!("expected 3 columns, got {}", cols.len())));
            }
            let u: usize = cols[0].parse().map_err(|_| perr("bad user id".into()))?;
            let i: usize = cols[1].parse().map_err(|_| perr("bad item id".into()))?;
            match cols[2] {
                "orig" => orig.push((u, i)),
                "pseudo" => pseudo.push((u, i)),
                other => return Err(perr(format!("unknown origin {other:?}"))),
            }
        }
        let orig = InteractionSet::new(n_users, n_items, orig)?;
        let pseudo = InteractionSet::new(n_users, n_items, pseudo)?;
        Self::new(&orig, &pseudo)
    }
}

/// Mines pseudo pairs with `proxy` and returns the pool `train ∪ pseudo`.
pub fn build_data_pool(train: &InteractionSet, proxy: &EmbeddingModel, budget: PseudoBudget) -> Result<DataPool> {
    let pseudo = mine_pseudo(train, proxy, budget)?;
    log::info!(
        "pre-augmentation: {} pseudo pairs for {} original ({})",
        pseudo.pairs.len(),
        train.len(),
        pseudo.provenance
    );
    DataPool::new(train, &pseudo.pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored_proxy(item_scores: &[f64], n_users: usize) -> EmbeddingModel {
        EmbeddingModel::from_factors(n_users, item_scores.len(), 1, vec![1.0; n_users], item_scores.to_vec()).unwrap()
    }

    #[test]
    fn topk_direct_ranking() {
        let proxy = scored_proxy(&[2.0, 0.9, 0.5, 0.1], 1);
        let train = InteractionSet::new(1, 4, [(0, 0)]).unwrap();
        assert_eq!(topk_unexposed(&proxy, &train, 0, 2), vec![1, 2]);
        assert!(topk_unexposed(&proxy, &train, 0, 0).is_empty());
        assert_eq!(topk_unexposed(&proxy, &train, 0, 10), vec![1, 2, 3]);
    }

    #[test]
    fn zero_ratio_pool_is_train() {
        let proxy = scored_proxy(&[0.3, 0.2, 0.1, 0.0], 2);
        let train = InteractionSet::new(2, 4, [(0, 0), (1, 1), (1, 2)]).unwrap();
        let pool = build_data_pool(&train, &proxy, PseudoBudget::Proportional(0.0)).unwrap();
        assert_eq!(pool.pool, train);
        assert_eq!(pool.n_pseudo(), 0);
    }

    #[test]
    fn proportional_rounding() {
        let proxy = scored_proxy(&(0..10).map(|i| i as f64).collect::<Vec<_>>(), 1);
        let train = InteractionSet::new(1, 10, [(0, 0), (0, 1), (0, 2), (0, 3)]).unwrap();
        let pool = build_data_pool(&train, &proxy, PseudoBudget::Proportional(0.5)).unwrap();
        assert_eq!(pool.n_pseudo(), 2);
        assert_eq!(pool.pseudo().user_items(0), &[8, 9]);
        assert_eq!(pool.len(), train.len() + 2);
    }

    #[test]
    fn fixed_budget_skips_cold_users() {
        let proxy = scored_proxy(&[1.0, 2.0, 3.0], 2);
        let train = InteractionSet::new(2, 3, [(0, 0)]).unwrap();
        let pool = build_data_pool(&train, &proxy, PseudoBudget::Fixed(1)).unwrap();
        assert_eq!(pool.pseudo().pairs().collect::<Vec<_>>(), vec![(0, 2)]);
    }

    #[test]
    fn overlapping_pseudo_rejected() {
        let a = InteractionSet::new(1, 2, [(0, 0)]).unwrap();
        assert!(DataPool::new(&a, &a).is_err());
    }

    #[test]
    fn pool_file_round_trip() {
        let orig = InteractionSet::new(2, 4, [(0, 0), (1, 3)]).unwrap();
        let pseudo = InteractionSet::new(2, 4, [(0, 2), (1, 1)]).unwrap();
        let pool = DataPool::new(&orig, &pseudo).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.tsv");
        pool.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "0\t0\torig\n0\t2\tpseudo\n1\t1\tpseudo\n1\t3\torig\n");
        let back = DataPool::read(&path, 2, 4).unwrap();
        assert_eq!(back.pool, pool.pool);
        assert_eq!(back.origin, pool.origin);
    }
}
