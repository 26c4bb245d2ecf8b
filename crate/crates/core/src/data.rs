//! Interaction datasets: loading, validation, splitting and user grouping.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// A deduplicated set of implicit-feedback `(user, item)` pairs over
/// contiguous id ranges `[0, n_users)` and `[0, n_items)`.
///
/// Pairs are stored in CSR order: sorted by user, then by item. The position
/// of a pair in that order is its *pair index*, used by masks and pools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    n_users: usize,
    n_items: usize,
    indptr: Vec<usize>,
    items: Vec<usize>,
    users: Vec<usize>,
}

impl InteractionSet {
    /// Builds a set from arbitrary pairs, validating bounds and dropping
    /// duplicates.
    pub fn new(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
        for &(u, i) in &pairs {
            if u >= n_users {
                return Err(Error::IdOutOfRange {
                    kind: "user",
                    id: u,
                    bound: n_users,
                });
            }
            if i >= n_items {
                return Err(Error::IdOutOfRange {
                    kind: "item",
                    id: i,
                    bound: n_items,
                });
            }
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        if pairs.len() < before {
            log::debug!("dropped {} duplicate pairs", before - pairs.len());
        }
        Ok(Self::from_sorted_unique(n_users, n_items, pairs))
    }

    fn from_sorted_unique(n_users: usize, n_items: usize, pairs: Vec<(usize, usize)>) -> Self {
        let mut indptr = vec![0usize; n_users + 1];
        for &(u, _) in &pairs {
            indptr[u + 1] += 1;
        }
        for u in 0..n_users {
            indptr[u + 1] += indptr[u];
        }
        let (users, items) = pairs.into_iter().unzip();
        Self {
            n_users,
            n_items,
            indptr,
            items,
            users,
        }
    }

    pub fn empty(n_users: usize, n_items: usize) -> Self {
        Self::from_sorted_unique(n_users, n_items, Vec::new())
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items of `user`, sorted ascending.
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.items[self.indptr[user]..self.indptr[user + 1]]
    }

    /// Pair-index range of `user`.
    pub fn user_range(&self, user: usize) -> std::ops::Range<usize> {
        self.indptr[user]..self.indptr[user + 1]
    }

    pub fn degree(&self, user: usize) -> usize {
        self.indptr[user + 1] - self.indptr[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        user < self.n_users && self.user_items(user).binary_search(&item).is_ok()
    }

    /// Pair index of `(user, item)` if present.
    pub fn index_of(&self, user: usize, item: usize) -> Option<usize> {
        if user >= self.n_users {
            return None;
        }
        self.user_items(user)
            .binary_search(&item)
            .ok()
            .map(|k| self.indptr[user] + k)
    }

    pub fn pair(&self, index: usize) -> (usize, usize) {
        (self.users[index], self.items[index])
    }

    pub fn pairs(&self) -> impl ExactSizeIterator<Item = (usize, usize)> + '_ {
        self.users.iter().copied().zip(self.items.iter().copied())
    }

    /// Per-item interaction counts.
    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n_items];
        for &i in &self.items {
            deg[i] += 1;
        }
        deg
    }

    pub fn union(&self, other: &InteractionSet) -> Result<InteractionSet> {
        self.check_same_space(other)?;
        InteractionSet::new(self.n_users, self.n_items, self.pairs().chain(other.pairs()))
    }

    pub fn is_disjoint(&self, other: &InteractionSet) -> bool {
        self.pairs().all(|(u, i)| !other.contains(u, i))
    }

    pub fn subset(&self, indices: impl IntoIterator<Item = usize>) -> InteractionSet {
        let pairs: Vec<_> = indices.into_iter().map(|k| self.pair(k)).collect();
        InteractionSet::new(self.n_users, self.n_items, pairs).expect("subset of a valid set")
    }

    pub(crate) fn check_same_space(&self, other: &InteractionSet) -> Result<()> {
        if self.n_users != other.n_users || self.n_items != other.n_items {
            return Err(Error::Contract(format!(
                "id spaces differ: {}x{} vs {}x{}",
                self.n_users, self.n_items, other.n_users, other.n_items
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Tsv,
    Csv,
}

impl Format {
    /// `.csv` maps to [`Format::Csv`], anything else to [`Format::Tsv`].
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Tsv,
        }
    }

    fn fields<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Format::Tsv => line.split_whitespace().collect(),
            Format::Csv => line.split(',').map(str::trim).collect(),
        }
    }
}

/// Original ids for each internal id, so internal id `k` maps back to
/// `users[k]` / `items[k]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    pub users: Vec<i64>,
    pub items: Vec<i64>,
}

impl IdMap {
    pub fn identity(n_users: usize, n_items: usize) -> Self {
        Self {
            users: (0..n_users as i64).collect(),
            items: (0..n_items as i64).collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            for (internal, original) in self.users.iter().enumerate() {
                writeln!(w, "{original}\t{internal}\tuser")?;
            }
            for (internal, original) in self.items.iter().enumerate() {
                writeln!(w, "{original}\t{internal}\titem")?;
            }
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut users = BTreeMap::new();
        let mut items = BTreeMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err(format!("expected 3 columns, got {}", cols.len())));
            }
            let original: i64 = cols[0]
                .parse()
                .map_err(|_| parse_err(format!("bad original id {:?}", cols[0])))?;
            let internal: usize = cols[1]
                .parse()
                .map_err(|_| parse_err(format!("bad internal id {:?}", cols[1])))?;
            match cols[2] {
                "user" => users.insert(internal, original),
                "item" => items.insert(internal, original),
                other => return Err(parse_err(format!("unknown kind {other:?}"))),
            };
        }
        let dense = |m: BTreeMap<usize, i64>, kind: &str| -> Result<Vec<i64>> {
            m.iter().enumerate().try_for_each(|(expect, (&got, _))| {
                if expect == got {
                    Ok(())
                } else {
                    Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: 0,
                        message: format!("{kind} internal ids are not contiguous at {expect}"),
                    })
                }
            })?;
            Ok(m.into_values().collect())
        };
        Ok(Self {
            users: dense(users, "user")?,
            items: dense(items, "item")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub interactions: InteractionSet,
    pub ids: IdMap,
    pub duplicates_dropped: usize,
}

fn read_raw_pairs(path: &Path, format: Format) -> Result<Vec<(i64, i64)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = format.fields(trimmed);
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        if fields.len() < 2 {
            return Err(parse_err(format!(
                "expected at least 2 columns, got {}",
                fields.len()
            )));
        }
        let user: i64 = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("user id {:?} is not an integer", fields[0])))?;
        let item: i64 = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("item id {:?} is not an integer", fields[1])))?;
        raw.push((user, item));
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(raw)
}

/// Loads a raw interaction file and remaps ids to contiguous ranges
/// (ascending original id order).
pub fn load_interactions(path: &Path, format: Format) -> Result<LoadedDataset> {
    let raw = read_raw_pairs(path, format)?;
    let mut users: Vec<i64> = raw.iter().map(|p| p.0).collect();
    let mut items: Vec<i64> = raw.iter().map(|p| p.1).collect();
    users.sort_unstable();
    users.dedup();
    items.sort_unstable();
    items.dedup();
    let lookup = |ids: &[i64], id: i64| ids.binary_search(&id).expect("id collected above");
    let pairs: Vec<(usize, usize)> = raw
        .iter()
        .map(|&(u, i)| (lookup(&users, u), lookup(&items, i)))
        .collect();
    let total = pairs.len();
    let interactions = InteractionSet::new(users.len(), items.len(), pairs)?;
    let duplicates_dropped = total - interactions.len();
    if duplicates_dropped > 0 {
        log::info!("{}: dropped {duplicates_dropped} duplicate pairs", path.display());
    }
    Ok(LoadedDataset {
        interactions,
        ids: IdMap { users, items },
        duplicates_dropped,
    })
}

/// Loads a stage file whose ids are already internal (as written by
/// [`write_interactions`]) into the given id space.
pub fn read_interactions(path: &Path, n_users: usize, n_items: usize) -> Result<InteractionSet> {
    let format = Format::from_path(path);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = format.fields(trimmed);
        let parse = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("{s:?} is not a non-negative integer"),
            })
        };
        if fields.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: "expected at least 2 columns".into(),
            });
        }
        pairs.push((parse(fields[0])?, parse(fields[1])?));
    }
    InteractionSet::new(n_users, n_items, pairs)
}

/// Writes `user<TAB>item` rows in pair-index order.
pub fn write_interactions(path: &Path, set: &InteractionSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        for (u, i) in set.pairs() {
            writeln!(w, "{u}\t{i}")?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Stratified by user; users with fewer than 3 pairs stay in train.
    PerUser,
    /// One uniform shuffle over all pairs.
    Global,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: InteractionSet,
    pub validation: InteractionSet,
    pub test: InteractionSet,
}

/// Splits `data` into train/validation/test.
///
/// Per-user mode sends `round(f_val·n)` and `round(f_test·n)` of each user's
/// `n` pairs to validation and test, so every user's train count is within
/// one pair of `f_train·n`.
pub fn split_dataset(
    data: &InteractionSet,
    fractions: (f64, f64, f64),
    seed: u64,
    mode: SplitMode,
) -> Result<DatasetSplit> {
    let (f_train, f_val, f_test) = fractions;
    if !(f_train > 0.0 && f_val > 0.0 && f_test > 0.0) {
        return Err(Error::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (f_train + f_val + f_test - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {}",
            f_train + f_val + f_test
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    match mode {
        SplitMode::PerUser => {
            for u in 0..data.n_users() {
                let mut items = data.user_items(u).to_vec();
                let n = items.len();
                if n < 3 {
                    train.extend(items.into_iter().map(|i| (u, i)));
                    continue;
                }
                items.shuffle(&mut rng);
                let n_val = (f_val * n as f64).round() as usize;
                let n_test = (f_test * n as f64).round() as usize;
                let n_train = n - n_val - n_test;
                for (k, i) in items.into_iter().enumerate() {
                    if k < n_train {
                        train.push((u, i));
                    } else if k < n_train + n_val {
                        val.push((u, i));
                    } else {
                        test.push((u, i));
                    }
                }
            }
        }
        SplitMode::Global => {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            let n = order.len();
            let n_train = (f_train * n as f64).round() as usize;
            let n_val = ((f_val * n as f64).round() as usize).min(n - n_train);
            for (k, idx) in order.into_iter().enumerate() {
                let p = data.pair(idx);
                if k < n_train {
                    train.push(p);
                } else if k < n_train + n_val {
                    val.push(p);
                } else {
                    test.push(p);
                }
            }
        }
    }
    let (nu, ni) = (data.n_users(), data.n_items());
    Ok(DatasetSplit {
        train: InteractionSet::new(nu, ni, train)?,
        validation: InteractionSet::new(nu, ni, val)?,
        test: InteractionSet::new(nu, ni, test)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UserGroup {
    Head,
    Torso,
    Tail,
}

impl UserGroup {
    pub const ALL: [UserGroup; 3] = [UserGroup::Head, UserGroup::Torso, UserGroup::Tail];

    pub fn name(&self) -> &'static str {
        match self {
            UserGroup::Head => "head",
            UserGroup::Torso => "torso",
            UserGroup::Tail => "tail",
        }
    }
}

/// Users with at least one training pair, grouped by training degree:
/// `deg > upper` is head, `lower < deg <= upper` is torso, the rest tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserGroupPartition {
    pub head: Vec<usize>,
    pub torso: Vec<usize>,
    pub tail: Vec<usize>,
    pub lower: usize,
    pub upper: usize,
}

impl UserGroupPartition {
    pub fn members(&self, group: UserGroup) -> &[usize] {
        match group {
            UserGroup::Head => &self.head,
            UserGroup::Torso => &self.torso,
            UserGroup::Tail => &self.tail,
        }
    }

    pub fn group_of(&self, user: usize) -> Option<UserGroup> {
        UserGroup::ALL
            .into_iter()
            .find(|g| self.members(*g).binary_search(&user).is_ok())
    }
}

pub const DEFAULT_GROUP_THRESHOLDS: (usize, usize) = (10, 100);

pub fn group_users(train: &InteractionSet, lower: usize, upper: usize) -> Result<UserGroupPartition> {
    if lower >= upper {
        return Err(Error::Config(format!(
            "group thresholds need lower < upper, got {lower}, {upper}"
        )));
    }
    let mut part = UserGroupPartition {
        head: Vec::new(),
        torso: Vec::new(),
        tail: Vec::new(),
        lower,
        upper,
    };
    for u in 0..train.n_users() {
        match train.degree(u) {
            0 => {}
            d if d > upper => part.head.push(u),
            d if d > lower => part.torso.push(u),
            _ => part.tail.push(u),
        }
    }
    Ok(part)
}
