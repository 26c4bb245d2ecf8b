//! Python bindings for the `dconrec` library.
//!
//! The module is imported as `dconrec`. Long-running calls release the
//! interpreter lock.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString, PyTuple};

use dconrec::augment::DataPool;
use dconrec::config::RunConfig;
use dconrec::data::{self as core_data, DatasetSplit, SplitMode};
use dconrec::model::{self as core_model, EmbeddingModel};
use dconrec::{condense as core_condense, eval as core_eval, pipeline, synthetic, Error};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::Config(_) | Error::IdOutOfRange { .. } | Error::Parse { .. } => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for dconrec::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Sorted, deduplicated set of `(user, item)` pairs.
#[pyclass(name = "InteractionSet", module = "dconrec", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyInteractionSet {
    inner: core_data::InteractionSet,
}

impl From<core_data::InteractionSet> for PyInteractionSet {
    fn from(inner: core_data::InteractionSet) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyInteractionSet {
    #[new]
    fn new(n_users: usize, n_items: usize, pairs: Vec<(usize, usize)>) -> PyResult<Self> {
        core_data::InteractionSet::new(n_users, n_items, pairs).py_err().map(Self::from)
    }

    /// Reads a two-column TSV of dense ids.
    #[staticmethod]
    fn read(path: PathBuf, n_users: usize, n_items: usize) -> PyResult<Self> {
        core_data::read_interactions(&path, n_users, n_items).py_err().map(Self::from)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        core_data::write_interactions(&path, &self.inner).py_err()
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.n_items()
    }

    fn pairs(&self) -> Vec<(usize, usize)> {
        self.inner.pairs().collect()
    }

    fn user_items(&self, user: usize) -> PyResult<Vec<usize>> {
        if user >= self.inner.n_users() {
            return Err(PyValueError::new_err(format!("user {user} out of range")));
        }
        Ok(self.inner.user_items(user).to_vec())
    }

    fn contains(&self, user: usize, item: usize) -> bool {
        user < self.inner.n_users() && self.inner.contains(user, item)
    }

    fn is_disjoint(&self, other: &PyInteractionSet) -> bool {
        self.inner.is_disjoint(&other.inner)
    }

    fn union(&self, other: &PyInteractionSet) -> PyResult<Self> {
        self.inner.union(&other.inner).py_err().map(Self::from)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, pair: (usize, usize)) -> bool {
        self.contains(pair.0, pair.1)
    }

    fn __eq__(&self, other: &PyInteractionSet) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "InteractionSet(n_users={}, n_items={}, len={})",
            self.inner.n_users(),
            self.inner.n_items(),
            self.inner.len()
        )
    }
}

#[pyclass(name = "Split", module = "dconrec", frozen, skip_from_py_object)]
pub struct PySplit {
    inner: DatasetSplit,
}

#[pymethods]
impl PySplit {
    #[new]
    fn new(train: &PyInteractionSet, validation: &PyInteractionSet, test: &PyInteractionSet) -> Self {
        Self {
            inner: DatasetSplit {
                train: train.inner.clone(),
                validation: validation.inner.clone(),
                test: test.inner.clone(),
            },
        }
    }

    #[getter]
    fn train(&self) -> PyInteractionSet {
        self.inner.train.clone().into()
    }

    #[getter]
    fn validation(&self) -> PyInteractionSet {
        self.inner.validation.clone().into()
    }

    #[getter]
    fn test(&self) -> PyInteractionSet {
        self.inner.test.clone().into()
    }

    fn __repr__(&self) -> String {
        format!(
            "Split(train={}, validation={}, test={})",
            self.inner.train.len(),
            self.inner.validation.len(),
            self.inner.test.len()
        )
    }
}

/// Converts a Python scalar or list into a TOML literal.
fn toml_literal(value: &Bound<'_, PyAny>) -> PyResult<String> {
    if value.is_instance_of::<PyBool>() {
        return Ok(value.extract::<bool>()?.to_string());
    }
    if value.is_instance_of::<PyInt>() {
        return Ok(value.extract::<i64>()?.to_string());
    }
    if value.is_instance_of::<PyFloat>() {
        let v: f64 = value.extract()?;
        return Ok(format!("{v:?}"));
    }
    if value.is_instance_of::<PyString>() {
        let s: String = value.extract()?;
        return Ok(toml::Value::String(s).to_string());
    }
    if value.is_instance_of::<PyList>() || value.is_instance_of::<PyTuple>() {
        let parts = value
            .try_iter()?
            .map(|v| toml_literal(&v?))
            .collect::<PyResult<Vec<_>>>()?;
        return Ok(format!("[{}]", parts.join(", ")));
    }
    Err(PyValueError::new_err(format!("unsupported config value {value}")))
}

/// Run configuration. Keyword arguments override keys of the optional TOML
/// file, e.g. `Config(ratio=0.25, method="random")`.
#[pyclass(name = "Config", module = "dconrec", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (path=None, **overrides))]
    fn new(path: Option<PathBuf>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut pairs = Vec::new();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                pairs.push(format!("{}={}", k.extract::<String>()?, toml_literal(&v)?));
            }
        }
        RunConfig::load(path.as_deref(), &pairs).py_err().map(|inner| Self { inner })
    }

    /// A copy with further overrides applied.
    #[pyo3(signature = (**overrides))]
    fn replace(&self, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut table: toml::Table = self.inner.to_toml().parse().expect("own output parses");
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                let key: String = k.extract()?;
                let doc: toml::Table = format!("v = {}", toml_literal(&v)?)
                    .parse()
                    .map_err(|e| PyValueError::new_err(format!("{key}: {e}")))?;
                table.insert(key, doc["v"].clone());
            }
        }
        let inner: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PyValueError::new_err(e.to_string()))?;
        inner.validate().py_err()?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }

    #[getter]
    fn ratio(&self) -> f64 {
        self.inner.ratio
    }

    #[getter]
    fn r_ps(&self) -> f64 {
        self.inner.r_ps
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(method={:?}, ratio={}, r_ps={}, seed={})",
            self.inner.method.as_str(),
            self.inner.ratio,
            self.inner.r_ps,
            self.inner.seed
        )
    }
}

#[pyclass(name = "Model", module = "dconrec", frozen, skip_from_py_object)]
pub struct PyModel {
    inner: EmbeddingModel,
}

#[pymethods]
impl PyModel {
    /// Loads a checkpoint. LightGCN checkpoints need the interaction set the
    /// model propagates over.
    #[staticmethod]
    #[pyo3(signature = (path, adjacency=None))]
    fn load(path: PathBuf, adjacency: Option<&PyInteractionSet>) -> PyResult<Self> {
        core_model::read_checkpoint(&path, adjacency.map(|a| &a.inner))
            .py_err()
            .map(|inner| Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        core_model::write_checkpoint(&path, &self.inner).py_err()
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.n_users()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.n_items()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn architecture(&self) -> &'static str {
        self.inner.architecture().as_str()
    }

    fn score(&self, user: usize, item: usize) -> PyResult<f64> {
        self.inner.score(user, item).py_err()
    }

    fn user_scores(&self, user: usize) -> PyResult<Vec<f64>> {
        if user >= self.inner.n_users() {
            return Err(PyValueError::new_err(format!("user {user} out of range")));
        }
        Ok(self.inner.embeddings().user_scores(user))
    }

    /// Top-`k` items for `user`, skipping those in `exclude`.
    #[pyo3(signature = (user, k, exclude=None))]
    fn recommend(&self, user: usize, k: usize, exclude: Option<&PyInteractionSet>) -> PyResult<Vec<usize>> {
        let scores = self.user_scores(user)?;
        let excluded: &[usize] = match exclude {
            Some(set) if user < set.inner.n_users() => set.inner.user_items(user),
            _ => &[],
        };
        Ok(core_eval::top_k_excluding(&scores, excluded, k))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}, n_users={}, n_items={}, dim={})",
            self.inner.architecture().as_str(),
            self.inner.n_users(),
            self.inner.n_items(),
            self.inner.dim()
        )
    }
}

/// Original plus pseudo pairs that condensation selects from.
#[pyclass(name = "DataPool", module = "dconrec", frozen, skip_from_py_object)]
pub struct PyDataPool {
    inner: DataPool,
}

#[pymethods]
impl PyDataPool {
    #[getter]
    fn n_original(&self) -> usize {
        self.inner.n_original()
    }

    #[getter]
    fn n_pseudo(&self) -> usize {
        self.inner.n_pseudo()
    }

    fn original(&self) -> PyInteractionSet {
        self.inner.original().into()
    }

    fn pseudo(&self) -> PyInteractionSet {
        self.inner.pseudo().into()
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).py_err()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("DataPool(original={}, pseudo={})", self.inner.n_original(), self.inner.n_pseudo())
    }
}

#[pyclass(name = "Condensed", module = "dconrec", frozen, skip_from_py_object)]
pub struct PyCondensed {
    #[pyo3(get)]
    dataset: Py<PyInteractionSet>,
    /// Final selection probabilities in pool order, `None` for the
    /// selection baselines.
    #[pyo3(get)]
    probabilities: Option<Vec<f64>>,
    #[pyo3(get)]
    elapsed_seconds: f64,
    records: Vec<core_condense::MonitorRecord>,
}

#[pymethods]
impl PyCondensed {
    /// Per-iteration records as dicts with `iter`, `outer_loss`,
    /// `grad_mapping_sq`, `sum_s` and `eta`.
    fn monitor<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.records
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("iter", r.iter)?;
                d.set_item("outer_loss", r.outer_loss)?;
                d.set_item("grad_mapping_sq", r.grad_mapping_sq)?;
                d.set_item("sum_s", r.sum_s)?;
                d.set_item("eta", r.eta)?;
                Ok(d)
            })
            .collect()
    }
}

#[pyfunction]
#[pyo3(signature = (data, seed=0, fractions=(0.8, 0.1, 0.1), mode="per-user"))]
fn split(data: &PyInteractionSet, seed: u64, fractions: (f64, f64, f64), mode: &str) -> PyResult<PySplit> {
    let mode = match mode {
        "per-user" => SplitMode::PerUser,
        "global" => SplitMode::Global,
        other => return Err(PyValueError::new_err(format!("unknown split mode {other:?}"))),
    };
    core_data::split_dataset(&data.inner, fractions, seed, mode)
        .py_err()
        .map(|inner| PySplit { inner })
}

/// Planted block data: `n_clusters` user/item blocks with in-block
/// interactions. Returns the interactions and each user's block.
#[pyfunction]
#[pyo3(signature = (n_users=200, n_items=100, n_clusters=2, per_user=20, noise=0.0, seed=0))]
fn planted(
    n_users: usize,
    n_items: usize,
    n_clusters: usize,
    per_user: usize,
    noise: f64,
    seed: u64,
) -> PyResult<(PyInteractionSet, Vec<usize>, Vec<usize>)> {
    let cfg = synthetic::PlantedConfig {
        n_users,
        n_items,
        n_clusters,
        interactions_per_user: per_user,
        noise,
        seed,
        ..Default::default()
    };
    let p = synthetic::planted_blocks(&cfg).py_err()?;
    Ok((p.interactions.into(), p.user_cluster, p.item_cluster))
}

/// Trains the proxy model and mines pseudo interactions (`r_ps` from the
/// config). Returns the proxy and the pool.
#[pyfunction]
fn augment(py: Python<'_>, data: &PySplit, config: &PyConfig) -> PyResult<(PyModel, PyDataPool)> {
    let (proxy, pool) = py.detach(|| pipeline::augment_stage(&data.inner, &config.inner)).py_err()?;
    Ok((PyModel { inner: proxy }, PyDataPool { inner: pool }))
}

/// Condenses with the configured method. Without `pool`, the pool is built
/// as the method requires.
#[pyfunction]
#[pyo3(signature = (data, config, pool=None))]
fn condense(py: Python<'_>, data: &PySplit, config: &PyConfig, pool: Option<&PyDataPool>) -> PyResult<PyCondensed> {
    let outcome = py
        .detach(|| {
            let built;
            let pool = match pool {
                Some(p) => &p.inner,
                None => {
                    built = pipeline::pool_for(&data.inner, &config.inner)?;
                    &built
                }
            };
            pipeline::condense_stage(pool, &data.inner.train, &data.inner.validation, &config.inner)
        })
        .py_err()?;
    Ok(PyCondensed {
        dataset: Py::new(py, PyInteractionSet::from(outcome.condensed))?,
        probabilities: outcome.mask.map(|m| m.probs().to_vec()),
        elapsed_seconds: outcome.elapsed.as_secs_f64(),
        records: outcome.monitor.map(|m| m.records().to_vec()).unwrap_or_default(),
    })
}

/// Trains the configured test model on `train` (the condensed set or the
/// full training split) and evaluates on the test split. Returns the model
/// and a flat metric dict.
#[pyfunction]
fn train_eval(
    py: Python<'_>,
    train: &PyInteractionSet,
    data: &PySplit,
    config: &PyConfig,
) -> PyResult<(PyModel, BTreeMap<String, f64>)> {
    let (model, report) = py
        .detach(|| pipeline::train_eval_stage(&train.inner, &data.inner, &config.inner))
        .py_err()?;
    Ok((PyModel { inner: model }, report.flat()))
}

/// Euclidean projection onto `[0, 1]^n ∩ {Σ x ≤ budget}`.
#[pyfunction]
fn project_feasible(values: Vec<f64>, budget: f64) -> PyResult<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) || !budget.is_finite() {
        return Err(PyValueError::new_err("values and budget must be finite"));
    }
    Ok(core_condense::project_feasible(&values, budget))
}

#[pyfunction]
fn recall_at_k(model: &PyModel, train: &PyInteractionSet, test: &PyInteractionSet, k: usize) -> PyResult<f64> {
    core_eval::recall_at_k(&model.inner, &train.inner, &test.inner, k).py_err()
}

#[pyfunction]
fn ndcg_at_k(model: &PyModel, train: &PyInteractionSet, test: &PyInteractionSet, k: usize) -> PyResult<f64> {
    core_eval::ndcg_at_k(&model.inner, &train.inner, &test.inner, k).py_err()
}

/// Recall and NDCG at each `k`, ranking against `data.train` and scoring
/// against `data.test`. `groups=(lower, upper)` adds head/torso/tail rows.
#[pyfunction]
#[pyo3(signature = (model, data, ks=vec![5, 10], groups=None))]
fn evaluate(
    model: &PyModel,
    data: &PySplit,
    ks: Vec<usize>,
    groups: Option<(usize, usize)>,
) -> PyResult<BTreeMap<String, f64>> {
    let partition = groups
        .map(|(lo, hi)| core_data::group_users(&data.inner.train, lo, hi))
        .transpose()
        .py_err()?;
    core_eval::evaluate(&model.inner, &data.inner, &ks, partition.as_ref())
        .py_err()
        .map(|r| r.flat())
}

#[pymodule(name = "dconrec")]
pub fn dconrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInteractionSet>()?;
    m.add_class::<PySplit>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataPool>()?;
    m.add_class::<PyCondensed>()?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(planted, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(condense, m)?)?;
    m.add_function(wrap_pyfunction!(train_eval, m)?)?;
    m.add_function(wrap_pyfunction!(project_feasible, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
