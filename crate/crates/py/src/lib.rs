//! Python bindings: corpus generation, toy embeddings, episodes, training,
//! prediction and evaluation.

use fsml_core::corpus::{self, SynthSpec};
use fsml_core::embeddings::{embed_corpus_toy, load_embedding_table};
use fsml_core::episodes::build_split;
use fsml_core::evaluation::evaluate_split;
use fsml_core::rng::rng_from;
use fsml_core::thresholding::{predict_with, ScorerKind};
use fsml_core::training::train_on_domains;
use fsml_core::{Error, Lexicons, Mode, TrainConfig};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyErr::new::<PyOSError, _>(e.to_string()),
        Error::Numeric(_) => PyErr::new::<PyRuntimeError, _>(e.to_string()),
        _ => PyErr::new::<PyValueError, _>(e.to_string()),
    }
}

fn parse_mode(mode: &str, threshold: Option<f64>) -> PyResult<Mode> {
    match (mode, threshold) {
        ("meta_only", _) => Ok(Mode::MetaOnly),
        ("calibrated", _) => Ok(Mode::Calibrated),
        ("fixed", Some(t)) => Ok(Mode::Fixed(t)),
        ("fixed", None) => Err(PyErr::new::<PyValueError, _>("mode 'fixed' needs a threshold")),
        _ => Err(PyErr::new::<PyValueError, _>(format!(
            "unknown mode '{mode}' (meta_only, calibrated or fixed)"
        ))),
    }
}

fn parse_scorer(scorer: &str) -> PyResult<ScorerKind> {
    match scorer {
        "prototype" => Ok(ScorerKind::Prototype),
        "matching" => Ok(ScorerKind::Matching),
        _ => Err(PyErr::new::<PyValueError, _>(format!("unknown scorer '{scorer}'"))),
    }
}

/// A labelled utterance pool with its label space.
#[pyclass(name = "Domain", module = "fsml", frozen, from_py_object)]
#[derive(Clone)]
struct PyDomain {
    inner: fsml_core::Domain,
}

#[pymethods]
impl PyDomain {
    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.label_space.names().to_vec()
    }

    #[getter]
    fn utterance_ids(&self) -> Vec<String> {
        self.inner.pool.iter().map(|u| u.id().to_string()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.pool.len()
    }

    /// Text and gold labels of one utterance.
    fn utterance(&self, id: &str) -> PyResult<(String, Vec<String>)> {
        self.inner
            .get(id)
            .map(|u| (u.utterance.text.clone(), u.labels.clone()))
            .ok_or_else(|| PyErr::new::<PyValueError, _>(format!("no utterance '{id}'")))
    }

    fn __repr__(&self) -> String {
        format!(
            "Domain(name={:?}, labels={}, utterances={})",
            self.inner.name,
            self.inner.n_labels(),
            self.inner.pool.len()
        )
    }
}

#[pyclass(name = "EmbeddingTable", module = "fsml", frozen)]
struct PyEmbeddingTable {
    inner: fsml_core::EmbeddingTable,
}

#[pymethods]
impl PyEmbeddingTable {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_embedding_table(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.write(path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Mean token vector of an utterance.
    fn sentence(&self, id: &str) -> PyResult<Vec<f64>> {
        self.inner.sentence(id).map_err(to_py)
    }
}

/// One episode: a support set and its queries, by utterance id.
#[pyclass(name = "Episode", module = "fsml", frozen, from_py_object)]
#[derive(Clone)]
struct PyEpisode {
    inner: fsml_core::Episode,
}

#[pymethods]
impl PyEpisode {
    #[getter]
    fn domain(&self) -> String {
        self.inner.domain_name.clone()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.support.k
    }

    #[getter]
    fn support_ids(&self) -> Vec<String> {
        self.inner.support.ids().into_iter().map(String::from).collect()
    }

    #[getter]
    fn query_ids(&self) -> Vec<String> {
        self.inner.queries.iter().map(|q| q.id().to_string()).collect()
    }
}

#[pyclass(name = "Model", module = "fsml", frozen)]
struct PyModel {
    inner: fsml_core::ModelParams,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: fsml_core::ModelParams::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn r(&self) -> f64 {
        self.inner.threshold.r
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.threshold.alpha
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.threshold.rho
    }
}

#[pyfunction]
#[pyo3(signature = (name, n_labels = 8, pool_size = 400, p_multi = 0.2, seed = 0))]
fn generate_synthetic(name: String, n_labels: usize, pool_size: usize, p_multi: f64, seed: u64) -> PyResult<PyDomain> {
    let spec = SynthSpec {
        name,
        n_labels,
        pool_size,
        p_multi,
        ..SynthSpec::default()
    };
    Ok(PyDomain {
        inner: corpus::generate_synthetic(&spec, seed).map_err(to_py)?,
    })
}

#[pyfunction]
fn load_corpus(path: &str) -> PyResult<Vec<PyDomain>> {
    let domains = corpus::load_corpus(path).map_err(to_py)?;
    Ok(domains.into_iter().map(|inner| PyDomain { inner }).collect())
}

#[pyfunction]
fn save_corpus(domains: Vec<PyDomain>, path: &str) -> PyResult<()> {
    let ds: Vec<_> = domains.into_iter().map(|d| d.inner).collect();
    corpus::save_corpus(&ds, path).map_err(to_py)
}

/// Deterministic hashed token vectors for every utterance and label name.
#[pyfunction]
#[pyo3(signature = (domains, dim = 64, seed = 0))]
fn embed_toy(domains: Vec<PyDomain>, dim: usize, seed: u64) -> PyResult<PyEmbeddingTable> {
    let ds: Vec<_> = domains.into_iter().map(|d| d.inner).collect();
    Ok(PyEmbeddingTable {
        inner: embed_corpus_toy(&ds, dim, seed).map_err(to_py)?,
    })
}

#[pyfunction]
#[pyo3(signature = (domain, k = 1, n_episodes = 50, query_size = 16, seed = 0))]
fn build_episodes(domain: &PyDomain, k: usize, n_episodes: usize, query_size: usize, seed: u64) -> PyResult<Vec<PyEpisode>> {
    let d = &domain.inner;
    let mut rng = rng_from(seed, &format!("episodes/{}/k{k}", d.name));
    let eps = build_split(d, k, n_episodes, query_size, &mut rng).map_err(to_py)?;
    Ok(eps.into_iter().map(|inner| PyEpisode { inner }).collect())
}

/// Trains on `domains`. `config` is a JSON object with training settings;
/// returns the model and the training report as JSON.
#[pyfunction]
#[pyo3(signature = (domains, table, config = None))]
fn train(py: Python<'_>, domains: Vec<PyDomain>, table: &PyEmbeddingTable, config: Option<&str>) -> PyResult<(PyModel, String)> {
    let cfg: TrainConfig = match config {
        Some(c) => serde_json::from_str(c).map_err(|e| PyErr::new::<PyValueError, _>(e.to_string()))?,
        None => TrainConfig::default(),
    };
    let ds: Vec<_> = domains.into_iter().map(|d| d.inner).collect();
    let (model, report) = py
        .detach(|| {
            table.inner.bind(&ds)?;
            let sources: Vec<&fsml_core::Domain> = ds.iter().collect();
            train_on_domains(&sources, None, &table.inner, &Lexicons::builtin(), &cfg)
        })
        .map_err(to_py)?;
    let report = serde_json::to_string(&report).map_err(|e| PyErr::new::<PyRuntimeError, _>(e.to_string()))?;
    Ok((PyModel { inner: model }, report))
}

/// Scores and label set for one query of `domain` against `episode`'s support.
#[pyfunction]
#[pyo3(signature = (model, domain, table, episode, query_id, mode = "calibrated", threshold = None, scorer = "prototype"))]
#[allow(clippy::too_many_arguments)]
fn predict<'py>(
    py: Python<'py>,
    model: &PyModel,
    domain: &PyDomain,
    table: &PyEmbeddingTable,
    episode: &PyEpisode,
    query_id: &str,
    mode: &str,
    threshold: Option<f64>,
    scorer: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = parse_mode(mode, threshold)?;
    let d = &domain.inner;
    let q = d
        .get(query_id)
        .ok_or_else(|| PyErr::new::<PyValueError, _>(format!("no utterance '{query_id}' in domain '{}'", d.name)))?;
    let p = predict_with(
        &q.utterance,
        &episode.inner.support,
        &d.label_space,
        &table.inner,
        &model.inner,
        &Lexicons::builtin(),
        mode,
        parse_scorer(scorer)?,
    )
    .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("query_id", query_id)?;
    out.set_item("label_names", d.label_space.names().to_vec())?;
    out.set_item("scores", p.scores.scores)?;
    out.set_item("t_meta", p.t_meta)?;
    out.set_item("t_est", p.t_est)?;
    out.set_item("t", p.t)?;
    out.set_item("n_est", p.n_est)?;
    out.set_item("labels", p.labels)?;
    Ok(out)
}

/// Episode-level micro-F1 and label-count accuracy of `model` on `episodes`.
#[pyfunction]
#[pyo3(signature = (model, domain, table, episodes, mode = "calibrated", threshold = None, scorer = "prototype"))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    model: &PyModel,
    domain: &PyDomain,
    table: &PyEmbeddingTable,
    episodes: Vec<PyEpisode>,
    mode: &str,
    threshold: Option<f64>,
    scorer: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = parse_mode(mode, threshold)?;
    let scorer = parse_scorer(scorer)?;
    let eps: Vec<_> = episodes.into_iter().map(|e| e.inner).collect();
    let report = py
        .detach(|| evaluate_split(&eps, &domain.inner, &table.inner, &Lexicons::builtin(), &model.inner, mode, scorer))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("domain", report.domain)?;
    out.set_item("mode", report.mode)?;
    out.set_item("mean_f1", report.mean_f1)?;
    out.set_item("std_f1", report.std_f1)?;
    out.set_item("label_count_accuracy", report.label_count_accuracy)?;
    out.set_item("episode_f1", report.episode_f1)?;
    out.set_item("n_queries", report.n_queries)?;
    Ok(out)
}

#[pymodule]
fn fsml(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDomain>()?;
    m.add_class::<PyEmbeddingTable>()?;
    m.add_class::<PyEpisode>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(save_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(embed_toy, m)?)?;
    m.add_function(wrap_pyfunction!(build_episodes, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
