//! Python bindings: contexts, concept lattices, metrics and the staged pipeline.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use latticelink::context::{self, BipartiteContext, RandomSplitOptions};
use latticelink::fca::{self, ConceptLattice, EnumerationBudget};
use latticelink::metrics::{self, ScoredSet};
use latticelink::pipeline::{BaselineMethod, Run, RunConfig, Task};
use latticelink::synthetic;
use latticelink::tokenizer::Side;
use latticelink::Error;

create_exception!(latticelink_py, LatticeLinkError, PyException);
create_exception!(latticelink_py, ConfigError, LatticeLinkError);
create_exception!(latticelink_py, BudgetExceeded, LatticeLinkError);
create_exception!(latticelink_py, ArtifactError, LatticeLinkError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) => ConfigError::new_err(msg),
        Error::BudgetExceeded { .. } => BudgetExceeded::new_err(msg),
        Error::MissingArtifact { .. } | Error::HashMismatch { .. } => ArtifactError::new_err(msg),
        Error::Metric(_) => PyValueError::new_err(msg),
        _ => LatticeLinkError::new_err(msg),
    }
}

/// Any serialisable value as plain Python objects (dicts, lists, numbers).
fn to_python<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| LatticeLinkError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(ConfigError::new_err)
}

fn budget(max_concepts: Option<usize>) -> EnumerationBudget {
    let mut b = EnumerationBudget::default();
    if let Some(m) = max_concepts {
        b.max_concepts = m;
    }
    b
}

/// A bipartite network of objects and attributes.
#[pyclass(name = "Context", module = "latticelink_py", frozen)]
struct PyContext {
    inner: BipartiteContext,
}

#[pymethods]
impl PyContext {
    #[new]
    #[pyo3(signature = (n_objects, n_attributes, edges))]
    fn new(n_objects: usize, n_attributes: usize, edges: Vec<(u32, u32)>) -> PyResult<Self> {
        Ok(PyContext {
            inner: BipartiteContext::from_edges(n_objects, n_attributes, edges).map_err(to_py)?,
        })
    }

    /// Read an edge list (CSV/TSV) or a context JSON file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyContext {
            inner: context::load_any(path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n_objects, n_attributes, density, seed=0))]
    fn random(n_objects: usize, n_attributes: usize, density: f64, seed: u64) -> PyResult<Self> {
        Ok(PyContext {
            inner: synthetic::random_context(n_objects, n_attributes, density, seed).map_err(to_py)?,
        })
    }

    /// Disjoint planted bi-cliques plus random noise edges.
    #[staticmethod]
    #[pyo3(signature = (n_blocks=8, objects_per_block=20, attributes_per_block=2, noise=0.05, seed=0))]
    fn planted(
        n_blocks: usize,
        objects_per_block: usize,
        attributes_per_block: usize,
        noise: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = synthetic::PlantedConfig {
            n_blocks,
            objects_per_block,
            attributes_per_block,
            noise,
            seed,
        };
        Ok(PyContext {
            inner: synthetic::planted_bicliques(&cfg).map_err(to_py)?.context,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        if path.extension().is_some_and(|e| e == "json") {
            context::save_context_json(&self.inner, path).map_err(to_py)
        } else {
            let format = context::EdgeListFormat::from_path(&path);
            context::save_edge_list(&self.inner, path, format).map_err(to_py)
        }
    }

    #[getter]
    fn n_objects(&self) -> usize {
        self.inner.n_objects()
    }

    #[getter]
    fn n_attributes(&self) -> usize {
        self.inner.n_attributes()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    fn edges(&self) -> Vec<(u32, u32)> {
        self.inner.edges().to_vec()
    }

    fn object_labels(&self) -> Vec<String> {
        self.inner.object_labels().to_vec()
    }

    fn attribute_labels(&self) -> Vec<String> {
        self.inner.attribute_labels().to_vec()
    }

    fn stats(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_python(py, &context::context_stats(&self.inner))
    }

    /// Common attributes of a set of objects.
    fn derive_attributes(&self, objects: Vec<u32>) -> PyResult<Vec<u32>> {
        fca::derive_attributes(&self.inner, &objects).map_err(to_py)
    }

    /// Common objects of a set of attributes.
    fn derive_objects(&self, attributes: Vec<u32>) -> PyResult<Vec<u32>> {
        fca::derive_objects(&self.inner, &attributes).map_err(to_py)
    }

    /// All formal concepts with their cover relation.
    #[pyo3(signature = (max_concepts=None))]
    fn lattice(&self, max_concepts: Option<usize>) -> PyResult<PyLattice> {
        Ok(PyLattice {
            inner: fca::build_lattice(&self.inner, budget(max_concepts)).map_err(to_py)?,
        })
    }

    /// Remove `fraction` of the edges at random; returns `(input, target)`.
    #[pyo3(signature = (fraction, seed=0))]
    fn split_random(&self, fraction: f64, seed: u64) -> PyResult<(PyContext, PyContext)> {
        let pair = context::split_random_edges(&self.inner, RandomSplitOptions::new(fraction, seed)).map_err(to_py)?;
        Ok((PyContext { inner: pair.input }, PyContext { inner: pair.target }))
    }

    fn __repr__(&self) -> String {
        format!(
            "Context(objects={}, attributes={}, edges={})",
            self.inner.n_objects(),
            self.inner.n_attributes(),
            self.inner.n_edges()
        )
    }
}

/// Formal concepts in canonical order (bottom first, top last) and their covers.
#[pyclass(name = "Lattice", module = "latticelink_py", frozen)]
struct PyLattice {
    inner: ConceptLattice,
}

#[pymethods]
impl PyLattice {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn extent(&self, concept: usize) -> PyResult<Vec<u32>> {
        self.check(concept)?;
        Ok(self.inner.extent_ids(concept))
    }

    fn intent(&self, concept: usize) -> PyResult<Vec<u32>> {
        self.check(concept)?;
        Ok(self.inner.intent_ids(concept))
    }

    /// `(extent, intent)` of every concept.
    fn concepts(&self) -> Vec<(Vec<u32>, Vec<u32>)> {
        (0..self.inner.len())
            .map(|c| (self.inner.extent_ids(c), self.inner.intent_ids(c)))
            .collect()
    }

    /// `(lower, upper)` pairs of neighbouring concepts.
    #[getter]
    fn covers(&self) -> Vec<(usize, usize)> {
        self.inner.covers.clone()
    }

    fn is_cover(&self, lower: usize, upper: usize) -> bool {
        self.inner.is_cover(lower, upper)
    }

    /// Write the concept and cover JSON-lines files.
    fn write_jsonl(&self, concepts_path: PathBuf, covers_path: PathBuf) -> PyResult<()> {
        fca::write_concepts_jsonl(&self.inner, concepts_path).map_err(to_py)?;
        fca::write_covers_jsonl(&self.inner, covers_path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Lattice(concepts={}, covers={})", self.inner.len(), self.inner.covers.len())
    }
}

impl PyLattice {
    fn check(&self, concept: usize) -> PyResult<()> {
        if concept >= self.inner.len() {
            return Err(PyValueError::new_err(format!(
                "concept {concept} out of range ({} concepts)",
                self.inner.len()
            )));
        }
        Ok(())
    }
}

fn scored(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<ScoredSet> {
    ScoredSet::new(scores, labels).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::roc_auc(&scored(scores, labels)?).map_err(to_py)
}

#[pyfunction]
fn aupr(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::aupr(&scored(scores, labels)?).map_err(to_py)
}

/// `(f1, threshold)` of the best threshold on the 0.05 grid.
#[pyfunction]
fn best_f1(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(f64, f64)> {
    metrics::best_f1_sweep(&scored(scores, labels)?).map_err(to_py)
}

#[pyfunction]
fn evaluate(py: Python<'_>, scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Py<PyAny>> {
    let report = metrics::evaluate(&scored(scores, labels)?).map_err(to_py)?;
    to_python(py, &report)
}

/// A run directory with staged, hash-checked artifacts.
#[pyclass(name = "Pipeline", module = "latticelink_py", frozen)]
struct PyPipeline {
    run: Run,
}

#[pymethods]
impl PyPipeline {
    /// `config` is a JSON string or a path to a JSON file; omitted fields take defaults.
    #[new]
    #[pyo3(signature = (out_dir, config=None, input=None, seed=None))]
    fn new(out_dir: PathBuf, config: Option<&str>, input: Option<PathBuf>, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = match config {
            None => RunConfig::default(),
            Some(c) if c.trim_start().starts_with('{') => {
                serde_json::from_str(c).map_err(|e| ConfigError::new_err(e.to_string()))?
            }
            Some(path) => RunConfig::load(path).map_err(to_py)?,
        };
        if input.is_some() {
            cfg.input = input;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(PyPipeline {
            run: Run::new(out_dir, cfg).map_err(to_py)?,
        })
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_python(py, &self.run.config)
    }

    fn ingest(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_python(py, &self.run.ingest().map_err(to_py)?)
    }

    fn split(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_python(py, &self.run.split().map_err(to_py)?)
    }

    fn concepts(&self) -> PyResult<usize> {
        self.run.concepts().map_err(to_py)
    }

    fn covers(&self) -> PyResult<usize> {
        self.run.covers().map_err(to_py)
    }

    /// `side` is `"object"` or `"attribute"`.
    fn pretrain(&self, py: Python<'_>, side: &str) -> PyResult<Py<PyAny>> {
        let side = match side {
            "object" => Side::Object,
            "attribute" => Side::Attribute,
            other => return Err(ConfigError::new_err(format!("unknown side {other:?}"))),
        };
        to_python(py, &self.run.pretrain(side).map_err(to_py)?)
    }

    /// `task` is `"oo"` or `"oa"`.
    fn finetune(&self, task: &str) -> PyResult<()> {
        self.run.finetune(parse(task)?).map_err(to_py)
    }

    /// Score the held-out candidates; returns the report name.
    fn predict(&self, task: &str) -> PyResult<String> {
        self.run.predict(parse(task)?).map_err(to_py)
    }

    fn eval(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        to_python(py, &self.run.eval(name).map_err(to_py)?)
    }

    /// `method` is `"cn"` or `"mf"`.
    #[pyo3(signature = (task, method="cn"))]
    fn baseline(&self, py: Python<'_>, task: &str, method: &str) -> PyResult<Py<PyAny>> {
        let method: BaselineMethod = parse(method)?;
        to_python(py, &self.run.baseline(parse(task)?, method).map_err(to_py)?)
    }

    fn ablate_no_pretrain(&self, py: Python<'_>, task: &str) -> PyResult<Py<PyAny>> {
        to_python(py, &self.run.ablate_no_pretrain(parse(task)?).map_err(to_py)?)
    }

    /// Every stage from ingest to eval for one task.
    fn run_all(&self, py: Python<'_>, task: &str) -> PyResult<Py<PyAny>> {
        let task: Task = parse(task)?;
        to_python(py, &self.run.run_all(task).map_err(to_py)?)
    }
}

#[pymodule]
fn latticelink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyContext>()?;
    m.add_class::<PyLattice>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(aupr, m)?)?;
    m.add_function(wrap_pyfunction!(best_f1, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    let py = m.py();
    m.add("LatticeLinkError", py.get_type::<LatticeLinkError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("BudgetExceeded", py.get_type::<BudgetExceeded>())?;
    m.add("ArtifactError", py.get_type::<ArtifactError>())?;
    Ok(())
}
