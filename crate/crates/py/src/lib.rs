//! Python bindings: graphs, teacher and student models, the distillation
//! loss, edge sampling and the multi-seed runners.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use kdst::bench::{self, RunConfig, TeacherSource};
use kdst::graphio;
use kdst::numkit::{Rng, Tensor};
use kdst::sadsd;
use kdst::students::{StudentArch, StudentKind, StudentModel};
use kdst::teachers::{self, TeacherArch, TeacherKind, TeacherModel};

fn err(e: kdst::Error) -> PyErr {
    match e {
        kdst::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_kind<T: serde::de::DeserializeOwned>(name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown model kind {name:?}")))
}

fn matrix(rows: Vec<Vec<f32>>) -> PyResult<Tensor> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Tensor::new(&[n, d], rows.into_iter().flatten().collect()).map_err(err)
}

fn rows(t: &Tensor) -> Vec<Vec<f32>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

/// An undirected attributed graph with node labels.
#[pyclass(name = "Graph", module = "kdst_py")]
pub struct PyGraph {
    inner: graphio::Graph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(features: Vec<Vec<f32>>, labels: Vec<usize>, n_classes: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        let inner = graphio::Graph::new(matrix(features)?, labels, n_classes, &edges).map_err(err)?;
        Ok(Self { inner })
    }

    /// Reads a dataset directory written by `save`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: graphio::load_graph(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        graphio::save_graph(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_feats(&self) -> usize {
        self.inner.n_feats()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    /// Undirected edges `(u, v)` with `u < v`.
    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }

    fn features(&self) -> Vec<Vec<f32>> {
        rows(self.inner.features())
    }

    fn row_normalize_features(&mut self) {
        self.inner.row_normalize_features();
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(nodes={}, edges={}, feats={}, classes={})",
            self.inner.n_nodes(),
            self.inner.n_edges(),
            self.inner.n_feats(),
            self.inner.n_classes()
        )
    }
}

/// A GCN, GraphSAGE or GAT teacher.
#[pyclass(name = "Teacher", module = "kdst_py")]
pub struct PyTeacher {
    inner: TeacherModel,
}

#[pymethods]
impl PyTeacher {
    #[new]
    #[pyo3(signature = (kind, in_dim, out_dim, seed=0, hidden=None, heads=None))]
    fn new(kind: &str, in_dim: usize, out_dim: usize, seed: u64, hidden: Option<usize>, heads: Option<usize>) -> PyResult<Self> {
        let mut arch = TeacherArch::new(parse_kind::<TeacherKind>(kind)?, in_dim, out_dim);
        if let Some(h) = hidden {
            arch.hidden = h;
        }
        if let Some(h) = heads {
            arch.heads = h;
        }
        Ok(Self {
            inner: TeacherModel::new(arch, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = teachers::load_teacher(&path).map_err(err)?;
        Ok(Self { inner })
    }

    /// Logits for every node of `graph`.
    fn predict(&self, py: Python<'_>, graph: &PyGraph) -> PyResult<Vec<Vec<f32>>> {
        let g = &graph.inner;
        let t = py.detach(|| self.inner.predict(g)).map_err(err)?;
        Ok(rows(&t))
    }

    fn count_params(&self) -> usize {
        self.inner.count_params()
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.arch.kind.to_string()
    }
}

/// A graph-free student (FR-KAN+, FR-KAN, spline KAN or MLP).
#[pyclass(name = "Student", module = "kdst_py")]
pub struct PyStudent {
    inner: StudentModel,
}

#[pymethods]
impl PyStudent {
    #[new]
    #[pyo3(signature = (kind, in_dim, out_dim, hidden=vec![24], grid=1, seed=0))]
    fn new(kind: &str, in_dim: usize, out_dim: usize, hidden: Vec<usize>, grid: usize, seed: u64) -> PyResult<Self> {
        let mut arch = StudentArch::new(parse_kind::<StudentKind>(kind)?, in_dim, out_dim);
        arch.hidden = hidden;
        arch.grid = grid;
        Ok(Self {
            inner: StudentModel::new(arch, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: StudentModel::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn predict(&self, py: Python<'_>, graph: &PyGraph) -> PyResult<Vec<Vec<f32>>> {
        let g = &graph.inner;
        Ok(rows(&py.detach(|| self.inner.predict(g)).map_err(err)?))
    }

    /// Output of the last hidden layer.
    fn embed(&self, py: Python<'_>, graph: &PyGraph) -> PyResult<Vec<Vec<f32>>> {
        let g = &graph.inner;
        Ok(rows(&py.detach(|| self.inner.embed(g)).map_err(err)?))
    }

    fn count_params(&self) -> usize {
        self.inner.count_params()
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.arch.kind.to_string()
    }
}

/// `τ²`-scaled mean KL(teacher ‖ student) over the given node pairs.
#[pyfunction]
#[pyo3(signature = (teacher_logits, student_logits, pairs, tau=2.0, both_endpoints=false))]
fn distill_loss(
    teacher_logits: Vec<Vec<f32>>,
    student_logits: Vec<Vec<f32>>,
    pairs: Vec<(usize, usize)>,
    tau: f32,
    both_endpoints: bool,
) -> PyResult<f32> {
    let (t, s) = (matrix(teacher_logits)?, matrix(student_logits)?);
    sadsd::distill_loss(&t, &s, &pairs, tau, both_endpoints).map_err(err)
}

/// One independent Bernoulli draw per probability.
#[pyfunction]
fn sample_edges(probs: Vec<f32>, seed: u64) -> Vec<bool> {
    sadsd::sample_edges(&probs, &mut Rng::new(seed))
}

fn config(json: &str) -> PyResult<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn metrics_json(run: &bench::RunOutput) -> PyResult<String> {
    serde_json::to_string(&run.metrics).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Trains one teacher per seed. Takes and returns JSON.
#[pyfunction]
#[pyo3(signature = (config_json, out=None))]
fn run_teachers(py: Python<'_>, config_json: &str, out: Option<PathBuf>) -> PyResult<String> {
    let cfg = config(config_json)?;
    let run = py.detach(|| bench::run_teachers(&cfg, out.as_deref())).map_err(err)?;
    metrics_json(&run)
}

/// Distils one student per seed, from live teachers or saved teacher logits.
#[pyfunction]
#[pyo3(signature = (config_json, out=None, teacher_logits=None))]
fn run_distill(py: Python<'_>, config_json: &str, out: Option<PathBuf>, teacher_logits: Option<PathBuf>) -> PyResult<String> {
    let cfg = config(config_json)?;
    let source = teacher_logits.map_or(TeacherSource::Live, TeacherSource::Logits);
    let run = py.detach(|| bench::run_distill(&cfg, &source, out.as_deref())).map_err(err)?;
    metrics_json(&run)
}

/// Median latency in milliseconds of full-graph inference.
#[pyfunction]
#[pyo3(signature = (model, graph, runs=bench::LATENCY_RUNS))]
fn latency_ms(model: &Bound<'_, PyAny>, graph: &PyGraph, runs: usize) -> PyResult<f64> {
    let g = &graph.inner;
    let stats = if let Ok(t) = model.cast::<PyTeacher>() {
        bench::teacher_latency(&t.borrow().inner, g, bench::LATENCY_WARMUP, runs)
    } else if let Ok(s) = model.cast::<PyStudent>() {
        bench::student_latency(&s.borrow().inner, g, bench::LATENCY_WARMUP, runs)
    } else {
        return Err(PyValueError::new_err("expected a Teacher or Student"));
    };
    Ok(stats.map_err(err)?.median_ms)
}

#[pymodule]
fn kdst_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyTeacher>()?;
    m.add_class::<PyStudent>()?;
    m.add_function(wrap_pyfunction!(distill_loss, m)?)?;
    m.add_function(wrap_pyfunction!(sample_edges, m)?)?;
    m.add_function(wrap_pyfunction!(run_teachers, m)?)?;
    m.add_function(wrap_pyfunction!(run_distill, m)?)?;
    m.add_function(wrap_pyfunction!(latency_ms, m)?)?;
    Ok(())
}
