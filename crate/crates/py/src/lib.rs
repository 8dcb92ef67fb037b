//! Python bindings. Labels and attributes are 0-based here, as in the Rust
//! API; the CSV files are the only place that uses 1-based ids.

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gerne::dataset::{self, GroupStats, GroupedDataset, SyntheticSpec};
use gerne::extrapolation as ext;
use gerne::harness::{self, Context, RunConfig, VarianceConfig};
use gerne::model::{self, Architecture, Checkpoint, GradientVector};
use gerne::rng::{self, Stream};
use gerne::GerneError;

fn py_err(e: GerneError) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("ragged feature matrix"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// A grouped classification dataset.
#[pyclass(name = "Dataset", module = "gerne_py")]
pub struct PyDataset {
    inner: GroupedDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (features, labels, attributes, num_classes, num_attributes))]
    fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        attributes: Option<Vec<usize>>,
        num_classes: usize,
        num_attributes: usize,
    ) -> PyResult<Self> {
        let x = to_array(features)?;
        GroupedDataset::new(x, labels, attributes, num_classes, num_attributes)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    /// Synthetic dataset from a JSON spec.
    #[staticmethod]
    fn synthetic(spec_json: &str) -> PyResult<Self> {
        let spec: SyntheticSpec = serde_json::from_str(spec_json).map_err(json_err)?;
        dataset::generate_synthetic(&spec)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, has_attributes = true))]
    fn from_csv(path: &str, has_attributes: bool) -> PyResult<Self> {
        dataset::load_csv(path, has_attributes)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        dataset::write_csv(&self.inner, path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.features().to_owned())
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn attributes(&self) -> Option<Vec<usize>> {
        self.inner.true_attributes().map(<[usize]>::to_vec)
    }

    /// `[y][a]` group sizes of the true grouping.
    fn group_sizes(&self) -> PyResult<Vec<Vec<usize>>> {
        dataset::compute_group_stats(&self.inner)
            .map(|s| s.group_sizes)
            .map_err(py_err)
    }
}

/// Softmax classifier: linear or an MLP with up to two hidden layers.
#[pyclass(name = "Model", module = "gerne_py")]
pub struct PyModel {
    inner: model::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input_dim, num_classes, hidden = Vec::new(), seed = 0))]
    fn new(input_dim: usize, num_classes: usize, hidden: Vec<usize>, seed: u64) -> PyResult<Self> {
        let arch = Architecture::mlp(input_dim, &hidden, num_classes);
        model::init_model(&arch, &mut rng::stream(seed, Stream::Init))
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    /// Model from a checkpoint JSON document.
    #[staticmethod]
    fn from_checkpoint(text: &str) -> PyResult<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(json_err)?;
        ckpt.into_model().map(|inner| Self { inner }).map_err(py_err)
    }

    fn checkpoint(&self) -> PyResult<String> {
        serde_json::to_string(&Checkpoint::from_model(&self.inner)).map_err(json_err)
    }

    #[getter]
    fn parameters(&self) -> Vec<f64> {
        self.inner.parameters().to_vec()
    }

    fn forward(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = to_array(features)?;
        if x.ncols() != self.inner.architecture().input_dim {
            return Err(PyValueError::new_err("feature dimension mismatch"));
        }
        Ok(to_rows(&self.inner.forward(x.view())))
    }

    /// Mean cross-entropy of a batch.
    fn loss(&self, features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        let x = to_array(features)?;
        self.inner.batch_loss(x.view(), &labels, None).map_err(py_err)
    }

    /// `(loss, gradient)` of the mean cross-entropy.
    fn gradient(&self, features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(f64, Vec<f64>)> {
        let x = to_array(features)?;
        let (loss, g) = self.inner.batch_gradient(x.view(), &labels, None).map_err(py_err)?;
        Ok((loss, g.0))
    }
}

fn stats(sizes: Vec<Vec<usize>>) -> PyResult<GroupStats> {
    GroupStats::from_sizes(sizes).map_err(py_err)
}

/// Within-class attribute frequencies for `[y][a]` group sizes.
#[pyfunction]
fn group_alpha(sizes: Vec<Vec<usize>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(stats(sizes)?.alpha)
}

/// Feasible `beta` interval: dict with `lo`, `hi` and `simplified_hi`.
#[pyfunction]
fn beta_bounds<'py>(py: Python<'py>, sizes: Vec<Vec<usize>>, c: f64) -> PyResult<Bound<'py, PyDict>> {
    let s = stats(sizes)?;
    let full = ext::beta_bounds_full(&s, c).map_err(py_err)?;
    let (_, simplified_hi) = ext::beta_bounds_simplified(&s, c).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("lo", full.lo)?;
    d.set_item("hi", full.hi)?;
    d.set_item("simplified_hi", simplified_hi)?;
    Ok(d)
}

/// Implied group distribution of the extrapolated batch.
#[pyfunction]
fn p_ext(sizes: Vec<Vec<usize>>, c: f64, beta: f64) -> PyResult<Vec<Vec<f64>>> {
    ext::compute_p_ext(&stats(sizes)?, c, beta).map_err(py_err)
}

#[pyfunction]
fn extrapolated_loss(loss_lb: f64, loss_b: f64, beta: f64) -> f64 {
    ext::extrapolated_loss(loss_lb, loss_b, beta)
}

#[pyfunction]
fn extrapolated_gradient(grad_lb: Vec<f64>, grad_b: Vec<f64>, beta: f64) -> PyResult<Vec<f64>> {
    if grad_lb.len() != grad_b.len() {
        return Err(PyValueError::new_err("gradient dimension mismatch"));
    }
    Ok(ext::extrapolated_gradient(&GradientVector(grad_lb), &GradientVector(grad_b), beta).0)
}

/// `beta` that puts `target` mass on an attribute, given the attribute's
/// rate inside each of the two pseudo-groups and the pseudo-group ratios.
#[pyfunction]
fn beta_target(target: f64, conditionals: [f64; 2], pseudo_alpha: [f64; 2], c: f64) -> PyResult<f64> {
    ext::beta_target(target, &conditionals, &pseudo_alpha, c).map_err(py_err)
}

/// `(min, max)` reachable by plain mixing of the two pseudo-groups.
#[pyfunction]
fn mixture_bounds(conditionals: [f64; 2]) -> PyResult<(f64, f64)> {
    let b = ext::mixture_bounds(&conditionals, &[0.0, 1.0]).map_err(py_err)?;
    Ok((b.min, b.max))
}

fn parse_run(config_json: &str) -> PyResult<RunConfig> {
    RunConfig::from_json(config_json).map_err(py_err)
}

/// One training run; returns the report as JSON.
#[pyfunction]
fn run_training(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config = parse_run(config_json)?;
    let report = py.detach(|| harness::run_training(&config)).map_err(py_err)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// Grid search; returns the grid report as JSON.
#[pyfunction]
fn run_grid(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config = parse_run(config_json)?;
    let report = py
        .detach(|| Context::prepare(&config).and_then(|ctx| harness::run_grid_search(&ctx, &config)))
        .map_err(py_err)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// Loss variance probe; returns the report as JSON.
#[pyfunction]
fn run_variance(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config: VarianceConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let report = py.detach(|| harness::run_variance_probe(&config)).map_err(py_err)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// Built-in oracle checks; returns the verification report as JSON.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn verify(py: Python<'_>, seed: u64) -> PyResult<String> {
    let report = py.detach(|| harness::run_verification_suite(seed)).map_err(py_err)?;
    serde_json::to_string(&report).map_err(json_err)
}

#[pymodule]
pub fn gerne_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SCHEMA_VERSION", harness::SCHEMA_VERSION)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(group_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(beta_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(p_ext, m)?)?;
    m.add_function(wrap_pyfunction!(extrapolated_loss, m)?)?;
    m.add_function(wrap_pyfunction!(extrapolated_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(beta_target, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(run_training, m)?)?;
    m.add_function(wrap_pyfunction!(run_grid, m)?)?;
    m.add_function(wrap_pyfunction!(run_variance, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
