//! Python bindings over the core toolkit: beat CSV loading, model build,
//! checkpoint I/O, inference, metrics, late fusion and Grad-CAM.

use std::path::PathBuf;

use ecgkit::ensemble;
use ecgkit::eval;
use ecgkit::ingest::csv_io::read_beats_file;
use ecgkit::models::{self, checkpoint, Architecture, ModelDescriptor};
use ecgkit::tensor::{Float, Tensor};
use ecgkit::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Rows of equal length as a `[rows, cols]` tensor.
fn matrix<T: Float>(rows: &[Vec<T>]) -> PyResult<Tensor<T>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Tensor::new(&[rows.len(), cols], rows.concat()).map_err(to_py)
}

fn rows<T: Float>(t: &Tensor<T>) -> Vec<Vec<T>> {
    (0..t.dim(0)).map(|i| t.row(i).to_vec()).collect()
}

/// Parses JSON text into the equivalent Python object.
fn json_to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A beat classifier with its parameters.
#[pyclass(name = "Model", module = "ecgkit")]
struct PyModel {
    inner: models::Model,
}

#[pymethods]
impl PyModel {
    /// Fresh model of the named architecture with its default configuration.
    #[staticmethod]
    #[pyo3(signature = (architecture, seed = 0, input_len = None))]
    fn build(architecture: &str, seed: u64, input_len: Option<usize>) -> PyResult<Self> {
        let arch: Architecture = architecture.parse().map_err(to_py)?;
        let mut desc = ModelDescriptor::new(arch);
        if let Some(len) = input_len {
            desc.input_len = len;
        }
        let inner = models::build(&desc, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = checkpoint::load(&path).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn architecture(&self) -> &'static str {
        self.inner.architecture().as_str()
    }

    #[getter]
    fn input_len(&self) -> usize {
        self.inner.descriptor.input_len
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.descriptor.n_classes
    }

    fn param_count(&self) -> usize {
        self.inner.params.param_count()
    }

    /// Descriptor as a dict.
    fn descriptor<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.descriptor)
    }

    /// Eval-mode logits, one row per beat.
    #[pyo3(signature = (beats, chunk = 256))]
    fn predict(&self, beats: Vec<Vec<f32>>, chunk: usize) -> PyResult<Vec<Vec<f32>>> {
        let x = matrix(&beats)?;
        let logits = self.inner.predict(&x, chunk).map_err(to_py)?;
        Ok(rows(&logits))
    }

    /// Normalized saliency per beat, targeting the predicted class unless
    /// `targets` is given.
    #[pyo3(signature = (beats, targets = None))]
    fn grad_cam(&self, beats: Vec<Vec<f32>>, targets: Option<Vec<usize>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(&beats)?;
        let maps = eval::grad_cam(&self.inner, &x, targets.as_deref()).map_err(to_py)?;
        Ok(maps.into_iter().map(|m| m.values).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(architecture={:?}, params={})",
            self.inner.architecture().as_str(),
            self.inner.params.param_count()
        )
    }
}

/// Beat rows, labels and split tags.
type BeatColumns = (Vec<Vec<f32>>, Vec<usize>, Vec<&'static str>);

/// Reads a beat CSV into `(beats, labels, splits)`.
#[pyfunction]
fn read_beats(path: PathBuf) -> PyResult<BeatColumns> {
    let ds = read_beats_file(&path).map_err(to_py)?;
    let mut beats = Vec::with_capacity(ds.len());
    let mut labels = Vec::with_capacity(ds.len());
    let mut splits = Vec::with_capacity(ds.len());
    for b in ds.beats {
        labels.push(b.label);
        splits.push(b.split.as_str());
        beats.push(b.samples);
    }
    Ok((beats, labels, splits))
}

/// Confusion matrix, per-class and macro metrics for logits against labels.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, logits: Vec<Vec<f64>>, y_true: Vec<usize>) -> PyResult<Bound<'py, PyAny>> {
    let ev = eval::evaluate(&matrix(&logits)?, &y_true).map_err(to_py)?;
    let value = serde_json::json!({
        "predictions": ev.predictions,
        "confusion": ev.confusion.counts,
        "metrics": ev.metrics,
    });
    json_to_py(py, &value)
}

/// Percentile bootstrap interval of accuracy over resampled indices.
#[pyfunction]
#[pyo3(signature = (y_true, y_pred, n_resamples = 1000, seed = 0))]
fn bootstrap_accuracy<'py>(
    py: Python<'py>,
    y_true: Vec<usize>,
    y_pred: Vec<usize>,
    n_resamples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    if y_true.len() != y_pred.len() {
        return Err(PyValueError::new_err("y_true and y_pred differ in length"));
    }
    let ci = eval::bootstrap_ci(
        "accuracy",
        y_true.len(),
        |idx| eval::accuracy_at(&y_true, &y_pred, idx),
        n_resamples,
        seed,
        1,
    )
    .map_err(to_py)?;
    json_to_py(py, &ci)
}

/// Weighted sum of per-model logits.
#[pyfunction]
fn fuse(logits: Vec<Vec<Vec<f64>>>, weights: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let tensors = logits.iter().map(|m| matrix(m)).collect::<PyResult<Vec<_>>>()?;
    let fused = ensemble::fuse(&tensors, &weights).map_err(to_py)?;
    Ok(rows(&fused))
}

/// F1-proportional weights of the two best models.
#[pyfunction]
fn top2_weights(f1_best: f64, f1_second: f64) -> PyResult<(f64, f64)> {
    ensemble::top2_weights(f1_best, f1_second).map_err(to_py)
}

#[pymodule(name = "ecgkit")]
fn ecgkit_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(read_beats, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(top2_weights, m)?)?;
    m.add("CLASS_NAMES", ecgkit::ingest::CLASS_NAMES.to_vec())?;
    m.add("ARCHITECTURES", Architecture::ALL.map(Architecture::as_str).to_vec())?;
    Ok(())
}
