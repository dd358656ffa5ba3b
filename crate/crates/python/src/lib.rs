//! Python bindings: datasets, training, embedding extraction and metrics
//! over plain nested lists.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ndarray::Array2;
use std::path::Path;
use tscot::dataset::{self, NoiseKind, NoiseSpec, SyntheticSignal, TimeSeriesDataset};
use tscot::eval::{self, AblationVariant};
use tscot::training::{self, TrainConfig, TrainState};
use tscot::{checkpoint, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Format(_) | Error::Json(_) => PyIOError::new_err(e.to_string()),
        Error::NonFinite { .. } | Error::DegenerateEmbedding => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn parse_config(json: Option<&str>) -> PyResult<TrainConfig> {
    match json {
        None => Ok(TrainConfig::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("config: {e}"))),
    }
}

/// A labeled or unlabeled multivariate time-series collection.
#[pyclass(name = "Dataset", module = "tscot_py", from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: TimeSeriesDataset,
}

#[pymethods]
impl PyDataset {
    /// `samples[n][t][d]`, optional integer labels.
    #[new]
    #[pyo3(signature = (samples, labels=None, name="dataset".to_string()))]
    fn new(samples: Vec<Vec<Vec<f32>>>, labels: Option<Vec<u32>>, name: String) -> PyResult<Self> {
        let n = samples.len();
        let t = samples.first().map_or(0, Vec::len);
        let d = samples.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * t * d);
        for s in &samples {
            if s.len() != t || s.iter().any(|step| step.len() != d) {
                return Err(PyValueError::new_err("samples must be a regular [n][t][d] nest"));
            }
            s.iter().for_each(|step| flat.extend_from_slice(step));
        }
        let k = labels.as_ref().map(|l| l.iter().max().map_or(0, |m| *m as usize + 1));
        let inner = TimeSeriesDataset::new(name, n, t, d, flat, labels, k).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    /// Reads a `.tsd` or `.csv` file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        dataset::load_dataset(Path::new(path)).map(|inner| PyDataset { inner }).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        dataset::write_dataset(&self.inner, Path::new(path)).map_err(py_err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn t(&self) -> usize {
        self.inner.t
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn labels(&self) -> Option<Vec<u32>> {
        self.inner.labels.clone()
    }

    #[getter]
    fn class_count(&self) -> Option<usize> {
        self.inner.class_count
    }

    /// Samples as `[n][t][d]` nested lists.
    fn to_list(&self) -> Vec<Vec<Vec<f32>>> {
        (0..self.inner.n)
            .map(|i| self.inner.sample(i).chunks(self.inner.d).map(<[f32]>::to_vec).collect())
            .collect()
    }

    /// Magnitude spectra `[n][t/2+1][d]`.
    #[pyo3(signature = (log_magnitude=false))]
    fn frequency_view(&self, log_magnitude: bool) -> Vec<Vec<Vec<f64>>> {
        let fv = dataset::compute_frequency_view_with(&self.inner, log_magnitude);
        (0..fv.n)
            .map(|i| fv.sample(i).chunks(fv.d).map(<[f64]>::to_vec).collect())
            .collect()
    }

    /// Corrupted copy: `kind` is "missing" or "gaussian".
    fn with_noise(&self, kind: &str, level: f64, seed: u64) -> PyResult<Self> {
        let kind = match kind {
            "missing" => NoiseKind::Missing,
            "gaussian" => NoiseKind::Gaussian,
            _ => return Err(PyValueError::new_err("kind must be 'missing' or 'gaussian'")),
        };
        dataset::inject_noise(&self.inner, &NoiseSpec { kind, level, seed })
            .map(|inner| PyDataset { inner })
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Dataset(name={:?}, n={}, t={}, d={})", self.inner.name, self.inner.n, self.inner.t, self.inner.d)
    }
}

/// Synthetic `k`-class dataset (sinusoid at bin c+2 plus a class trend).
#[pyfunction]
#[pyo3(signature = (n_per_class, t, d, k, seed, amplitude=None, trend=None))]
fn generate_synthetic(
    n_per_class: usize,
    t: usize,
    d: usize,
    k: usize,
    seed: u64,
    amplitude: Option<f64>,
    trend: Option<f64>,
) -> PyResult<PyDataset> {
    let def = SyntheticSignal::default();
    let signal = SyntheticSignal {
        amplitude: amplitude.unwrap_or(def.amplitude),
        trend: trend.unwrap_or(def.trend),
    };
    dataset::generate_synthetic_with(n_per_class, t, d, k, seed, signal)
        .map(|inner| PyDataset { inner })
        .map_err(py_err)
}

/// Standardizes `train` and `others` with the training channel statistics.
#[pyfunction]
fn standardize(train: &PyDataset, others: Vec<PyDataset>) -> PyResult<(PyDataset, Vec<PyDataset>)> {
    let refs: Vec<&TimeSeriesDataset> = others.iter().map(|o| &o.inner).collect();
    let (t, rest, _) = dataset::standardize(&train.inner, &refs).map_err(py_err)?;
    Ok((PyDataset { inner: t }, rest.into_iter().map(|inner| PyDataset { inner }).collect()))
}

/// Trained encoders, optimizer state and prototype bank.
#[pyclass(name = "Model", module = "tscot_py", from_py_object)]
#[derive(Clone)]
pub struct PyModel {
    inner: TrainState,
    loss_csv: String,
}

#[pymethods]
impl PyModel {
    /// Trains on a standardized dataset. `config` is a JSON object of
    /// training fields; omitted fields take their defaults.
    #[staticmethod]
    #[pyo3(signature = (data, config=None))]
    fn train(py: Python<'_>, data: &PyDataset, config: Option<&str>) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        let ds = data.inner.clone();
        let (inner, log) = py.detach(move || training::train_configured(&ds, &cfg)).map_err(py_err)?;
        Ok(PyModel {
            inner,
            loss_csv: log.loss_csv().map_err(py_err)?,
        })
    }

    /// Semi-supervised training with the labeled indices `subset`.
    #[staticmethod]
    #[pyo3(signature = (data, subset, config=None))]
    fn train_semi_supervised(py: Python<'_>, data: &PyDataset, subset: Vec<usize>, config: Option<&str>) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        let ds = data.inner.clone();
        let sub = dataset::LabeledSubset { indices: subset };
        let (inner, log) = py
            .detach(move || training::train_semi_supervised(&ds, &sub, &cfg))
            .map_err(py_err)?;
        Ok(PyModel {
            inner,
            loss_csv: log.loss_csv().map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = checkpoint::restore(Path::new(path)).map_err(py_err)?;
        Ok(PyModel {
            inner,
            loss_csv: String::new(),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::checkpoint(&self.inner, Path::new(path)).map_err(py_err)
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    /// Per-batch loss log of the training call (CSV text).
    #[getter]
    fn loss_csv(&self) -> String {
        self.loss_csv.clone()
    }

    /// Resolved training config as JSON.
    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Frozen embeddings `[n][width]`; variant is "T", "F", "T+F" or "full".
    #[pyo3(signature = (data, variant="full"))]
    fn embed(&self, data: &PyDataset, variant: &str) -> PyResult<Vec<Vec<f64>>> {
        let v: AblationVariant = variant.parse().map_err(py_err)?;
        eval::extract_embeddings(&self.inner, &data.inner, v).map(|m| rows(&m)).map_err(py_err)
    }
}

/// Linear probe; returns accuracy, auroc, nmi and the chosen L2 strength.
#[pyfunction]
fn linear_probe<'py>(
    py: Python<'py>,
    train_emb: Vec<Vec<f64>>,
    train_labels: Vec<u32>,
    test_emb: Vec<Vec<f64>>,
    test_labels: Vec<u32>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let tr = matrix(&train_emb)?;
    let te = matrix(&test_emb)?;
    let rep = eval::linear_probe(tr.view(), &train_labels, te.view(), &test_labels, seed).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("accuracy", rep.accuracy)?;
    d.set_item("auroc", rep.auroc)?;
    d.set_item("nmi", rep.nmi)?;
    d.set_item("l2", rep.l2)?;
    Ok(d)
}

/// Macro one-vs-rest AUROC of `scores[n][k]`.
#[pyfunction]
fn auroc_macro(scores: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    eval::auroc_macro(matrix(&scores)?.view(), &labels).map_err(py_err)
}

/// Normalized mutual information (arithmetic-mean normalization).
#[pyfunction]
fn nmi(a: Vec<i64>, b: Vec<i64>) -> PyResult<f64> {
    eval::nmi(&a, &b).map_err(py_err)
}

/// Instance contrastive loss of clean/augmented embedding pairs.
#[pyfunction]
#[pyo3(signature = (clean, augmented, tau=0.1, ntxent=false))]
fn instance_loss(clean: Vec<Vec<f64>>, augmented: Vec<Vec<f64>>, tau: f64, ntxent: bool) -> PyResult<f64> {
    let (c, a) = (matrix(&clean)?, matrix(&augmented)?);
    tscot::losses::instance_loss(c.view(), a.view(), tau, ntxent)
        .map(|l| l.value)
        .map_err(py_err)
}

#[pymodule]
fn tscot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(linear_probe, m)?)?;
    m.add_function(wrap_pyfunction!(auroc_macro, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(instance_loss, m)?)?;
    Ok(())
}
