//! Python bindings: datasets, LSTM training and inference, metrics and
//! cross-validation.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sits_core::data::{
    apply_normalizer, fit_normalizer, gap_fill_series, generate_synthetic, load_dataset,
    save_dataset, MaskedSeries, Normalizer, Preset,
};
use sits_core::eval::{compare_methods, confusion_matrix, metrics_from_confusion, CvConfig, Method, MetricsReport};
use sits_core::model::{
    extract_features, load_model, load_normalizer, predict, save_model, save_normalizer, train,
    ModelParams, TrainConfig,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

/// Labelled multi-band time series.
#[pyclass(name = "Dataset", module = "sits")]
struct PyDataset {
    inner: sits_core::data::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Generate a seeded synthetic benchmark (`"thau-like"` or `"reunion-like"`).
    #[staticmethod]
    #[pyo3(signature = (preset, seed=0))]
    fn synthetic(preset: &str, seed: u64) -> PyResult<Self> {
        let p = Preset::parse(preset).ok_or_else(|| value_err(format!("unknown preset {preset:?}")))?;
        let inner = generate_synthetic(&p.config(seed)).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(data: PathBuf, manifest: PathBuf) -> PyResult<Self> {
        let inner = load_dataset(&data, &manifest).map_err(io_err)?;
        Ok(Self { inner })
    }

    fn save(&self, data: PathBuf, manifest: PathBuf) -> PyResult<()> {
        save_dataset(&self.inner, &data, &manifest).map_err(io_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_timestamps(&self) -> usize {
        self.inner.num_timestamps
    }

    #[getter]
    fn num_features(&self) -> usize {
        self.inner.num_features
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.inner.class_names.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.samples.iter().map(|s| s.id.clone()).collect()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    /// Values of sample `i` as a `T x D` nested list.
    fn values(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        let s = self
            .inner
            .samples
            .get(i)
            .ok_or_else(|| value_err(format!("sample {i} out of range")))?;
        Ok(s.steps.iter().map(|v| v.as_slice().to_vec()).collect())
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(value_err(format!("sample {bad} out of range")));
        }
        Ok(Self {
            inner: self.inner.subset(&indices),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(samples={}, classes={}, T={}, D={})",
            self.inner.len(),
            self.inner.num_classes(),
            self.inner.num_timestamps,
            self.inner.num_features
        )
    }
}

fn train_config(
    hidden: usize,
    epochs: usize,
    seed: u64,
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        hidden_dim: hidden,
        epochs,
        seed,
        learning_rate: learning_rate.unwrap_or(d.learning_rate),
        batch_size: batch_size.unwrap_or(d.batch_size),
        ..d
    }
}

/// Trained LSTM classifier together with its input normalizer.
#[pyclass(name = "Model", module = "sits")]
struct PyModel {
    params: ModelParams,
    normalizer: Option<Normalizer>,
    history: Vec<f64>,
}

impl PyModel {
    fn prepare(&self, ds: &PyDataset) -> PyResult<sits_core::data::Dataset> {
        match &self.normalizer {
            Some(n) => apply_normalizer(n, &ds.inner).map_err(value_err),
            None => Ok(ds.inner.clone()),
        }
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (dataset, hidden=512, epochs=200, seed=0, learning_rate=None, batch_size=None, normalize=true))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        dataset: &PyDataset,
        hidden: usize,
        epochs: usize,
        seed: u64,
        learning_rate: Option<f64>,
        batch_size: Option<usize>,
        normalize: bool,
    ) -> PyResult<Self> {
        let cfg = train_config(hidden, epochs, seed, learning_rate, batch_size);
        let ds = &dataset.inner;
        py.detach(|| {
            let normalizer = if normalize {
                Some(fit_normalizer(ds).map_err(value_err)?)
            } else {
                None
            };
            let scaled = match &normalizer {
                Some(n) => apply_normalizer(n, ds).map_err(value_err)?,
                None => ds.clone(),
            };
            let out = train(&scaled, &cfg).map_err(value_err)?;
            Ok(Self {
                params: out.params,
                normalizer,
                history: out.history,
            })
        })
    }

    /// Load a model and, if present, its `<path>.norm` normalizer.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let params = load_model(&path).map_err(io_err)?;
        let norm_path = norm_path(&path);
        let normalizer = if norm_path.exists() {
            Some(load_normalizer(&norm_path).map_err(io_err)?)
        } else {
            None
        };
        Ok(Self {
            params,
            normalizer,
            history: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.params, &path).map_err(io_err)?;
        if let Some(n) = &self.normalizer {
            save_normalizer(n, &norm_path(&path)).map_err(io_err)?;
        }
        Ok(())
    }

    /// Predicted class index and class probabilities for every sample.
    fn predict(&self, py: Python<'_>, dataset: &PyDataset) -> PyResult<Vec<(usize, Vec<f64>)>> {
        let ds = self.prepare(dataset)?;
        let preds = py.detach(|| predict(&ds, &self.params)).map_err(value_err)?;
        Ok(preds
            .into_iter()
            .map(|p| (p.class, p.probs.into_vec()))
            .collect())
    }

    /// Final hidden state of every sample, one row of length `hidden_dim` each.
    fn extract_features(&self, py: Python<'_>, dataset: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        let ds = self.prepare(dataset)?;
        let table = py.detach(|| extract_features(&ds, &self.params)).map_err(value_err)?;
        Ok(table.rows.into_iter().map(|r| r.into_vec()).collect())
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.params.hidden_dim()
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.params.class_names.clone()
    }

    /// Mean training loss per epoch; empty for loaded models.
    #[getter]
    fn history(&self) -> Vec<f64> {
        self.history.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(D={}, H={}, classes={})",
            self.params.input_dim(),
            self.params.hidden_dim(),
            self.params.num_classes()
        )
    }
}

fn norm_path(model: &std::path::Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".norm");
    PathBuf::from(s)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("kappa", r.kappa)?;
    d.set_item("macro_f", r.macro_f)?;
    d.set_item("weighted_f", r.weighted_f)?;
    d.set_item("precision", r.per_class.iter().map(|c| c.precision).collect::<Vec<_>>())?;
    d.set_item("recall", r.per_class.iter().map(|c| c.recall).collect::<Vec<_>>())?;
    d.set_item("f", r.per_class.iter().map(|c| c.f_measure).collect::<Vec<_>>())?;
    d.set_item("support", r.per_class.iter().map(|c| c.support).collect::<Vec<_>>())?;
    Ok(d)
}

/// Accuracy, kappa and per-class/averaged F-measures for label lists.
#[pyfunction]
fn metrics<'py>(
    py: Python<'py>,
    truth: Vec<usize>,
    predicted: Vec<usize>,
    num_classes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cm = confusion_matrix(&truth, &predicted, num_classes).map_err(value_err)?;
    let report = metrics_from_confusion(&cm).map_err(value_err)?;
    report_dict(py, &report)
}

/// Stratified k-fold comparison; returns `{method: pooled metrics}`.
#[pyfunction]
#[pyo3(signature = (dataset, methods=vec!["lstm".to_string()], hidden=512, epochs=200, trees=400, k=5, seed=0))]
#[allow(clippy::too_many_arguments)]
fn crossval<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    methods: Vec<String>,
    hidden: usize,
    epochs: usize,
    trees: usize,
    k: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let methods = methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(value_err))
        .collect::<PyResult<Vec<_>>>()?;
    let mut cfg = CvConfig {
        train: train_config(hidden, epochs, seed, None, None),
        k,
        seed,
        ..CvConfig::default()
    };
    cfg.forest.num_trees = trees;
    cfg.forest.seed = seed;
    let ds = &dataset.inner;
    let results = py
        .detach(|| compare_methods(ds, &methods, &cfg, &mut |_| {}))
        .map_err(value_err)?;
    let out = PyDict::new(py);
    for r in &results {
        out.set_item(r.method.name(), report_dict(py, &r.pooled)?)?;
    }
    Ok(out)
}

/// Fill `None` gaps by linear interpolation, holding the nearest value at the ends.
#[pyfunction]
fn gap_fill(values: Vec<Option<f64>>) -> PyResult<Vec<f64>> {
    gap_fill_series(&MaskedSeries::from_options(&values))
        .map(|v| v.into_vec())
        .map_err(value_err)
}

#[pymodule]
fn sits(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(crossval, m)?)?;
    m.add_function(wrap_pyfunction!(gap_fill, m)?)?;
    Ok(())
}
