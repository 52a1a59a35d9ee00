//! Labelled time-series datasets: in-memory model, CSV/manifest ingestion,
//! preprocessing and a synthetic generator.

mod io;
mod preprocess;
mod synthetic;

pub use io::{load_dataset, parse_manifest, save_dataset, write_manifest};
pub use preprocess::{
    apply_normalizer, compute_indices, fill_gaps, fit_normalizer, gap_fill_series,
    with_radiometric_indices, BandLayout, Bands, IndexFlags, MaskedSeries, Normalizer,
    RadiometricIndices,
};
pub use synthetic::{generate_synthetic, ClassSizes, Preset, SyntheticConfig};

use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::Vector;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("row {row}: expected {expected} feature fields (T x D), found {found}")]
    Arity {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: unknown label {label:?}")]
    UnknownLabel { row: usize, label: String },
    #[error("row {row}, field {field}: non-numeric feature value {value:?}")]
    NonNumeric {
        row: usize,
        field: usize,
        value: String,
    },
    #[error("T x D overflows: T={t}, D={d}")]
    Overflow { t: usize, d: usize },
    #[error("no samples")]
    NoSamples,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("shape mismatch: expected {expected}, got {found}")]
    Shape { expected: String, found: String },
    #[error("series has no valid observation")]
    AllInvalid,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// One labelled trajectory (a pixel or an object) of `T` feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSample {
    pub id: String,
    pub label: usize,
    pub steps: Vec<Vector>,
}

impl TimeSeriesSample {
    pub fn num_timestamps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_features(&self) -> usize {
        self.steps.first().map_or(0, Vector::len)
    }

    /// Timestep-major concatenation, the column order of the data CSV.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_timestamps() * self.num_features());
        for step in &self.steps {
            out.extend_from_slice(step.as_slice());
        }
        out
    }
}

/// Provenance and schema of a dataset, serialized as a `key=value` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub num_timestamps: usize,
    pub num_features: usize,
    pub class_names: Vec<String>,
    pub seed: Option<u64>,
    pub generator: Option<String>,
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TimeSeriesSample>,
    pub num_timestamps: usize,
    pub num_features: usize,
    pub class_names: Vec<String>,
    pub manifest: Manifest,
}

impl Dataset {
    /// Builds a dataset after checking every sample against the schema.
    pub fn new(
        samples: Vec<TimeSeriesSample>,
        class_names: Vec<String>,
        manifest: Manifest,
    ) -> Result<Self, DataError> {
        let first = samples.first().ok_or(DataError::NoSamples)?;
        let (t, d) = (first.num_timestamps(), first.num_features());
        if t == 0 || d == 0 {
            return Err(DataError::Invalid("samples need T >= 1 and D >= 1".into()));
        }
        for s in &samples {
            if s.num_timestamps() != t || s.steps.iter().any(|x| x.len() != d) {
                return Err(DataError::Shape {
                    expected: format!("T={t}, D={d}"),
                    found: format!("sample {:?} with T={}", s.id, s.num_timestamps()),
                });
            }
            if s.label >= class_names.len() {
                return Err(DataError::Invalid(format!(
                    "sample {:?} has label {} but only {} classes",
                    s.id,
                    s.label,
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            samples,
            num_timestamps: t,
            num_features: d,
            class_names,
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Number of classes with at least one sample.
    pub fn populated_classes(&self) -> usize {
        self.class_counts().iter().filter(|&&c| c > 0).count()
    }

    /// Training operations need at least two populated classes.
    pub fn check_trainable(&self) -> Result<(), DataError> {
        if self.is_empty() {
            return Err(DataError::NoSamples);
        }
        if self.populated_classes() < 2 {
            return Err(DataError::Invalid(
                "training requires at least 2 classes with samples".into(),
            ));
        }
        Ok(())
    }

    /// Dataset restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            num_timestamps: self.num_timestamps,
            num_features: self.num_features,
            class_names: self.class_names.clone(),
            manifest: self.manifest.clone(),
        }
    }

    /// Rows of timestep-major flattened features.
    pub fn flatten(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(TimeSeriesSample::flatten).collect()
    }
}
