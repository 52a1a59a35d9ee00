//! Non-temporal reference classifiers working on fixed-length vectors: either
//! flattened raw series (timestep-major, `T x D` values) or learned features.

mod forest;
mod svm;

pub use forest::{rf_fit, rf_predict, DecisionTree, ForestConfig, ForestModel, Node};
pub use svm::{rbf_kernel, svm_fit, svm_predict, BinaryMachine, SvmConfig, SvmModel};

use thiserror::Error;

use crate::data::Dataset;
use crate::model::FeatureTable;
use crate::numerics::Vector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("no training samples")]
    Empty,
    #[error("need at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("feature length mismatch: expected {expected}, got {found}")]
    Length { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("non-finite feature in sample {0}")]
    NonFinite(usize),
    #[error("SMO did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatSample {
    pub features: Vector,
    pub label: usize,
}

/// Flattens every sample timestep-major, matching the data CSV layout.
pub fn flatten_dataset(ds: &Dataset) -> Vec<FlatSample> {
    ds.samples
        .iter()
        .map(|s| FlatSample {
            features: Vector::from_raw(s.flatten()),
            label: s.label,
        })
        .collect()
}

pub fn from_feature_table(table: &FeatureTable) -> Vec<FlatSample> {
    table
        .rows
        .iter()
        .zip(&table.labels)
        .map(|(row, &label)| FlatSample {
            features: row.clone(),
            label,
        })
        .collect()
}

/// Shared validation: non-empty, uniform length, labels in range, finite.
fn check_samples(samples: &[FlatSample], num_classes: usize) -> Result<usize, BaselineError> {
    let dim = samples.first().ok_or(BaselineError::Empty)?.features.len();
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != dim {
            return Err(BaselineError::Length {
                expected: dim,
                found: s.features.len(),
            });
        }
        if s.label >= num_classes {
            return Err(BaselineError::Label {
                label: s.label,
                classes: num_classes,
            });
        }
        if !s.features.is_finite() {
            return Err(BaselineError::NonFinite(i));
        }
    }
    Ok(dim)
}
