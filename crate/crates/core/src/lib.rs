//! LSTM-based classification of labelled multi-temporal data (satellite
//! image time series), with random forest and RBF SVM baselines, learned
//! feature extraction and stratified cross-validation.

pub mod data;
pub mod lstm;
pub mod numerics;
pub mod model;
pub mod baselines;
pub mod eval;
pub mod cli;
