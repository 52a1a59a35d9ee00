//! LSTM body with a softmax head on the last hidden state, trained with
//! categorical cross-entropy.

mod io;
mod optim;
mod train;

pub use io::{
    decode_model, load_feature_table, load_model, load_normalizer, save_model, save_normalizer,
    write_feature_table, MODEL_MAGIC, MODEL_VERSION,
};
pub use optim::{rmsprop_update, DecaySchedule, RmspropState, TrainConfig};
pub use train::{batch_gradients, train, train_with_progress, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{Dataset, TimeSeriesSample};
use crate::lstm::{self, LstmError, LstmGradients, LstmParams, StepCache, TENSOR_NAMES};
use crate::numerics::{axpy, gemv_acc, gemv_t_acc, outer_acc, softmax_in_place, Matrix, Vector};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error("shape mismatch: model expects {expected}, got {found}")]
    Shape { expected: String, found: String },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("non-finite gradient in {tensor}[{index}]: {value}")]
    NonFiniteGradient {
        tensor: &'static str,
        index: usize,
        value: f64,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model file: {0}")]
    Format(String),
    #[error("model file truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("unsupported model file version {0}")]
    Version(u32),
}

/// Names of all model tensors in serialization order.
pub const MODEL_TENSOR_NAMES: [&str; 14] = [
    TENSOR_NAMES[0],
    TENSOR_NAMES[1],
    TENSOR_NAMES[2],
    TENSOR_NAMES[3],
    TENSOR_NAMES[4],
    TENSOR_NAMES[5],
    TENSOR_NAMES[6],
    TENSOR_NAMES[7],
    TENSOR_NAMES[8],
    TENSOR_NAMES[9],
    TENSOR_NAMES[10],
    TENSOR_NAMES[11],
    "W_s",
    "b_s",
];

/// Dense layer from the final hidden state to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxParams {
    /// `K x H`
    pub w: Matrix,
    pub b: Vector,
}

impl SoftmaxParams {
    pub fn zeros(num_classes: usize, hidden_dim: usize) -> Self {
        Self {
            w: Matrix::zeros(num_classes, hidden_dim),
            b: Vector::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lstm: LstmParams,
    pub head: SoftmaxParams,
    pub class_names: Vec<String>,
    /// Sequence length seen during training; 0 when unknown.
    pub timestamps_hint: usize,
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden_dim
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn tensors(&self) -> [&[f64]; 14] {
        let l = self.lstm.tensors();
        [
            l[0], l[1], l[2], l[3], l[4], l[5], l[6], l[7], l[8], l[9], l[10], l[11],
            self.head.w.as_slice(),
            self.head.b.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 14] {
        let [l0, l1, l2, l3, l4, l5, l6, l7, l8, l9, l10, l11] = self.lstm.tensors_mut();
        [
            l0,
            l1,
            l2,
            l3,
            l4,
            l5,
            l6,
            l7,
            l8,
            l9,
            l10,
            l11,
            self.head.w.as_mut_slice(),
            self.head.b.as_mut_slice(),
        ]
    }

    pub fn check_shapes(&self) -> Result<(), ModelError> {
        self.lstm.check_shapes()?;
        let (k, h) = (self.num_classes(), self.hidden_dim());
        if k < 2 {
            return Err(ModelError::Config("a model needs at least 2 classes".into()));
        }
        if self.head.w.shape() != (k, h) || self.head.b.len() != k {
            return Err(ModelError::Shape {
                expected: format!("head {k}x{h}"),
                found: format!("head {:?}, bias {}", self.head.w.shape(), self.head.b.len()),
            });
        }
        Ok(())
    }

    fn check_sample(&self, sample: &TimeSeriesSample) -> Result<(), ModelError> {
        if sample.num_features() != self.input_dim() {
            return Err(ModelError::Shape {
                expected: format!("D={}", self.input_dim()),
                found: format!("D={}", sample.num_features()),
            });
        }
        Ok(())
    }

    pub fn check_dataset(&self, ds: &Dataset) -> Result<(), ModelError> {
        if ds.num_features != self.input_dim() {
            return Err(ModelError::Shape {
                expected: format!("D={}", self.input_dim()),
                found: format!("D={}", ds.num_features),
            });
        }
        Ok(())
    }
}

/// Fresh model: LSTM per [`lstm::init_params`], Glorot-uniform head weights
/// and zero head bias.
pub fn init_model(
    input_dim: usize,
    hidden_dim: usize,
    class_names: Vec<String>,
    seed: u64,
) -> ModelParams {
    let lstm = lstm::init_params(input_dim, hidden_dim, seed);
    let k = class_names.len();
    let mut head = SoftmaxParams::zeros(k, hidden_dim);
    // Separate stream so the head does not reuse the LSTM draws.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let s = (6.0 / (k + hidden_dim) as f64).sqrt();
    for w in head.w.as_mut_slice() {
        *w = rng.random_range(-s..=s);
    }
    ModelParams {
        lstm,
        head,
        class_names,
        timestamps_hint: 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub lstm: LstmGradients,
    pub head: SoftmaxParams,
}

impl ModelGradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            lstm: LstmGradients::zeros(p.input_dim(), p.hidden_dim()),
            head: SoftmaxParams::zeros(p.num_classes(), p.hidden_dim()),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 14] {
        let l = self.lstm.tensors();
        [
            l[0], l[1], l[2], l[3], l[4], l[5], l[6], l[7], l[8], l[9], l[10], l[11],
            self.head.w.as_slice(),
            self.head.b.as_slice(),
        ]
    }

    pub fn add_assign(&mut self, other: &ModelGradients) {
        self.lstm.add_assign(&other.lstm);
        axpy(1.0, other.head.w.as_slice(), self.head.w.as_mut_slice());
        axpy(1.0, other.head.b.as_slice(), self.head.b.as_mut_slice());
    }

    pub fn scale(&mut self, s: f64) {
        self.lstm.scale(s);
        self.head.w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        self.head.b.as_mut_slice().iter_mut().for_each(|v| *v *= s);
    }

    pub fn fill_zero(&mut self) {
        self.lstm.fill_zero();
        self.head.w.as_mut_slice().fill(0.0);
        self.head.b.as_mut_slice().fill(0.0);
    }

    pub fn norm(&self) -> f64 {
        let head: f64 = self
            .head
            .w
            .as_slice()
            .iter()
            .chain(self.head.b.iter())
            .map(|v| v * v)
            .sum();
        (self.lstm.norm_sq() + head).sqrt()
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub probs: Vector,
    pub loss: f64,
    pub caches: Vec<StepCache>,
}

impl ForwardOutput {
    pub fn final_hidden(&self) -> &[f64] {
        &self.caches.last().expect("non-empty sequence").h
    }
}

fn head_probs(head: &SoftmaxParams, h: &[f64]) -> Vec<f64> {
    let mut z = head.b.as_slice().to_vec();
    gemv_acc(head.w.as_slice(), head.w.cols(), h, &mut z);
    softmax_in_place(&mut z);
    z
}

/// Class probabilities and cross-entropy loss `-ln p[label]`.
pub fn model_forward(sample: &TimeSeriesSample, p: &ModelParams) -> Result<ForwardOutput, ModelError> {
    p.check_sample(sample)?;
    if sample.label >= p.num_classes() {
        return Err(ModelError::Label {
            label: sample.label,
            classes: p.num_classes(),
        });
    }
    let (_, caches) = lstm::sequence_forward(&sample.steps, &p.lstm)?;
    let probs = head_probs(&p.head, &caches.last().expect("non-empty").h);
    // Clamped so a saturated wrong prediction stays finite.
    let loss = -probs[sample.label].max(f64::MIN_POSITIVE).ln();
    Ok(ForwardOutput {
        probs: Vector::from_raw(probs),
        loss,
        caches,
    })
}

/// `probs - onehot(label)`: gradient of the loss w.r.t. the logits.
pub fn logit_gradient(probs: &[f64], label: usize) -> Vec<f64> {
    let mut d = probs.to_vec();
    d[label] -= 1.0;
    d
}

pub(crate) fn backward_into(
    out: &ForwardOutput,
    p: &ModelParams,
    label: usize,
    grads: &mut ModelGradients,
) {
    let dz = logit_gradient(out.probs.as_slice(), label);
    let h = out.final_hidden();
    let hd = p.hidden_dim();
    outer_acc(grads.head.w.as_mut_slice(), hd, &dz, h);
    axpy(1.0, &dz, grads.head.b.as_mut_slice());
    let mut dh = vec![0.0; hd];
    gemv_t_acc(p.head.w.as_slice(), hd, &dz, &mut dh);
    lstm::backward_into(&out.caches, &p.lstm, &dh, &mut grads.lstm, false);
}

/// Exact gradient of the cross-entropy loss for one sample.
pub fn model_backward(
    out: &ForwardOutput,
    p: &ModelParams,
    label: usize,
) -> Result<ModelGradients, ModelError> {
    p.check_shapes()?;
    if label >= p.num_classes() {
        return Err(ModelError::Label {
            label,
            classes: p.num_classes(),
        });
    }
    if out.probs.len() != p.num_classes()
        || out.caches.is_empty()
        || out.caches.iter().any(|c| c.h.len() != p.hidden_dim() || c.x.len() != p.input_dim())
    {
        return Err(ModelError::Shape {
            expected: format!(
                "caches for D={}, H={}, K={}",
                p.input_dim(),
                p.hidden_dim(),
                p.num_classes()
            ),
            found: format!("{} probs, {} steps", out.probs.len(), out.caches.len()),
        });
    }
    let mut grads = ModelGradients::zeros_like(p);
    backward_into(out, p, label, &mut grads);
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vector,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn predict_one(sample: &TimeSeriesSample, p: &ModelParams) -> Result<Prediction, ModelError> {
    let (state, _) = lstm::sequence_forward(&sample.steps, &p.lstm)?;
    let probs = head_probs(&p.head, state.h.as_slice());
    Ok(Prediction {
        class: argmax(&probs),
        probs: Vector::from_raw(probs),
    })
}

pub fn predict(ds: &Dataset, p: &ModelParams) -> Result<Vec<Prediction>, ModelError> {
    p.check_dataset(ds)?;
    ds.samples.par_iter().map(|s| predict_one(s, p)).collect()
}

/// Final hidden states as a fixed-length representation of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub rows: Vec<Vector>,
    pub class_names: Vec<String>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vector::len)
    }
}

pub fn extract_features(ds: &Dataset, p: &ModelParams) -> Result<FeatureTable, ModelError> {
    p.check_dataset(ds)?;
    let rows = ds
        .samples
        .par_iter()
        .map(|s| lstm::sequence_forward(&s.steps, &p.lstm).map(|(state, _)| state.h))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureTable {
        ids: ds.samples.iter().map(|s| s.id.clone()).collect(),
        labels: ds.labels(),
        rows,
        class_names: ds.class_names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Manifest;

    fn sample(steps: &[&[f64]], label: usize) -> TimeSeriesSample {
        TimeSeriesSample {
            id: "x".into(),
            label,
            steps: steps.iter().map(|s| Vector::new(s.to_vec()).unwrap()).collect(),
        }
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    fn uniform_head_model(d: usize, h: usize, k: usize) -> ModelParams {
        let mut p = init_model(d, h, names(k), 1);
        p.head = SoftmaxParams::zeros(k, h);
        p
    }

    #[test]
    fn uniform_head_gives_ln_k_loss() {
        let p = uniform_head_model(2, 3, 4);
        let out = model_forward(&sample(&[&[1.0, 2.0], &[0.5, -1.0]], 2), &p).unwrap();
        assert!(out.probs.iter().all(|&q| (q - 0.25).abs() < 1e-15));
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);
        assert!((out.loss - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn saturated_logit_gives_zero_loss() {
        let mut p = uniform_head_model(2, 3, 3);
        p.head.b.as_mut_slice()[0] = 30.0;
        let out = model_forward(&sample(&[&[1.0, 2.0]], 0), &p).unwrap();
        assert!((out.probs[0] - 1.0).abs() < 1e-12);
        assert!(out.loss >= 0.0 && out.loss < 1e-12);
    }

    #[test]
    fn logit_gradient_example() {
        assert_eq!(logit_gradient(&[0.25; 4], 2), vec![0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let p = init_model(2, 3, names(3), 4);
        let mut out = model_forward(&sample(&[&[1.0, 2.0], &[0.1, 0.2]], 1), &p).unwrap();
        out.probs = Vector::new(vec![0.0, 1.0, 0.0]).unwrap();
        let g = model_backward(&out, &p, 1).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let p = init_model(2, 3, names(3), 4);
        assert!(matches!(
            model_forward(&sample(&[&[1.0, 2.0, 3.0]], 0), &p),
            Err(ModelError::Shape { .. })
        ));
        assert!(matches!(
            model_forward(&sample(&[&[1.0, 2.0]], 3), &p),
            Err(ModelError::Label { label: 3, classes: 3 })
        ));
        let out = model_forward(&sample(&[&[1.0, 2.0]], 0), &p).unwrap();
        let other = init_model(2, 4, names(3), 4);
        assert!(model_backward(&out, &other, 0).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    fn tiny_dataset() -> Dataset {
        let samples = (0..6)
            .map(|i| TimeSeriesSample {
                id: format!("s{i}"),
                label: i % 2,
                steps: (0..3)
                    .map(|t| Vector::new(vec![(i + t) as f64 * 0.1, -(i as f64) * 0.2]).unwrap())
                    .collect(),
            })
            .collect();
        let manifest = Manifest {
            num_timestamps: 3,
            num_features: 2,
            class_names: names(2),
            seed: None,
            generator: None,
            source: None,
        };
        Dataset::new(samples, names(2), manifest).unwrap()
    }

    #[test]
    fn uniform_model_predicts_class_zero() {
        let p = uniform_head_model(2, 3, 2);
        let preds = predict(&tiny_dataset(), &p).unwrap();
        assert!(preds.iter().all(|q| q.class == 0));
    }

    #[test]
    fn predictions_do_not_depend_on_order() {
        let ds = tiny_dataset();
        let p = init_model(2, 5, names(2), 8);
        let forward = predict(&ds, &p).unwrap();
        let rev: Vec<usize> = (0..ds.len()).rev().collect();
        let backward = predict(&ds.subset(&rev), &p).unwrap();
        for (i, q) in backward.iter().enumerate() {
            assert_eq!(q, &forward[ds.len() - 1 - i]);
        }
    }

    #[test]
    fn features_are_final_hidden_states() {
        let ds = tiny_dataset();
        let p = init_model(2, 5, names(2), 8);
        let table = extract_features(&ds, &p).unwrap();
        assert_eq!(table.dim(), 5);
        for (row, s) in table.rows.iter().zip(&ds.samples) {
            let (state, _) = lstm::sequence_forward(&s.steps, &p.lstm).unwrap();
            assert_eq!(row, &state.h);
            assert!(row.iter().all(|v| v.abs() < 1.0));
        }
        let p512 = init_model(2, 512, names(2), 8);
        assert_eq!(extract_features(&ds, &p512).unwrap().dim(), 512);
    }

    #[test]
    fn probabilities_normalized_for_huge_inputs() {
        let p = init_model(2, 4, names(5), 3);
        for scale in [1.0, 1e2, 1e4, -1e4] {
            let out = model_forward(&sample(&[&[scale, -scale], &[scale, scale]], 0), &p).unwrap();
            let total: f64 = out.probs.iter().sum();
            assert!((total - 1.0).abs() <= 1e-9);
            assert!(out.loss.is_finite());
        }
    }
}
