//! Stratified k-fold cross-validation, confusion matrices and the usual
//! land-cover metrics: overall accuracy, Cohen's kappa and per-class,
//! macro- and support-weighted F-measure.

mod crossval;
mod report;

pub use crossval::{
    compare_methods, run_cross_validation, run_fold, CvConfig, CvResult, FoldOutcome, FoldResult,
    Method, Progress, TrainedBaseline,
};
pub use report::{render_key_values, render_text, FoldSummary, MeanStd};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::baselines::BaselineError;
use crate::data::DataError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k must be >= 2, got {0}")]
    FoldCount(usize),
    #[error("k = {k} exceeds the number of samples ({n})")]
    TooManyFolds { k: usize, n: usize },
    #[error("length mismatch: {truth} truth labels vs {predicted} predictions")]
    Length { truth: usize, predicted: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("unknown method '{0}' (expected lstm, rf_raw, svm_raw, rf_lstm or svm_lstm)")]
    UnknownMethod(String),
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<EvalError>,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    /// Sample indices of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Shuffles each class with a seeded generator and deals its members
/// round-robin into folds. The dealing position carries over from one class
/// to the next, which keeps fold sizes within one of each other.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldAssignment, EvalError> {
    if k < 2 {
        return Err(EvalError::FoldCount(k));
    }
    if k > labels.len() {
        return Err(EvalError::TooManyFolds { k, n: labels.len() });
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldAssignment { folds })
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, EvalError> {
        let k = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(EvalError::Length {
                truth: k,
                predicted: bad.len(),
            });
        }
        Ok(Self {
            num_classes: k,
            counts: rows.concat(),
        })
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.num_classes..(truth + 1) * self.num_classes]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.num_classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|k| self.get(k, k)).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes, other.num_classes, "confusion matrix size");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

pub fn confusion_matrix(
    truth: &[usize],
    predicted: &[usize],
    num_classes: usize,
) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::Length {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= num_classes {
                return Err(EvalError::Label {
                    label,
                    classes: num_classes,
                });
            }
        }
        cm.counts[t * num_classes + p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub kappa: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f: f64,
    pub weighted_f: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Classes with no support or no predictions score F = 0 and still count in
/// the macro average. When chance agreement is 1 the kappa denominator
/// vanishes; kappa is then 1 for perfect agreement and 0 otherwise.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 || cm.num_classes == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let n = total as f64;
    let p_o = cm.trace() as f64 / n;
    let p_e: f64 = (0..cm.num_classes)
        .map(|k| cm.row_sum(k) as f64 * cm.col_sum(k) as f64)
        .sum::<f64>()
        / (n * n);
    let kappa = if 1.0 - p_e == 0.0 {
        if p_o == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes)
        .map(|k| {
            let precision = ratio(cm.get(k, k), cm.col_sum(k));
            let recall = ratio(cm.get(k, k), cm.row_sum(k));
            let f_measure = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f_measure,
                support: cm.row_sum(k),
            }
        })
        .collect();
    let macro_f = per_class.iter().map(|c| c.f_measure).sum::<f64>() / cm.num_classes as f64;
    let weighted_f = per_class
        .iter()
        .map(|c| c.f_measure * c.support as f64)
        .sum::<f64>()
        / n;
    Ok(MetricsReport {
        accuracy: p_o,
        kappa,
        per_class,
        macro_f,
        weighted_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn anchors() {
        let perfect = metrics_from_confusion(&cm(&[&[50, 0], &[0, 50]])).unwrap();
        assert_eq!((perfect.accuracy, perfect.kappa), (1.0, 1.0));
        assert!(perfect.per_class.iter().all(|c| c.f_measure == 1.0));

        let chance = metrics_from_confusion(&cm(&[&[25, 25], &[25, 25]])).unwrap();
        assert_eq!((chance.accuracy, chance.kappa), (0.5, 0.0));

        let m = metrics_from_confusion(&cm(&[&[45, 5], &[10, 40]])).unwrap();
        assert!((m.accuracy - 0.85).abs() < 1e-15);
        assert!((m.kappa - 0.70).abs() < 1e-12);
        let (p, r) = (45.0 / 55.0, 45.0 / 50.0);
        assert!((m.per_class[0].f_measure - 2.0 * p * r / (p + r)).abs() < 1e-15);
        assert!((m.per_class[0].f_measure - 0.857142857).abs() < 1e-6);
    }

    #[test]
    fn degenerate_kappa() {
        // All samples one class, all correct: chance agreement is 1.
        let m = metrics_from_confusion(&cm(&[&[10, 0], &[0, 0]])).unwrap();
        assert_eq!(m.kappa, 1.0);
        assert_eq!(m.per_class[1].f_measure, 0.0);
        assert_eq!(m.macro_f, 0.5);
        assert_eq!(m.weighted_f, 1.0);
        assert!(matches!(
            metrics_from_confusion(&ConfusionMatrix::zeros(3)),
            Err(EvalError::EmptyMatrix)
        ));
    }

    #[test]
    fn confusion_examples() {
        let c = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(c, cm(&[&[1, 1], &[0, 2]]));
        let d = confusion_matrix(&[2, 0, 1], &[2, 0, 1], 3).unwrap();
        assert_eq!(d, cm(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]]));
        assert_eq!(confusion_matrix(&[], &[], 2).unwrap(), ConfusionMatrix::zeros(2));
        assert!(matches!(confusion_matrix(&[0], &[], 2), Err(EvalError::Length { .. })));
        assert!(matches!(confusion_matrix(&[0], &[2], 2), Err(EvalError::Label { label: 2, .. })));
    }

    #[test]
    fn kfold_examples() {
        let labels = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let f = stratified_kfold(&labels, 5, 3).unwrap();
        for fold in &f.folds {
            let ones = fold.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!((fold.len(), ones), (2, 1));
        }
        assert_eq!(f, stratified_kfold(&labels, 5, 3).unwrap());

        let mut labels = vec![0; 20];
        labels.extend([1, 1, 1]);
        let f = stratified_kfold(&labels, 5, 1).unwrap();
        let with_rare = f.folds.iter().filter(|fold| fold.iter().any(|&i| labels[i] == 1)).count();
        assert_eq!(with_rare, 3);

        assert!(matches!(stratified_kfold(&labels, 1, 0), Err(EvalError::FoldCount(1))));
        assert!(matches!(stratified_kfold(&[0, 1], 3, 0), Err(EvalError::TooManyFolds { .. })));
    }

    #[test]
    fn train_and_test_split_complement() {
        let labels: Vec<usize> = (0..37).map(|i| i % 4).collect();
        let f = stratified_kfold(&labels, 5, 9).unwrap();
        for k in 0..5 {
            let mut all = f.train_indices(k);
            all.extend_from_slice(f.test_indices(k));
            all.sort_unstable();
            assert_eq!(all, (0..37).collect::<Vec<_>>());
        }
    }

    proptest! {
        #[test]
        fn folds_partition_and_balance(
            labels in proptest::collection::vec(0usize..6, 10..120),
            k in 2usize..8,
            seed in any::<u64>(),
        ) {
            prop_assume!(k <= labels.len());
            let f = stratified_kfold(&labels, k, seed).unwrap();
            let mut all: Vec<usize> = f.folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
            for class in 0..6 {
                let counts: Vec<usize> = f.folds.iter()
                    .map(|fold| fold.iter().filter(|&&i| labels[i] == class).count())
                    .collect();
                prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            }
            let sizes: Vec<usize> = f.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn metrics_in_range_and_permutation_invariant(k in 2usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..200);
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let m = metrics_from_confusion(&confusion_matrix(&truth, &pred, k).unwrap()).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.accuracy));
            prop_assert!((-1.0..=1.0).contains(&m.kappa));
            for c in &m.per_class {
                for v in [c.precision, c.recall, c.f_measure] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut rng);
            let t2: Vec<usize> = truth.iter().map(|&t| perm[t]).collect();
            let p2: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
            let m2 = metrics_from_confusion(&confusion_matrix(&t2, &p2, k).unwrap()).unwrap();
            prop_assert!((m.accuracy - m2.accuracy).abs() < 1e-12);
            prop_assert!((m.kappa - m2.kappa).abs() < 1e-12);
            prop_assert!((m.macro_f - m2.macro_f).abs() < 1e-12);
        }

        #[test]
        fn kappa_one_iff_diagonal(k in 2usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<usize> = (0..50).map(|_| rng.random_range(0..k)).collect();
            let mut pred = truth.clone();
            if rng.random_bool(0.5) {
                pred[0] = (pred[0] + 1) % k;
            }
            let c = confusion_matrix(&truth, &pred, k).unwrap();
            let m = metrics_from_confusion(&c).unwrap();
            let diagonal = c.trace() == c.total();
            let p_e: f64 = (0..k).map(|j| (c.row_sum(j) * c.col_sum(j)) as f64).sum::<f64>() / 2500.0;
            prop_assume!(p_e < 1.0);
            prop_assert_eq!(m.kappa == 1.0, diagonal);
        }
    }
}
