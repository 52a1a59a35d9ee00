use std::fmt;
use std::str::FromStr;

use super::report::{FoldSummary, MeanStd};
use super::{
    confusion_matrix, metrics_from_confusion, stratified_kfold, ConfusionMatrix, EvalError,
    FoldAssignment, MetricsReport,
};
use crate::baselines::{
    flatten_dataset, from_feature_table, rf_fit, rf_predict, svm_fit, svm_predict, FlatSample,
    ForestConfig, ForestModel, SvmConfig, SvmModel,
};
use crate::data::{apply_normalizer, fit_normalizer, Dataset, Normalizer};
use crate::model::{extract_features, predict, train_with_progress, ModelParams, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Lstm,
    RfRaw,
    SvmRaw,
    RfLstm,
    SvmLstm,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Lstm,
        Method::RfRaw,
        Method::SvmRaw,
        Method::RfLstm,
        Method::SvmLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lstm => "lstm",
            Method::RfRaw => "rf_raw",
            Method::SvmRaw => "svm_raw",
            Method::RfLstm => "rf_lstm",
            Method::SvmLstm => "svm_lstm",
        }
    }

    pub fn uses_lstm(self) -> bool {
        matches!(self, Method::Lstm | Method::RfLstm | Method::SvmLstm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| EvalError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub svm: SvmConfig,
    pub k: usize,
    /// Drives fold assignment; model seeds live in the component configs.
    pub seed: u64,
    /// Z-score every (timestep, feature) with statistics of the train split.
    pub normalize: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            forest: ForestConfig::default(),
            svm: SvmConfig::default(),
            k: 5,
            seed: 0,
            normalize: true,
        }
    }
}

impl CvConfig {
    /// Every setting as `(key, value)`, in a fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let t = &self.train;
        let out = vec![
            ("k", self.k.to_string()),
            ("seed", self.seed.to_string()),
            ("normalize", self.normalize.to_string()),
            ("lstm.hidden_dim", t.hidden_dim.to_string()),
            ("lstm.learning_rate", t.learning_rate.to_string()),
            ("lstm.lr_decay", t.lr_decay.to_string()),
            ("lstm.decay_schedule", format!("{:?}", t.decay_schedule)),
            ("lstm.epochs", t.epochs.to_string()),
            ("lstm.batch_size", t.batch_size.to_string()),
            ("lstm.rmsprop_rho", t.rmsprop_rho.to_string()),
            ("lstm.rmsprop_epsilon", t.rmsprop_epsilon.to_string()),
            ("lstm.seed", t.seed.to_string()),
            (
                "lstm.grad_clip_norm",
                t.grad_clip_norm.map_or("none".into(), |v| v.to_string()),
            ),
            ("rf.num_trees", self.forest.num_trees.to_string()),
            ("rf.max_depth", self.forest.max_depth.to_string()),
            ("rf.seed", self.forest.seed.to_string()),
            ("svm.c", self.svm.c.to_string()),
            ("svm.gamma", self.svm.gamma.to_string()),
            ("svm.tol", self.svm.tol.to_string()),
            ("svm.max_iter", self.svm.max_iter.to_string()),
        ];
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Events reported while cross-validation runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Progress {
    Epoch { fold: usize, epoch: usize, loss: f64 },
    FoldDone { fold: usize, method: Method, accuracy: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedBaseline {
    Forest(ForestModel),
    Svm(SvmModel),
}

/// Everything one fold produced: the artifacts fitted on its train split and
/// the predictions each method made on its test split.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub normalizer: Option<Normalizer>,
    pub lstm: Option<ModelParams>,
    pub baselines: Vec<(Method, TrainedBaseline)>,
    pub truth: Vec<usize>,
    pub predictions: Vec<(Method, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub method: Method,
    pub folds: Vec<FoldResult>,
    pub pooled_confusion: ConfusionMatrix,
    pub pooled: MetricsReport,
    pub fold_summary: FoldSummary,
}

fn fit_baseline(
    method: Method,
    train: &[FlatSample],
    test: &[FlatSample],
    num_classes: usize,
    cfg: &CvConfig,
) -> Result<(TrainedBaseline, Vec<usize>), EvalError> {
    let forest = matches!(method, Method::RfRaw | Method::RfLstm);
    if forest {
        let m = rf_fit(train, num_classes, &cfg.forest)?;
        let pred = test
            .iter()
            .map(|s| rf_predict(&m, &s.features).map(|(c, _)| c))
            .collect::<Result<_, _>>()?;
        Ok((TrainedBaseline::Forest(m), pred))
    } else {
        let m = svm_fit(train, num_classes, &cfg.svm)?;
        let pred = test
            .iter()
            .map(|s| svm_predict(&m, &s.features).map(|(c, _)| c))
            .collect::<Result<_, _>>()?;
        Ok((TrainedBaseline::Svm(m), pred))
    }
}

/// Fits every requested method on the train split of `fold` and predicts its
/// test split. Nothing fitted here reads test labels or test features.
pub fn run_fold(
    ds: &Dataset,
    folds: &FoldAssignment,
    fold: usize,
    methods: &[Method],
    cfg: &CvConfig,
    progress: &mut dyn FnMut(Progress),
) -> Result<FoldOutcome, EvalError> {
    let mut train = ds.subset(&folds.train_indices(fold));
    let mut test = ds.subset(folds.test_indices(fold));
    let normalizer = if cfg.normalize {
        let n = fit_normalizer(&train)?;
        train = apply_normalizer(&n, &train)?;
        test = apply_normalizer(&n, &test)?;
        Some(n)
    } else {
        None
    };
    let k = ds.num_classes();
    let lstm = if methods.iter().any(|m| m.uses_lstm()) {
        let out = train_with_progress(&train, &cfg.train, |epoch, loss| {
            progress(Progress::Epoch { fold, epoch, loss })
        })?;
        Some(out.params)
    } else {
        None
    };
    let raw = if methods.iter().any(|m| matches!(m, Method::RfRaw | Method::SvmRaw)) {
        Some((flatten_dataset(&train), flatten_dataset(&test)))
    } else {
        None
    };
    let learned = match &lstm {
        Some(p) if methods.iter().any(|m| matches!(m, Method::RfLstm | Method::SvmLstm)) => Some((
            from_feature_table(&extract_features(&train, p)?),
            from_feature_table(&extract_features(&test, p)?),
        )),
        _ => None,
    };

    let mut baselines = Vec::new();
    let mut predictions = Vec::new();
    for &method in methods {
        let pred = match method {
            Method::Lstm => {
                let p = lstm.as_ref().expect("trained above");
                predict(&test, p)?.into_iter().map(|p| p.class).collect()
            }
            Method::RfRaw | Method::SvmRaw => {
                let (tr, te) = raw.as_ref().expect("flattened above");
                let (model, pred) = fit_baseline(method, tr, te, k, cfg)?;
                baselines.push((method, model));
                pred
            }
            Method::RfLstm | Method::SvmLstm => {
                let (tr, te) = learned.as_ref().expect("extracted above");
                let (model, pred) = fit_baseline(method, tr, te, k, cfg)?;
                baselines.push((method, model));
                pred
            }
        };
        predictions.push((method, pred));
    }
    Ok(FoldOutcome {
        fold,
        normalizer,
        lstm,
        baselines,
        truth: test.labels(),
        predictions,
    })
}

fn summarize(method: Method, folds: Vec<FoldResult>, k: usize) -> Result<CvResult, EvalError> {
    let mut pooled_confusion = ConfusionMatrix::zeros(k);
    for f in &folds {
        pooled_confusion.add(&f.confusion);
    }
    let pooled = metrics_from_confusion(&pooled_confusion)?;
    let stat = |get: fn(&MetricsReport) -> f64| {
        MeanStd::of(&folds.iter().map(|f| get(&f.report)).collect::<Vec<_>>())
    };
    let fold_summary = FoldSummary {
        accuracy: stat(|r| r.accuracy),
        kappa: stat(|r| r.kappa),
        macro_f: stat(|r| r.macro_f),
        weighted_f: stat(|r| r.weighted_f),
    };
    Ok(CvResult {
        method,
        folds,
        pooled_confusion,
        pooled,
        fold_summary,
    })
}

/// Cross-validates several methods on the same folds. The LSTM is trained
/// once per fold and shared by every method that needs it.
pub fn compare_methods(
    ds: &Dataset,
    methods: &[Method],
    cfg: &CvConfig,
    progress: &mut dyn FnMut(Progress),
) -> Result<Vec<CvResult>, EvalError> {
    ds.check_trainable()?;
    let folds = stratified_kfold(&ds.labels(), cfg.k, cfg.seed)?;
    let mut per_method: Vec<Vec<FoldResult>> = vec![Vec::new(); methods.len()];
    for fold in 0..folds.k() {
        let wrap = |e: EvalError| EvalError::Fold {
            fold,
            source: Box::new(e),
        };
        let out = run_fold(ds, &folds, fold, methods, cfg, progress).map_err(wrap)?;
        for (slot, (method, pred)) in per_method.iter_mut().zip(&out.predictions) {
            let confusion = confusion_matrix(&out.truth, pred, ds.num_classes()).map_err(wrap)?;
            let report = metrics_from_confusion(&confusion).map_err(wrap)?;
            progress(Progress::FoldDone {
                fold,
                method: *method,
                accuracy: report.accuracy,
            });
            slot.push(FoldResult {
                fold,
                confusion,
                report,
            });
        }
    }
    methods
        .iter()
        .zip(per_method)
        .map(|(&m, folds)| summarize(m, folds, ds.num_classes()))
        .collect()
}

pub fn run_cross_validation(
    ds: &Dataset,
    method: Method,
    cfg: &CvConfig,
) -> Result<CvResult, EvalError> {
    let mut results = compare_methods(ds, &[method], cfg, &mut |_| {})?;
    Ok(results.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, ClassSizes, SyntheticConfig};
    use crate::model::save_model;

    fn small() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            num_classes: 3,
            samples_per_class: ClassSizes::Uniform(10),
            num_timestamps: 5,
            num_features: 2,
            motif_jitter: 1,
            noise_sigma: 0.2,
            seed: 4,
        })
        .unwrap()
    }

    fn quick() -> CvConfig {
        CvConfig {
            train: TrainConfig {
                hidden_dim: 4,
                epochs: 3,
                batch_size: 8,
                ..TrainConfig::default()
            },
            forest: ForestConfig {
                num_trees: 10,
                ..ForestConfig::default()
            },
            k: 3,
            seed: 2,
            ..CvConfig::default()
        }
    }

    #[test]
    fn every_sample_tested_once_for_every_method() {
        let ds = small();
        let results = compare_methods(&ds, &Method::ALL, &quick(), &mut |_| {}).unwrap();
        assert_eq!(results.len(), 5);
        for r in &results {
            assert_eq!(r.pooled_confusion.total(), ds.len() as u64);
            assert_eq!(r.folds.len(), 3);
            for c in 0..3 {
                assert_eq!(r.pooled_confusion.row_sum(c), 10);
            }
        }
    }

    #[test]
    fn shared_lstm_matches_individual_runs() {
        let ds = small();
        let cfg = quick();
        let together = compare_methods(&ds, &[Method::Lstm, Method::RfLstm], &cfg, &mut |_| {}).unwrap();
        assert_eq!(together[0], run_cross_validation(&ds, Method::Lstm, &cfg).unwrap());
        assert_eq!(together[1], run_cross_validation(&ds, Method::RfLstm, &cfg).unwrap());
    }

    #[test]
    fn deterministic_reports() {
        let ds = small();
        let a = run_cross_validation(&ds, Method::Lstm, &quick()).unwrap();
        let b = run_cross_validation(&ds, Method::Lstm, &quick()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scrambled_test_labels_do_not_touch_training() {
        let ds = small();
        let cfg = quick();
        let folds = stratified_kfold(&ds.labels(), cfg.k, cfg.seed).unwrap();
        let mut scrambled = ds.clone();
        for &i in folds.test_indices(0) {
            let s = &mut scrambled.samples[i];
            s.label = (s.label + 1) % 3;
        }
        let a = run_fold(&ds, &folds, 0, &Method::ALL, &cfg, &mut |_| {}).unwrap();
        let b = run_fold(&scrambled, &folds, 0, &Method::ALL, &cfg, &mut |_| {}).unwrap();
        assert_eq!(a.normalizer, b.normalizer);
        assert_eq!(a.baselines, b.baselines);
        assert_eq!(a.predictions, b.predictions);
        assert_ne!(a.truth, b.truth);
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        save_model(a.lstm.as_ref().unwrap(), &pa).unwrap();
        save_model(b.lstm.as_ref().unwrap(), &pb).unwrap();
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    }

    #[test]
    fn fold_failures_name_the_fold() {
        let ds = small();
        let cfg = CvConfig {
            svm: SvmConfig {
                max_iter: 1,
                ..SvmConfig::default()
            },
            ..quick()
        };
        let err = run_cross_validation(&ds, Method::SvmRaw, &cfg).unwrap_err();
        assert!(matches!(err, EvalError::Fold { fold: 0, .. }), "{err}");
        assert!(err.to_string().starts_with("fold 0:"));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("knn".parse::<Method>().is_err());
    }
}
