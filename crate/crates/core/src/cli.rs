//! `sits` command line: synthesize data, train, predict, extract features and
//! cross-validate. Every command writes a run manifest with the resolved
//! configuration and SHA-256 checksums of its inputs and outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::{BaselineError, ForestConfig, SvmConfig};
use crate::data::{
    apply_normalizer, fit_normalizer, generate_synthetic, load_dataset, save_dataset, DataError,
    Dataset, Normalizer, Preset,
};
use crate::eval::{compare_methods, render_key_values, render_text, CvConfig, EvalError, Method, Progress};
use crate::model::{
    extract_features, load_model, load_normalizer, predict, save_model, save_normalizer,
    train_with_progress, write_feature_table, DecaySchedule, ModelError, TrainConfig,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("baselines: {0}")]
    Baseline(#[from] BaselineError),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parsed command line. Defaults marked "reference setting" reproduce the
/// published experimental configuration.
#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "sits", version, about = "LSTM classification of satellite image time series")]
pub struct RunSpec {
    /// Worker threads (1 = fully serial); defaults to all cores
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark dataset
    Synth(SynthArgs),
    /// Train an LSTM classifier
    Train(TrainArgs),
    /// Predict classes with a trained model
    Predict(PredictArgs),
    /// Write final LSTM hidden states as a feature table
    ExtractFeatures(ExtractArgs),
    /// Cross-validate one or more methods
    Crossval(CrossvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    /// 11 imbalanced classes, T=3, D=10
    ThauLike,
    /// 9 balanced classes, T=23, D=10
    ReunionLike,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::ThauLike => Preset::ThauLike,
            PresetArg::ReunionLike => Preset::ReunionLike,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct DataArgs {
    /// Data CSV: id,label,features (timestep-major)
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset manifest (T, D, classes)
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct LstmArgs {
    /// LSTM hidden units [reference setting: 512]
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(1..))]
    pub hidden: u64,
    /// RMSprop learning rate [reference setting: 5e-4]
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    /// Inverse-time learning-rate decay [reference setting: 5e-5]
    #[arg(long, default_value_t = 5e-5)]
    pub decay: f64,
    /// Apply the decay once per epoch instead of once per update
    #[arg(long)]
    pub decay_per_epoch: bool,
    /// Training epochs [reference setting: 200]
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub epochs: u64,
    /// Mini-batch size [reference setting: 20]
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    /// RMSprop moving-average factor
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    /// RMSprop stabilizer
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    /// Clip the batch gradient to this global L2 norm
    #[arg(long)]
    pub clip: Option<f64>,
}

impl LstmArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_dim: self.hidden as usize,
            learning_rate: self.lr,
            lr_decay: self.decay,
            decay_schedule: if self.decay_per_epoch {
                DecaySchedule::PerEpoch
            } else {
                DecaySchedule::PerUpdate
            },
            epochs: self.epochs as usize,
            batch_size: self.batch as usize,
            rmsprop_rho: self.rho,
            rmsprop_epsilon: self.epsilon,
            seed,
            grad_clip_norm: self.clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub lstm: LstmArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip z-score normalization
    #[arg(long)]
    pub no_normalize: bool,
    /// Model file to write; the normalizer goes to `<model>.norm`
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ModelInput {
    /// Trained model file
    #[arg(long)]
    pub model: PathBuf,
    /// Normalizer file (default: `<model>.norm` when present)
    #[arg(long)]
    pub normalizer: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelInput,
    #[command(flatten)]
    pub data: DataArgs,
    /// Predictions CSV
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub model: ModelInput,
    #[command(flatten)]
    pub data: DataArgs,
    /// Feature table CSV
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated methods: lstm, rf_raw, svm_raw, rf_lstm, svm_lstm, or all
    #[arg(long, value_delimiter = ',', value_parser = parse_method_list, default_value = "all")]
    pub method: Vec<MethodArg>,
    #[command(flatten)]
    pub lstm: LstmArgs,
    /// Random forest size [reference setting: 400]
    #[arg(long, default_value_t = 400, value_parser = clap::value_parser!(u64).range(1..))]
    pub trees: u64,
    /// Random forest maximum depth [reference setting: 10]
    #[arg(long, default_value_t = 10)]
    pub depth: u64,
    /// SVM box constraint C [reference setting: 100]
    #[arg(long = "svm-c", default_value_t = 100.0)]
    pub svm_c: f64,
    /// RBF kernel gamma [reference setting: 0.01]
    #[arg(long, default_value_t = 0.01)]
    pub gamma: f64,
    /// Cross-validation folds [reference setting: 5]
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(2..))]
    pub k: u64,
    /// Seeds fold assignment, LSTM initialization, shuffling and the forest
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip z-score normalization
    #[arg(long)]
    pub no_normalize: bool,
    /// Output directory for the reports
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodArg {
    All,
    One(Method),
}

fn parse_method_list(s: &str) -> Result<MethodArg, String> {
    if s == "all" {
        return Ok(MethodArg::All);
    }
    s.parse::<Method>().map(MethodArg::One).map_err(|e| e.to_string())
}

impl CrossvalArgs {
    pub fn methods(&self) -> Vec<Method> {
        let mut out = Vec::new();
        for arg in &self.method {
            let picked = match arg {
                MethodArg::All => Method::ALL.to_vec(),
                MethodArg::One(m) => vec![*m],
            };
            for m in picked {
                if !out.contains(&m) {
                    out.push(m);
                }
            }
        }
        out
    }

    pub fn config(&self) -> CvConfig {
        CvConfig {
            train: self.lstm.config(self.seed),
            forest: ForestConfig {
                num_trees: self.trees as usize,
                max_depth: self.depth as usize,
                seed: self.seed,
            },
            svm: SvmConfig {
                c: self.svm_c,
                gamma: self.gamma,
                ..SvmConfig::default()
            },
            k: self.k as usize,
            seed: self.seed,
            normalize: !self.no_normalize,
        }
    }
}

pub fn parse_run_spec<I, T>(argv: I) -> Result<RunSpec, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    RunSpec::try_parse_from(argv)
}

/// Parses `argv`, executes and returns the process exit code: 0 on success,
/// 1 on runtime failure, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let spec = match parse_run_spec(argv) {
        Ok(spec) => spec,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&spec) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(spec: &RunSpec) -> Result<(), CliError> {
    match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?
            .install(|| dispatch(&spec.command)),
        None => dispatch(&spec.command),
    }
}

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict_cmd(a),
        Command::ExtractFeatures(a) => extract(a),
        Command::Crossval(a) => crossval(a),
    }
}

/// Key/value run record. Artifacts are listed by file name so that runs into
/// different directories produce identical manifests.
struct RunManifest {
    text: String,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        let mut text = String::from("version=1\n");
        let _ = writeln!(text, "command={command}");
        let _ = writeln!(text, "tool={} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
        Self { text }
    }

    fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.text, "{key}={value}");
    }

    fn input(&mut self, key: &str, path: &Path) -> Result<(), CliError> {
        self.set(&format!("input.{key}"), path.display());
        self.set(&format!("input.{key}.sha256"), sha256_file(path)?);
        Ok(())
    }

    fn artifact(&mut self, path: &Path) -> Result<(), CliError> {
        let name = path.file_name().map_or_else(
            || path.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        self.set(&format!("artifact.{name}.sha256"), sha256_file(path)?);
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, &self.text).map_err(io_err(path))
    }
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn echo_train(m: &mut RunManifest, cfg: &TrainConfig, normalize: bool) {
    let cv = CvConfig {
        train: cfg.clone(),
        normalize,
        ..CvConfig::default()
    };
    for (k, v) in cv.echo() {
        if k.starts_with("lstm.") || k == "normalize" {
            m.set(&format!("config.{k}"), v);
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let preset: Preset = a.preset.into();
    let cfg = preset.config(a.seed);
    let ds = generate_synthetic(&cfg)?;
    create_dir(&a.output)?;
    let data = a.output.join(format!("{}.csv", preset.name()));
    let manifest = a.output.join(format!("{}.manifest", preset.name()));
    save_dataset(&ds, &data, &manifest)?;
    let mut run = RunManifest::new("synth");
    run.set("seed", a.seed);
    run.set("config.preset", preset.name());
    run.set("config.generator", cfg.describe());
    run.artifact(&data)?;
    run.artifact(&manifest)?;
    run.write(&a.output.join("run.manifest"))?;
    eprintln!("wrote {} samples to {}", ds.len(), data.display());
    Ok(())
}

fn load(d: &DataArgs) -> Result<Dataset, CliError> {
    Ok(load_dataset(&d.data, &d.manifest)?)
}

fn train(a: &TrainArgs) -> Result<(), CliError> {
    let ds = load(&a.data)?;
    let cfg = a.lstm.config(a.seed);
    let (ds, normalizer) = if a.no_normalize {
        (ds, None)
    } else {
        let n = fit_normalizer(&ds)?;
        (apply_normalizer(&n, &ds)?, Some(n))
    };
    let out = train_with_progress(&ds, &cfg, |epoch, loss| {
        eprintln!("epoch {:>4}/{} loss {loss:.6}", epoch + 1, cfg.epochs);
    })?;
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_model(&out.params, &a.output)?;
    let mut run = RunManifest::new("train");
    run.set("seed", a.seed);
    echo_train(&mut run, &cfg, normalizer.is_some());
    run.input("data", &a.data.data)?;
    run.input("manifest", &a.data.manifest)?;
    run.artifact(&a.output)?;
    if let Some(n) = &normalizer {
        let path = with_suffix(&a.output, ".norm");
        save_normalizer(n, &path)?;
        run.artifact(&path)?;
    }
    run.set("final_loss", out.history.last().copied().unwrap_or(f64::NAN));
    run.write(&with_suffix(&a.output, ".run"))?;
    Ok(())
}

fn load_for_inference(m: &ModelInput, d: &DataArgs, run: &mut RunManifest) -> Result<(crate::model::ModelParams, Dataset), CliError> {
    let params = load_model(&m.model)?;
    let ds = load(d)?;
    params.check_dataset(&ds)?;
    run.input("model", &m.model)?;
    run.input("data", &d.data)?;
    run.input("manifest", &d.manifest)?;
    let default = with_suffix(&m.model, ".norm");
    let norm_path = m.normalizer.clone().or_else(|| default.exists().then_some(default));
    let normalizer: Option<Normalizer> = match &norm_path {
        Some(p) => {
            run.input("normalizer", p)?;
            Some(load_normalizer(p)?)
        }
        None => None,
    };
    let ds = match &normalizer {
        Some(n) => apply_normalizer(n, &ds)?,
        None => ds,
    };
    Ok((params, ds))
}

fn predict_cmd(a: &PredictArgs) -> Result<(), CliError> {
    let mut run = RunManifest::new("predict");
    let (params, ds) = load_for_inference(&a.model, &a.data, &mut run)?;
    let preds = predict(&ds, &params)?;
    let mut out = String::from("id,label,predicted");
    for name in &params.class_names {
        let _ = write!(out, ",p_{name}");
    }
    out.push('\n');
    for (s, p) in ds.samples.iter().zip(&preds) {
        let _ = write!(out, "{},{},{}", s.id, ds.class_names[s.label], params.class_names[p.class]);
        for v in p.probs.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(&a.output, out).map_err(io_err(&a.output))?;
    run.artifact(&a.output)?;
    run.write(&with_suffix(&a.output, ".run"))?;
    Ok(())
}

fn extract(a: &ExtractArgs) -> Result<(), CliError> {
    let mut run = RunManifest::new("extract-features");
    let (params, ds) = load_for_inference(&a.model, &a.data, &mut run)?;
    let table = extract_features(&ds, &params)?;
    write_feature_table(&table, &a.output)?;
    run.set("hidden_dim", params.hidden_dim());
    run.artifact(&a.output)?;
    run.write(&with_suffix(&a.output, ".run"))?;
    Ok(())
}

fn crossval(a: &CrossvalArgs) -> Result<(), CliError> {
    let ds = load(&a.data)?;
    let cfg = a.config();
    let methods = a.methods();
    let epochs = cfg.train.epochs;
    let results = compare_methods(&ds, &methods, &cfg, &mut |p| match p {
        Progress::Epoch { fold, epoch, loss } => {
            eprintln!("fold {fold} epoch {:>4}/{epochs} loss {loss:.6}", epoch + 1)
        }
        Progress::FoldDone {
            fold,
            method,
            accuracy,
        } => eprintln!("fold {fold} {method} done: accuracy {accuracy:.4}"),
    })?;
    let echo = cfg.echo();
    create_dir(&a.output)?;
    let text = a.output.join("report.txt");
    let kv = a.output.join("report.kv");
    fs::write(&text, render_text(&results, &ds.class_names, &echo)).map_err(io_err(&text))?;
    fs::write(&kv, render_key_values(&results, &ds.class_names, &echo)).map_err(io_err(&kv))?;
    let mut run = RunManifest::new("crossval");
    run.set("seed", a.seed);
    run.set(
        "methods",
        methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
    );
    for (k, v) in &echo {
        run.set(&format!("config.{k}"), v);
    }
    run.input("data", &a.data.data)?;
    run.input("manifest", &a.data.manifest)?;
    run.artifact(&text)?;
    run.artifact(&kv)?;
    run.write(&a.output.join("run.manifest"))?;
    Ok(())
}
