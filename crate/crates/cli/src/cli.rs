//! Argument parsing and the subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use qcforest::clustering::NoiseConfig;
use qcforest::costmodel::{eval_cost, kp_load_cost, retrain_cost_breakdown, CostParams};
use qcforest::data::{
    load_csv_with, load_feature_rows, make_folds, one_hot_encode, stream_split, write_csv,
    CsvOptions, Dataset, Task,
};
use qcforest::feature_weights::{WeightMethod, WeightState};
use qcforest::forest::{load_model, retrain_forest, save_model, Forest, ForestConfig, TreeParams};
use qcforest::inference::{
    predict_dataset, threshold_accuracy, tune_threshold, Aggregation, Prediction,
    DEFAULT_THRESHOLD_STEP,
};
use qcforest::rng::{derive_seed, rng_from_seed, tag};
use rand::seq::SliceRandom;

use crate::config::ConfigFile;
use crate::experiments::{
    drifting_stream_run, entropy_profile, forest_folds, median, metric_name, run_stream, score,
    std_dev, summarize_entropy, summarize_stream, StreamRun, StreamSchedule,
};
use crate::synth::{separable_with_noise, DriftSpec};

/// Largest weight-state deviation accepted by `retrain --verify`.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    Usage(String),
    /// Data, model or I/O failure; exit code 1.
    Failed(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failed(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

impl From<qcforest::Error> for CliError {
    fn from(e: qcforest::Error) -> Self {
        CliError::Failed(e.into())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "qcforest", version, about = "Clustering-based random forests")]
pub struct Cli {
    /// Flat key=value file supplying defaults for any long flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build and evaluate a forest on seeded train/test folds.
    Build(BuildArgs),
    /// Fold a new batch of rows into a saved forest.
    Retrain(RetrainArgs),
    /// Predict rows of a CSV with a saved forest.
    Predict(PredictArgs),
    /// Score a saved forest on labelled rows.
    Eval(EvalArgs),
    /// Leading-order cost estimates.
    Cost(CostArgs),
    /// Test AUC as batches arrive, for the forest and the CART baseline.
    StreamExperiment(StreamArgs),
    /// Weighted label entropy per depth of single trees.
    EntropyReport(EntropyArgs),
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// classification or regression.
    #[arg(long)]
    pub task: Option<Task>,
    /// Label column; defaults to the last column.
    #[arg(long)]
    pub label: Option<String>,
    /// Comma-separated categorical columns to one-hot encode.
    #[arg(long)]
    pub categorical: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct ForestArgs {
    /// pearson or eta.
    #[arg(long)]
    pub weights: Option<WeightMethod>,
    #[arg(long)]
    pub trees: Option<usize>,
    /// Clusters per split.
    #[arg(long)]
    pub k: Option<usize>,
    /// Maximum tree depth.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relative distance error bound.
    #[arg(long)]
    pub noise_eps1: Option<f64>,
    /// Probability a distance estimate fails (doubled error range).
    #[arg(long)]
    pub noise_delta: Option<f64>,
    /// Near-tie window for random assignment.
    #[arg(long)]
    pub noise_tie: Option<f64>,
    /// Additive error bound on leaf class counts.
    #[arg(long)]
    pub noise_eps4: Option<f64>,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub test_ratio: Option<f64>,
    /// mean or majority.
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    /// Decision threshold in [0, 1], or `auto`.
    #[arg(long)]
    pub threshold: Option<Threshold>,
    /// Model path; with several folds, fold i goes to `<stem>-fold<i>.<ext>`.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    /// Metrics CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RetrainArgs {
    #[arg(long)]
    pub model_in: Option<PathBuf>,
    /// Training history of the model (written next to it as `<model>.train.csv`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// New batch with the same columns as the history; may hold no rows.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Labelled rows for before/after scores.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Recompute every weight state from scratch and compare.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model_in: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    #[arg(long)]
    pub threshold: Option<Threshold>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model_in: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    #[arg(long)]
    pub threshold: Option<Threshold>,
    /// Seed of the validation split used by `--threshold auto`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CostArgs {
    /// Rows already stored.
    #[arg(long)]
    pub n: Option<f64>,
    #[arg(long)]
    pub n_new: Option<f64>,
    /// Feature count.
    #[arg(long)]
    pub dim: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub depth: Option<f64>,
    /// Clustering iterations per split.
    #[arg(long)]
    pub max_iter: Option<f64>,
    #[arg(long)]
    pub trees: Option<f64>,
    #[arg(long)]
    pub classes: Option<f64>,
    #[arg(long)]
    pub weights: Option<WeightMethod>,
    #[arg(long)]
    pub noise_eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    #[arg(long)]
    pub eps3: Option<f64>,
    #[arg(long)]
    pub noise_delta: Option<f64>,
    #[arg(long)]
    pub qubits: Option<f64>,
    /// Measure data norms (and size) from this CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label: Option<String>,
    /// Task of `--data`; classification also sets `--classes`.
    #[arg(long)]
    pub task: Option<Task>,
    /// text or csv.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    /// Real dataset; the synthetic drifting stream is used when absent.
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub initial: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// File of batch sizes separated by commas or newlines.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EntropyArgs {
    /// Dataset; a synthetic separable set is used when absent.
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub forest: ForestArgs,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub test_ratio: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    Auto,
}

impl std::str::FromStr for Threshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Threshold::Auto);
        }
        match s.parse::<f64>() {
            Ok(t) if (0.0..=1.0).contains(&t) => Ok(Threshold::Fixed(t)),
            _ => Err(format!("threshold `{s}` must be a number in [0, 1] or `auto`")),
        }
    }
}

const DATA_KEYS: [&str; 4] = ["data", "task", "label", "categorical"];
const FOREST_KEYS: [&str; 9] = [
    "weights", "trees", "k", "depth", "seed", "noise-eps1", "noise-delta", "noise-tie", "noise-eps4",
];

pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Build(a) => cmd_build(a, &cfg, stdout),
        Command::Retrain(a) => cmd_retrain(a, &cfg, stdout),
        Command::Predict(a) => cmd_predict(a, &cfg, stdout),
        Command::Eval(a) => cmd_eval(a, &cfg, stdout),
        Command::Cost(a) => cmd_cost(a, &cfg, stdout),
        Command::StreamExperiment(a) => cmd_stream(a, &cfg, stdout),
        Command::EntropyReport(a) => cmd_entropy(a, &cfg, stdout),
    }
}

fn keys(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.concat()
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Failed(anyhow!("{}: {e}", path.display()))
}

/// Write `text` to `out` or, when absent, to stdout.
fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, text).map_err(io_err(p)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Failed(e.into())),
    }
}

fn last_column(path: &Path) -> CliResult<String> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let header = text
        .lines()
        .next()
        .ok_or_else(|| CliError::Failed(anyhow!("{} is empty", path.display())))?;
    Ok(header.rsplit(',').next().unwrap_or("").trim().to_string())
}

struct Loaded {
    ds: Dataset,
    label: String,
}

fn load_data(a: &DataArgs, cfg: &ConfigFile) -> CliResult<Option<Loaded>> {
    let Some(path) = cfg.pick(a.data.clone(), "data")? else {
        return Ok(None);
    };
    let task = cfg.or(a.task, "task", Task::Classification)?;
    let label = match cfg.pick(a.label.clone(), "label")? {
        Some(l) => l,
        None => last_column(&path)?,
    };
    let categorical: Vec<String> = cfg
        .pick(a.categorical.clone(), "categorical")?
        .map(|s| {
            s.split(',')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect()
        })
        .unwrap_or_default();
    let opts = CsvOptions {
        label_column: label.clone(),
        task,
        categorical: categorical.clone(),
    };
    let ds = load_csv_with(&path, &opts).with_context(|| format!("loading {}", path.display()))?;
    let names: Vec<&str> = categorical.iter().map(String::as_str).collect();
    let ds = one_hot_encode(&ds, &names)?;
    Ok(Some(Loaded { ds, label }))
}

fn require_data(a: &DataArgs, cfg: &ConfigFile) -> CliResult<Loaded> {
    load_data(a, cfg)?.ok_or_else(|| CliError::Usage("--data is required".into()))
}

fn forest_config(
    a: &ForestArgs,
    cfg: &ConfigFile,
    task: Task,
    defaults: &ForestConfig,
) -> CliResult<ForestConfig> {
    let default_weights = match task {
        Task::Classification => WeightMethod::Eta,
        Task::Regression => WeightMethod::Pearson,
    };
    let noise = NoiseConfig {
        eps1: cfg.or(a.noise_eps1, "noise-eps1", 0.0)?,
        delta_fail: cfg.or(a.noise_delta, "noise-delta", 0.0)?,
        delta_tie: cfg.or(a.noise_tie, "noise-tie", 0.0)?,
        eps2: 0.0,
        eps4: cfg.or(a.noise_eps4, "noise-eps4", 0.0)?,
        seed: 0,
    };
    let seed = cfg.or(a.seed, "seed", defaults.seed)?;
    let config = ForestConfig {
        n_trees: cfg.or(a.trees, "trees", defaults.n_trees)?,
        tree: TreeParams {
            k: cfg.or(a.k, "k", defaults.tree.k)?,
            max_depth: cfg.or(a.depth, "depth", defaults.tree.max_depth)?,
            noise: NoiseConfig { seed, ..noise },
            ..defaults.tree
        },
        weight_method: cfg.or(a.weights, "weights", default_weights)?,
        seed,
        ..defaults.clone()
    };
    if config.n_trees == 0 || config.tree.k == 0 {
        return Err(CliError::Usage("--trees and --k must be at least 1".into()));
    }
    config
        .tree
        .noise
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn fold_path(base: &Path, fold: usize, n_folds: usize) -> PathBuf {
    if n_folds == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-fold{fold}.{ext}"),
        None => format!("{stem}-fold{fold}"),
    };
    base.with_file_name(name)
}

/// Path of the training-history CSV stored beside a model.
pub fn history_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_os_string();
    s.push(".train.csv");
    PathBuf::from(s)
}

fn write_dataset(ds: &Dataset, label: &str, path: &Path) -> CliResult {
    let mut buf = Vec::new();
    write_csv(ds, label, &mut buf)?;
    std::fs::write(path, buf).map_err(io_err(path))
}

fn binary_scores(preds: &[Prediction]) -> Vec<f64> {
    preds.iter().map(|p| p.probs()[1]).collect()
}

fn labels_of(ds: &Dataset) -> Vec<usize> {
    (0..ds.n_rows()).map(|i| ds.class_of(i)).collect()
}

fn predicted_classes(preds: &[Prediction], t: Option<f64>) -> Vec<usize> {
    preds
        .iter()
        .map(|p| match t {
            Some(t) if p.probs().len() == 2 => usize::from(p.probs()[1] >= t),
            _ => p.class(),
        })
        .collect()
}

struct MetricRows(String);

impl MetricRows {
    fn new() -> Self {
        MetricRows("metric,fold,value\n".into())
    }

    fn push(&mut self, metric: &str, fold: impl std::fmt::Display, value: f64) {
        self.0.push_str(&format!("{metric},{fold},{value}\n"));
    }

    fn summary(&mut self, metric: &str, values: &[f64]) {
        self.push(metric, "median", median(values));
        self.push(metric, "std", std_dev(values));
    }
}

fn cmd_build(a: BuildArgs, cfg: &ConfigFile, stdout: &mut dyn Write) -> CliResult {
    cfg.check_keys(&keys(&[
        &DATA_KEYS,
        &FOREST_KEYS,
        &["folds", "test-ratio", "aggregation", "threshold", "model-out", "out"],
    ]))?;
    let Loaded { ds, label } = require_data(&a.data, cfg)?;
    let config = forest_config(&a.forest, cfg, ds.task(), &ForestConfig::default())?;
    let n_folds = cfg.or(a.folds, "folds", 5)?;
    let ratio = cfg.or(a.test_ratio, "test-ratio", 0.3)?;
    let agg = cfg.or(a.aggregation, "aggregation", Aggregation::Mean)?;
    let threshold = cfg.or(a.threshold, "threshold", Threshold::Fixed(0.5))?;
    let model_out = cfg.pick(a.model_out, "model-out")?;
    let out = cfg.pick(a.out, "out")?;
    if n_folds == 0 {
        return Err(CliError::Usage("--folds must be at least 1".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CliError::Usage("--test-ratio must lie strictly between 0 and 1".into()));
    }
    config.validate(&ds)?;

    let folds = make_folds(&ds, ratio, n_folds, config.seed)?;
    let built = forest_folds(&folds, &config, agg)?;
    let mut rows = MetricRows::new();
    let metric = metric_name(ds.task());
    let scores: Vec<f64> = built.iter().map(|(_, s)| *s).collect();
    let mut accuracies = Vec::new();
    for (i, ((forest, s), fold)) in built.iter().zip(&folds).enumerate() {
        rows.push(metric, i, *s);
        if ds.task() == Task::Classification {
            let t = match threshold {
                Threshold::Fixed(t) => t,
                Threshold::Auto if ds.n_classes() == 2 => {
                    let train_preds = predict_dataset(forest, &fold.train, agg);
                    let bin: Vec<bool> = labels_of(&fold.train).iter().map(|&l| l == 1).collect();
                    tune_threshold(&binary_scores(&train_preds), &bin, DEFAULT_THRESHOLD_STEP)?.0
                }
                Threshold::Auto => 0.5,
            };
            let preds = predict_dataset(forest, &fold.test, agg);
            let acc = qcforest::inference::accuracy(
                &predicted_classes(&preds, Some(t)),
                &labels_of(&fold.test),
            )?;
            rows.push("accuracy", i, acc);
            if ds.n_classes() == 2 {
                rows.push("threshold", i, t);
            }
            accuracies.push(acc);
        }
        if let Some(base) = &model_out {
            let path = fold_path(base, i, n_folds);
            save_model(forest, &path)?;
            write_dataset(&ds.select(&fold.train_indices), &label, &history_path(&path))?;
        }
    }
    rows.summary(metric, &scores);
    if !accuracies.is_empty() {
        rows.summary("accuracy", &accuracies);
    }
    emit(out.as_deref(), &rows.0, stdout)
}

/// Load a labelled CSV into the model's feature space and class catalog.
fn load_for_model(path: &Path, label: Option<&str>, model: &Forest) -> CliResult<Dataset> {
    let label = match label {
        Some(l) => l.to_string(),
        None => last_column(path)?,
    };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let opts = CsvOptions {
        label_column: label,
        task: model.task,
        categorical: vec![],
    };
    let ds = if text.lines().filter(|l| !l.trim().is_empty()).count() == 1 {
        // header only: an empty batch
        let header: Vec<String> = text.trim().split(',').map(|s| s.trim().to_string()).collect();
        let names: Vec<String> = header
            .iter()
            .filter(|h| **h != opts.label_column)
            .cloned()
            .collect();
        if names != model.feature_names {
            return Err(CliError::Failed(anyhow!(
                "{}: columns do not match the model's features",
                path.display()
            )));
        }
        let probe = Dataset::new(
            vec![vec![0.0; names.len()]],
            match model.task {
                Task::Classification => qcforest::data::Target::Classes {
                    labels: vec![0],
                    classes: model.classes.clone(),
                },
                Task::Regression => qcforest::data::Target::Values(vec![0.0]),
            },
            Some(names),
        )?;
        return Ok(probe.empty_like());
    } else {
        qcforest::data::parse_csv(&text, &opts).with_context(|| format!("loading {}", path.display()))?
    };
    if ds.feature_names() != model.feature_names.as_slice() {
        return Err(CliError::Failed(anyhow!(
            "{}: columns do not match the model's features",
            path.display()
        )));
    }
    let ds = match model.task {
        Task::Classification => ds.with_class_catalog(&model.classes)?,
        Task::Regression => ds,
    };
    Ok(match &model.norm {
        Some(norm) => norm.apply(&ds)?,
        None => ds,
    })
}

fn load_raw_for_model(path: &Path, label: &str, model: &Forest) -> CliResult<Option<Dataset>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    if text.lines().filter(|l| !l.trim().is_empty()).count() <= 1 {
        return Ok(None);
    }
    let opts = CsvOptions {
        label_column: label.to_string(),
        task: model.task,
        categorical: vec![],
    };
    let ds = qcforest::data::parse_csv(&text, &opts)?;
    Ok(Some(match model.task {
        Task::Classification => ds.with_class_catalog(&model.classes)?,
        Task::Regression => ds,
    }))
}

fn cmd_retrain(a: RetrainArgs, cfg: &ConfigFile, stdout: &mut dyn Write) -> CliResult {
    cfg.check_keys(&[
        "model-in", "data", "batch", "test", "label", "seed", "model-out", "out", "verify",
    ])?;
    let model_in = cfg
        .pick(a.model_in, "model-in")?
        .ok_or_else(|| CliError::Usage("--model-in is required".into()))?;
    let batch_path = cfg
        .pick(a.batch, "batch")?
        .ok_or_else(|| CliError::Usage("--batch is required".into()))?;
    let history = match cfg.pick(a.data, "data")? {
        Some(p) => p,
        None => history_path(&model_in),
    };
    let label_flag = cfg.pick(a.label, "label")?;
    let verify = cfg.flag(a.verify, "verify")?;
    let test_path = cfg.pick(a.test, "test")?;
    let model_out = cfg.pick(a.model_out, "model-out")?;
    let out = cfg.pick(a.out, "out")?;

    let model = load_model(&model_in).with_context(|| format!("loading {}", model_in.display()))?;
    let seed = cfg.or(a.seed, "seed", model.config.seed)?;
    let label = match &label_flag {
        Some(l) => l.clone(),
        None => last_column(&history)?,
    };
    let old = load_for_model(&history, Some(&label), &model)?;
    let new = load_for_model(&batch_path, Some(&label), &model)?;
    let retrained = retrain_forest(&model, &old, &new, seed)?;

    let mut rows = MetricRows::new();
    if let Some(test_path) = &test_path {
        let test = load_for_model(test_path, Some(&label), &model)?;
        let metric = metric_name(model.task);
        rows.push(metric, "pre", score(&predict_dataset(&model, &test, Aggregation::Mean), &test)?);
        rows.push(
            metric,
            "post",
            score(&predict_dataset(&retrained, &test, Aggregation::Mean), &test)?,
        );
    }
    if verify {
        let all = old.concat(&new)?;
        let mut worst: f64 = 0.0;
        for (state, sample) in retrained.weight_states.iter().zip(&retrained.samples) {
            let scratch = WeightState::compute(state.method(), &all, &sample.indices)?;
            worst = worst.max(state.max_relative_deviation(&scratch));
        }
        rows.push("weight_state_max_rel_dev", "all", worst);
        if worst.is_nan() || worst >= VERIFY_TOLERANCE {
            emit(out.as_deref(), &rows.0, stdout)?;
            return Err(CliError::Failed(anyhow!(
                "weight states deviate from recomputation by {worst:e}"
            )));
        }
    }
    if let Some(path) = &model_out {
        save_model(&retrained, path)?;
        let raw_old = load_raw_for_model(&history, &label, &model)?;
        let raw_new = load_raw_for_model(&batch_path, &label, &model)?;
        let combined = match (raw_old, raw_new) {
            (Some(o), Some(n)) => Some(o.concat(&n)?),
            (o, n) => o.or(n),
        };
        if let Some(c) = combined {
            write_dataset(&c, &label, &history_path(path))?;
        }
    }
    emit(out.as_deref(), &rows.0, stdout)
}

fn require_model(path: Option<PathBuf>) -> CliResult<Forest> {
    let path = path.ok_or_else(|| CliError::Usage("--model-in is required".into()))?;
    Ok(load_model(&path).with_context(|| format!("loading {}", path.display()))?)
}

fn cmd_predict(a: PredictArgs, cfg: &ConfigFile, stdout: &mut dyn Write) -> CliResult {
    cfg.check_keys(&["model-in", "data", "aggregation", "threshold", "out"])?;
    let model = require_model(cfg.pick(a.model_in, "model-in")?)?;
    let data = cfg
        .pick(a.data, "data")?
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let agg = cfg.or(a.aggregation, "aggregation", Aggregation::Mean)?;
    let threshold = match cfg.pick(a.threshold, "threshold")? {
        Some(Threshold::Auto) => {
            return Err(CliError::Usage(
                "--threshold auto needs labels; use `eval` to tune it".into(),
            ))
        }
        Some(Threshold::Fixed(t)) => Some(t),
        None => None,
    };
    let out = cfg.pick(a.out, "out")?;
    let mut rows = load_feature_rows(&data, &model.feature_names)?;
    if let Some(norm) = &model.norm {
        rows = rows.iter().map(|r| norm.apply_row(r)).collect();
    }
    let mut text = String::new();
    match model.task {
        Task::Classification => {
            text.push_str("row,label");
            for c in &model.classes {
                text.push_str(&format!(",p_{c}"));
            }
            text.push('\n');
            for (i, r) in rows.iter().enumerate() {
                let p = qcforest::inference::predict(&model, r, agg);
                let class = predicted_classes(std::slice::from_ref(&p), threshold)[0];
                text.push_str(&format!("{i},{}", model.classes[class]));
                for v in p.probs() {
                    text.push_str(&format!(",{v}"));
                }
                text.push('\n');
            }
        }
        Task::Regression => {
            text.push_str("row,value\n");
            for (i, r) in rows.iter().enumerate() {
                let p = qcforest::inference::predict(&model, r, agg);
                text.push_str(&format!("{i},{}\n", p.value()));
            }
        }
    }
    emit(out.as_deref(), &text, stdout)
}

fn cmd_eval(a: EvalArgs, cfg: &ConfigFile, stdout: &mut dyn Write) -> CliResult {
    cfg.check_keys(&["model-in", "data", "label", "aggregation", "threshold", "seed", "out"])?;
    let model = require_model(cfg.pick(a.model_in, "model-in")?)?;
    let data = cfg
        .pick(a.data, "data")?
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let label = cfg.pick(a.label, "label")?;
    let agg = cfg.or(a.aggregation, "aggregation", Aggregation::Mean)?;
    let threshold = cfg.or(a.threshold, "threshold", Threshold::Fixed(0.5))?;
    let seed = cfg.or(a.seed, "seed", model.config.seed)?;
    let out = cfg.pick(a.out, "out")?;
    let ds = load_for_model(&data, label.as_deref(), &model)?;
    if ds.is_empty() {
        return Err(CliError::Failed(anyhow!("{} has no rows", data.display())));
    }
    let preds = predict_dataset(&model, &ds, agg);
    let mut rows = MetricRows::new();
    let metric = metric_name(model.task);
    match score(&preds, &ds) {
        Ok(s) => rows.push(metric, "all", s),
        Err(qcforest::Error::UndefinedMetric(_)) => {}
        Err(e) => return Err(e.into()),
    }
    if model.task == Task::Classification {
        let labels = labels_of(&ds);
        match threshold {
            Threshold::Auto if model.n_classes() == 2 => {
                // tune on a seeded half, report accuracy on the other half
                let mut idx: Vec<usize> = (0..ds.n_rows()).collect();
                idx.shuffle(&mut rng_from_seed(derive_seed(seed, tag::FOLD, 0)));
                let (val, rest) = idx.split_at(ds.n_rows() / 2);
                let scores = binary_scores(&preds);
                let pick = |ix: &[usize]| -> (Vec<f64>, Vec<bool>) {
                    ix.iter().map(|&i| (scores[i], labels[i] == 1)).unzip()
                };
                let (vs, vl) = pick(val);
                let (rs, rl) = pick(rest);
                let (t, _) = tune_threshold(&vs, &vl, DEFAULT_THRESHOLD_STEP)?;
                rows.push("threshold", "all", t);
                rows.push("accuracy", "heldout", threshold_accuracy(&rs, &rl, t));
            }
            Threshold::Auto => {
                rows.push("accuracy", "all", qcforest::inference::accuracy(
                    &predicted_classes(&preds, None),
                    &labels,
                )?);
            }
            Threshold::Fixed(t) => {
                rows.push("accuracy", "all", qcforest::inference::accuracy(
                    &predicted_classes(&preds, Some(t)),
                    &labels,
                )?);
            }
        }
    }
    emit(out.as_deref(), &rows.0, stdout)
}

fn cmd_cost(a: CostArgs, cfg: &ConfigFile, stdout: &mut dyn Write) -> CliResult {
    cfg.check_keys(&[
        "n", "n-new", "dim", "k", "depth", "max-iter", "trees", "classes", "weights",
        "noise-eps1", "eps2", "eps3", "noise-delta", "qubits", "data", "label", "task", "format",
        "out",
    ])?;
    let d = CostParams::default();
    let mut p = CostParams {
        n: cfg.or(a.n, "n", d.n)?,
        n_new: cfg.or(a.n_new, "n-new", d.n_new)?,
        d: cfg.or(a.dim, "dim", d.d)?,
        k: cfg.or(a.k, "k", d.k)?,
        max_iter: cfg.or(a.max_iter, "max-iter", d.max_iter)?,
        depth: cfg.or(a.depth, "depth", d.depth)?,
        n_trees: cfg.or(a.trees, "trees", d.n_trees)?,
        n_classes: cfg.or(a.classes, "classes", d.n_classes)?,
        method: cfg.or(a.weights, "weights", d.method)?,
        eps1: cfg.or(a.noise_eps1, "noise-eps1", d.eps1)?,
        eps2: cfg.or(a.eps2, "eps2", d.eps2)?,
        eps3: cfg.or(a.eps3, "eps3", d.eps3)?,
        delta: cfg.or(a.noise_delta, "noise-delta", d.delta)?,
        qubits: cfg.or(a.qubits, "qubits", d.qubits)?,
        ..d
    };
    if let Some(path) = cfg.pick(a.data, "data")? {
        let label = match cfg.pick(a.label, "label")? {
            Some(l) => l,
            None => last_column(&path)?,
        };
        let ds = load_csv_with(
            &path,
            &CsvOptions {
                label_column: label,
                task: cfg.or(a.task, "task", Task::Classification)?,
                categorical: vec![],
            },
        )?;
        if ds.task() == Task::Classification {
            p.n_classes = ds.n_classes() as f64;
        }
        p.n = ds.n_rows() as f64;
        p.d = ds.n_features() as f64;
        p.measure_norms(&ds);
    }
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let format = cfg.or(a.format, "format", "text".to_string())?;
    let out = cfg.pick(a.out, "out")?;
    let breakdown = retrain_cost_breakdown(&p)?;
    let items = [
        ("eval_cost", eval_cost(p.k as u64, p.depth as u64, p.d as u64) as f64),
        ("kp_load", kp_load_cost(p.n, p.d)),
        ("load_new", breakdown.load_new),
        ("weights_update", breakdown.weights_update),
        ("clustering", breakdown.clustering),
        ("leaf_label", breakdown.leaf_label),
        ("retrain_total", breakdown.total()),
    ];
    let text = match format.as_str() {
        "csv" => {
            let mut s = String::from("component,estimate\n");
            for (name, v) in items {
                s.push_str(&format!("{name},{v}\n"));
            }
            s
        }
        "text" => {
            let mut s = String::from("leading-order estimates (unit constants)\n");
            for (name, v) in items {
                s.push_str(&format!("{name:<16}{v:>16.6e}\n"));
            }
            s
        }
        other => return Err(CliError::Usage(format!("unknown format `{other}`"))),
    };
    emit(out.as_deref(), &text, stdout)
}

fn read_schedule(path: &Path) -> CliResult<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("bad batch size `{s}` in schedule")))
        })
        .collect()
}

fn cmd_stream(a: StreamArgs, cfg: &ConfigFile, stdout: &mut dyn Write) -> CliResult {
    cfg.check_keys(&keys(&[
        &DATA_KEYS,
        &FOREST_KEYS,
        &["replications", "initial", "batch-size", "batches", "test-size", "schedule", "out"],
    ]))?;
    let sched = StreamSchedule::default();
    let replications = cfg.or(a.replications, "replications", 5)?;
    let initial = cfg.or(a.initial, "initial", sched.initial)?;
    let batch_size = cfg.or(a.batch_size, "batch-size", sched.batch_size)?;
    let n_batches = cfg.or(a.batches, "batches", sched.n_batches)?;
    let n_test = cfg.or(a.test_size, "test-size", sched.n_test)?;
    let batch_sizes = match cfg.pick(a.schedule, "schedule")? {
        Some(p) => read_schedule(&p)?,
        None => vec![batch_size; n_batches],
    };
    let out = cfg.pick(a.out, "out")?;
    if replications == 0 || initial < 2 {
        return Err(CliError::Usage("need at least one replication and two initial rows".into()));
    }
    let defaults = ForestConfig {
        n_trees: 50,
        tree: TreeParams {
            k: 4,
            max_depth: 2,
            ..TreeParams::default()
        },
        ..ForestConfig::default()
    };
    let loaded = load_data(&a.data, cfg)?;
    let task = loaded.as_ref().map_or(Task::Classification, |l| l.ds.task());
    if task != Task::Classification {
        return Err(CliError::Failed(anyhow!("the stream experiment scores ROC AUC and needs class labels")));
    }
    let config = forest_config(&a.forest, cfg, task, &defaults)?;
    let cart_depth = config.tree.max_depth;
    let runs = (0..replications)
        .map(|r| {
            let seed = derive_seed(config.seed, tag::STREAM, r as u64);
            match &loaded {
                None => {
                    if batch_sizes.iter().any(|&b| b != batch_size) {
                        return Err(CliError::Usage(
                            "the synthetic stream uses equal batches; drop --schedule".into(),
                        ));
                    }
                    let schedule = StreamSchedule {
                        initial,
                        batch_size,
                        n_batches: batch_sizes.len(),
                        n_test,
                    };
                    Ok(drifting_stream_run(&DriftSpec::default(), &schedule, &config, cart_depth, seed)?)
                }
                Some(Loaded { ds, .. }) => {
                    let plan = stream_split(ds, initial, &batch_sizes, seed)?;
                    let mut used: Vec<bool> = vec![false; ds.n_rows()];
                    for &i in plan.initial.iter().chain(plan.batches.iter().flatten()) {
                        used[i] = true;
                    }
                    let rest: Vec<usize> = (0..ds.n_rows()).filter(|&i| !used[i]).take(n_test).collect();
                    if rest.is_empty() {
                        return Err(CliError::Failed(anyhow!("the plan leaves no rows for testing")));
                    }
                    let batches: Vec<Dataset> = plan.batches.iter().map(|b| ds.select(b)).collect();
                    let run_config = ForestConfig { seed, ..config.clone() };
                    Ok(run_stream(
                        &ds.select(&plan.initial),
                        &batches,
                        &ds.select(&rest),
                        &run_config,
                        cart_depth,
                        seed,
                    )?)
                }
            }
        })
        .collect::<CliResult<Vec<StreamRun>>>()?;
    let mut text = String::from("samples_used,method,median_auc,std_auc\n");
    for p in summarize_stream(&runs) {
        text.push_str(&format!("{},{},{},{}\n", p.samples_used, p.method, p.median_auc, p.std_auc));
    }
    emit(out.as_deref(), &text, stdout)
}

fn cmd_entropy(a: EntropyArgs, cfg: &ConfigFile, stdout: &mut dyn Write) -> CliResult {
    cfg.check_keys(&keys(&[&DATA_KEYS, &FOREST_KEYS, &["folds", "test-ratio", "out"]]))?;
    let n_folds = cfg.or(a.folds, "folds", 5)?;
    let ratio = cfg.or(a.test_ratio, "test-ratio", 0.3)?;
    let out = cfg.pick(a.out, "out")?;
    let defaults = ForestConfig {
        n_trees: 1,
        tree: TreeParams {
            k: 2,
            max_depth: 5,
            ..TreeParams::default()
        },
        ..ForestConfig::default()
    };
    let loaded = load_data(&a.data, cfg)?;
    let seed = cfg.or(a.forest.seed, "seed", defaults.seed)?;
    let ds = match loaded {
        Some(l) => l.ds,
        None => separable_with_noise(600, 4, seed)?,
    };
    if ds.task() != Task::Classification {
        return Err(CliError::Failed(anyhow!("entropy is undefined for regression labels")));
    }
    let config = forest_config(&a.forest, cfg, ds.task(), &defaults)?;
    config.validate(&ds)?;
    if n_folds == 0 || !(ratio > 0.0 && ratio < 1.0) {
        return Err(CliError::Usage("need --folds >= 1 and --test-ratio in (0, 1)".into()));
    }
    let profiles = make_folds(&ds, ratio, n_folds, config.seed)?
        .iter()
        .map(|f| entropy_profile(&f.train, &config))
        .collect::<qcforest::Result<Vec<_>>>()?;
    let mut text = String::from("variant,depth,median,std\n");
    for r in summarize_entropy(&profiles) {
        text.push_str(&format!("{},{},{},{}\n", r.variant, r.depth, r.median, r.std));
    }
    emit(out.as_deref(), &text, stdout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_parsing() {
        assert_eq!("auto".parse::<Threshold>().unwrap(), Threshold::Auto);
        assert_eq!("0.25".parse::<Threshold>().unwrap(), Threshold::Fixed(0.25));
        assert!("1.5".parse::<Threshold>().is_err());
    }

    #[test]
    fn fold_paths() {
        assert_eq!(fold_path(Path::new("m.json"), 0, 1), PathBuf::from("m.json"));
        assert_eq!(fold_path(Path::new("d/m.json"), 2, 5), PathBuf::from("d/m-fold2.json"));
        assert_eq!(history_path(Path::new("m.json")), PathBuf::from("m.json.train.csv"));
    }
}
