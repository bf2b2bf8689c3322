//! Fold evaluation, the streaming-retrain curve and the entropy report.

use qcforest::baseline::{build_cart, cart_ensemble, CartConfig, CartTree};
use qcforest::data::{Dataset, Fold, NormParams, Task};
use qcforest::forest::{build_forest, retrain_forest, Forest, ForestConfig};
use qcforest::inference::{
    auc_from_predictions, predict_rows, rmse, weighted_entropy_by_depth, Aggregation, Prediction,
    Router,
};
use qcforest::{Error, Result};

use crate::synth::DriftSpec;

/// Test-set score: AUC for classification (macro one-vs-rest beyond two
/// classes), RMSE for regression.
pub fn score(preds: &[Prediction], test: &Dataset) -> Result<f64> {
    match test.task() {
        Task::Classification => {
            let labels: Vec<usize> = (0..test.n_rows()).map(|i| test.class_of(i)).collect();
            auc_from_predictions(preds, &labels, test.n_classes())
        }
        Task::Regression => {
            let values: Vec<f64> = preds.iter().map(Prediction::value).collect();
            let labels: Vec<f64> = (0..test.n_rows()).map(|i| test.label_value(i)).collect();
            rmse(&values, &labels)
        }
    }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification => "roc_auc",
        Task::Regression => "rmse",
    }
}

pub fn score_trees<R: Router>(trees: &[R], test: &Dataset, agg: Aggregation) -> Result<f64> {
    score(&predict_rows(trees, test, agg), test)
}

/// A forest per fold with its test score.
pub fn forest_folds(
    folds: &[Fold],
    config: &ForestConfig,
    agg: Aggregation,
) -> Result<Vec<(Forest, f64)>> {
    folds
        .iter()
        .map(|fold| {
            let mut f = build_forest(&fold.train, config)?;
            f.norm = Some(fold.norm.clone());
            let s = score_trees(&f.trees, &fold.test, agg)?;
            Ok((f, s))
        })
        .collect()
}

pub fn cart_folds(folds: &[Fold], config: &CartConfig) -> Result<Vec<f64>> {
    folds
        .iter()
        .map(|fold| {
            let e = cart_ensemble(&fold.train, config)?;
            score_trees(&e.trees, &fold.test, Aggregation::Mean)
        })
        .collect()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Streaming schedule: an initial set followed by equal batches, with a
/// held-out test set.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamSchedule {
    pub initial: usize,
    pub batch_size: usize,
    pub n_batches: usize,
    pub n_test: usize,
}

impl Default for StreamSchedule {
    fn default() -> Self {
        StreamSchedule {
            initial: 200,
            batch_size: 100,
            n_batches: 8,
            n_test: 1000,
        }
    }
}

/// Scores of both methods after the initial build and after each batch.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamRun {
    pub samples_used: Vec<usize>,
    pub forest: Vec<f64>,
    pub baseline: Vec<f64>,
}

/// Build on `initial`, then retrain on each batch in turn, scoring on
/// `test` after every step. Features are normalized with parameters fitted
/// on the initial set. The baseline is regrown at every step on exactly the
/// samples each forest tree holds.
pub fn run_stream(
    initial: &Dataset,
    batches: &[Dataset],
    test: &Dataset,
    config: &ForestConfig,
    cart_depth: usize,
    seed: u64,
) -> Result<StreamRun> {
    let norm = NormParams::fit(initial);
    let mut seen = norm.apply(initial)?;
    let test = norm.apply(test)?;
    let mut forest = build_forest(&seen, config)?;
    forest.norm = Some(norm.clone());
    let mut run = StreamRun {
        samples_used: vec![],
        forest: vec![],
        baseline: vec![],
    };
    let mut record = |f: &Forest, seen: &Dataset| -> Result<()> {
        run.samples_used.push(seen.n_rows());
        run.forest.push(score_trees(&f.trees, &test, Aggregation::Mean)?);
        let carts = f
            .samples
            .iter()
            .map(|s| build_cart(seen, s, cart_depth, 1))
            .collect::<Result<Vec<CartTree>>>()?;
        run.baseline.push(score_trees(&carts, &test, Aggregation::Mean)?);
        Ok(())
    };
    record(&forest, &seen)?;
    for (t, batch) in batches.iter().enumerate() {
        let batch = norm.apply(batch)?;
        let step_seed = qcforest::rng::derive_seed(seed, qcforest::rng::tag::STREAM, t as u64 + 1);
        forest = retrain_forest(&forest, &seen, &batch, step_seed)?;
        seen = seen.concat(&batch)?;
        record(&forest, &seen)?;
    }
    Ok(run)
}

/// One replication of the drifting-stream experiment. The test set is drawn
/// at the stream position reached after the last batch.
pub fn drifting_stream_run(
    spec: &DriftSpec,
    schedule: &StreamSchedule,
    config: &ForestConfig,
    cart_depth: usize,
    seed: u64,
) -> Result<StreamRun> {
    let initial = spec.rows(0, schedule.initial, seed)?;
    let batches = (0..schedule.n_batches)
        .map(|b| spec.rows(schedule.initial + b * schedule.batch_size, schedule.batch_size, seed))
        .collect::<Result<Vec<_>>>()?;
    let end = schedule.initial + schedule.n_batches * schedule.batch_size;
    let test = spec.snapshot(end, schedule.n_test, seed)?;
    let config = ForestConfig {
        seed,
        ..config.clone()
    };
    run_stream(&initial, &batches, &test, &config, cart_depth, seed)
}

/// Median and standard deviation over replications at each step.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub samples_used: usize,
    pub method: &'static str,
    pub median_auc: f64,
    pub std_auc: f64,
}

pub fn summarize_stream(runs: &[StreamRun]) -> Vec<CurvePoint> {
    let Some(first) = runs.first() else {
        return vec![];
    };
    let mut out = vec![];
    for step in 0..first.samples_used.len() {
        for (method, pick) in [
            ("qc_forest", (|r: &StreamRun, s: usize| r.forest[s]) as fn(&StreamRun, usize) -> f64),
            ("baseline", |r: &StreamRun, s: usize| r.baseline[s]),
        ] {
            let v: Vec<f64> = runs.iter().map(|r| pick(r, step)).collect();
            out.push(CurvePoint {
                samples_used: first.samples_used[step],
                method,
                median_auc: median(&v),
                std_auc: std_dev(&v),
            });
        }
    }
    out
}

/// Per-depth weighted entropies of one fold for the supervised clustering
/// tree, the same tree grown with uniform weights, and a CART tree, all on
/// the same bootstrap sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyProfile {
    pub supervised: Vec<f64>,
    pub unsupervised: Vec<f64>,
    pub baseline: Vec<f64>,
}

pub fn entropy_profile(train: &Dataset, config: &ForestConfig) -> Result<EntropyProfile> {
    if train.task() != Task::Classification {
        return Err(Error::UndefinedMetric("entropy needs class labels".into()));
    }
    let one = ForestConfig {
        n_trees: 1,
        ..config.clone()
    };
    let sup = build_forest(train, &ForestConfig { use_weights: true, ..one.clone() })?;
    let unsup = build_forest(train, &ForestConfig { use_weights: false, ..one.clone() })?;
    let sample = &sup.samples[0];
    let cart = build_cart(train, sample, one.tree.max_depth, 1)?;
    Ok(EntropyProfile {
        supervised: weighted_entropy_by_depth(&sup.trees[0], train, sample)?,
        unsupervised: weighted_entropy_by_depth(&unsup.trees[0], train, &unsup.samples[0])?,
        baseline: weighted_entropy_by_depth(&cart, train, sample)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyRow {
    pub variant: &'static str,
    pub depth: usize,
    pub median: f64,
    pub std: f64,
}

pub fn summarize_entropy(profiles: &[EntropyProfile]) -> Vec<EntropyRow> {
    let mut rows = vec![];
    let Some(first) = profiles.first() else {
        return rows;
    };
    type Pick = fn(&EntropyProfile) -> &Vec<f64>;
    let variants: [(&'static str, Pick); 3] = [
        ("supervised", |p| &p.supervised),
        ("unsupervised", |p| &p.unsupervised),
        ("baseline", |p| &p.baseline),
    ];
    for (variant, get) in variants {
        for depth in 0..get(first).len() {
            let v: Vec<f64> = profiles.iter().map(|p| get(p)[depth]).collect();
            rows.push(EntropyRow {
                variant,
                depth,
                median: median(&v),
                std: std_dev(&v),
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(std_dev(&[1.0]), 0.0);
        assert!((std_dev(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_batches_give_one_point() {
        let spec = DriftSpec::default();
        let schedule = StreamSchedule {
            initial: 60,
            batch_size: 10,
            n_batches: 0,
            n_test: 40,
        };
        let config = ForestConfig {
            n_trees: 3,
            ..ForestConfig::default()
        };
        let run = drifting_stream_run(&spec, &schedule, &config, 2, 1).unwrap();
        assert_eq!(run.samples_used, vec![60]);
        assert_eq!(summarize_stream(&[run]).len(), 2);
    }
}
