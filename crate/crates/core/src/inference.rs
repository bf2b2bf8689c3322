//! Prediction and evaluation metrics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SampleSet, Task};
use crate::error::{Error, Result};
use crate::forest::{Forest, Payload, Tree};

/// A tree that routes a row from its root to one leaf.
pub trait Router: Sync {
    /// Node ids visited, root first; `path(x)[i]` sits at depth `i`.
    fn path(&self, x: &[f64]) -> Vec<usize>;
    fn leaf_payload(&self, x: &[f64]) -> &Payload;
    /// Configured depth limit.
    fn max_depth(&self) -> usize;
}

impl Router for Tree {
    fn path(&self, x: &[f64]) -> Vec<usize> {
        Tree::path(self, x)
    }

    fn leaf_payload(&self, x: &[f64]) -> &Payload {
        Tree::leaf_payload(self, x)
    }

    fn max_depth(&self) -> usize {
        self.max_depth
    }
}

pub fn traverse<'a>(t: &'a Tree, x: &[f64]) -> &'a Payload {
    t.leaf_payload(x)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Majority,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Aggregation::Mean),
            "majority" => Ok(Aggregation::Majority),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Probs(Vec<f64>),
    Value(f64),
}

impl Prediction {
    pub fn probs(&self) -> &[f64] {
        match self {
            Prediction::Probs(p) => p,
            Prediction::Value(_) => panic!("regression prediction has no class probabilities"),
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Prediction::Value(v) => *v,
            Prediction::Probs(_) => panic!("classification prediction has no scalar value"),
        }
    }

    /// Most probable class, lowest index on ties.
    pub fn class(&self) -> usize {
        argmax(self.probs())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// Combine the leaf payloads reached in each tree.
pub fn aggregate<'a>(
    payloads: impl IntoIterator<Item = &'a Payload>,
    agg: Aggregation,
) -> Prediction {
    let mut n = 0usize;
    let mut acc: Option<Prediction> = None;
    for p in payloads {
        n += 1;
        match (p, &mut acc) {
            (Payload::Mean(v), None) => acc = Some(Prediction::Value(*v)),
            (Payload::Mean(v), Some(Prediction::Value(s))) => *s += v,
            (Payload::Probs(q), None) => {
                acc = Some(Prediction::Probs(vec![0.0; q.len()]));
                add_probs(&mut acc, q, agg);
            }
            (Payload::Probs(q), Some(_)) => add_probs(&mut acc, q, agg),
            _ => panic!("mixed payload kinds in one ensemble"),
        }
    }
    match acc.expect("ensemble has at least one tree") {
        Prediction::Value(s) => Prediction::Value(s / n as f64),
        Prediction::Probs(mut s) => {
            let total: f64 = s.iter().sum();
            s.iter_mut().for_each(|v| *v /= total);
            Prediction::Probs(s)
        }
    }
}

fn add_probs(acc: &mut Option<Prediction>, q: &[f64], agg: Aggregation) {
    if let Some(Prediction::Probs(s)) = acc {
        match agg {
            Aggregation::Mean => s.iter_mut().zip(q).for_each(|(a, b)| *a += b),
            Aggregation::Majority => s[argmax(q)] += 1.0,
        }
    }
}

pub fn predict_with<R: Router>(trees: &[R], x: &[f64], agg: Aggregation) -> Prediction {
    aggregate(trees.iter().map(|t| t.leaf_payload(x)), agg)
}

/// Predictions for every row of `ds`, computed in parallel.
pub fn predict_rows<R: Router>(trees: &[R], ds: &Dataset, agg: Aggregation) -> Vec<Prediction> {
    (0..ds.n_rows())
        .into_par_iter()
        .map(|i| predict_with(trees, ds.row(i), agg))
        .collect()
}

pub fn predict(f: &Forest, x: &[f64], agg: Aggregation) -> Prediction {
    predict_with(&f.trees, x, agg)
}

pub fn predict_dataset(f: &Forest, ds: &Dataset, agg: Aggregation) -> Vec<Prediction> {
    predict_rows(&f.trees, ds, agg)
}

/// Binary ROC AUC as the normalized Mann-Whitney statistic; tied scores
/// across classes count one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs both positive and negative examples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            if labels[o] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Macro one-vs-rest AUC over the classes present in `labels`.
pub fn roc_auc_ovr(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64> {
    let present: Vec<usize> = (0..n_classes)
        .filter(|c| labels.contains(c))
        .collect();
    if present.len() < 2 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs at least two classes with members".into(),
        ));
    }
    let mut total = 0.0;
    for &c in &present {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let bin: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        total += roc_auc(&scores, &bin)?;
    }
    Ok(total / present.len() as f64)
}

/// AUC for class-probability predictions: plain binary AUC on the second
/// class for two classes, macro one-vs-rest otherwise.
pub fn auc_from_predictions(preds: &[Prediction], labels: &[usize], n_classes: usize) -> Result<f64> {
    if n_classes == 2 {
        let scores: Vec<f64> = preds.iter().map(|p| p.probs()[1]).collect();
        let bin: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        roc_auc(&scores, &bin)
    } else {
        let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.probs().to_vec()).collect();
        roc_auc_ovr(&probs, labels, n_classes)
    }
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::Shape {
            expected: predicted.len(),
            found: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("accuracy of zero predictions".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn rmse(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Shape {
            expected: preds.len(),
            found: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput("rmse of zero predictions".into()));
    }
    let sse: f64 = preds.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

/// Accuracy when predicting positive for `score >= t`.
pub fn threshold_accuracy(scores: &[f64], labels: &[bool], t: f64) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= t) == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

pub const DEFAULT_THRESHOLD_STEP: f64 = 0.01;

/// Scan thresholds `0, step, 2*step, ..., 1` (plus 0.5) and return the one
/// with the best accuracy, the smallest on ties.
pub fn tune_threshold(scores: &[f64], labels: &[bool], step: f64) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scores to tune a threshold on".into()));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("threshold step {step} must lie in (0, 1]")));
    }
    let m = (1.0 / step).round() as usize;
    let mut grid: Vec<f64> = (0..=m).map(|i| (i as f64 * step).min(1.0)).collect();
    grid.push(0.5);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut best = (grid[0], threshold_accuracy(scores, labels, grid[0]));
    for &t in &grid[1..] {
        let acc = threshold_accuracy(scores, labels, t);
        if acc > best.1 {
            best = (t, acc);
        }
    }
    Ok(best)
}

/// Rows of `sample` grouped by node at each depth `0..=max_depth`. A row
/// that stops at a shallower leaf stays in that leaf at deeper levels.
pub fn nodes_by_depth<R: Router>(
    t: &R,
    ds: &Dataset,
    sample: &SampleSet,
) -> Vec<BTreeMap<usize, Vec<usize>>> {
    let depth = t.max_depth();
    let mut levels = vec![BTreeMap::<usize, Vec<usize>>::new(); depth + 1];
    for &i in &sample.indices {
        let path = t.path(ds.row(i));
        for (dd, level) in levels.iter_mut().enumerate() {
            let node = path[dd.min(path.len() - 1)];
            level.entry(node).or_default().push(i);
        }
    }
    levels
}

/// Shannon entropy in bits of a label histogram.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            p * (1.0 / p).log2()
        })
        .sum()
}

/// Label entropy at each depth, summed over nodes weighted by the fraction
/// of the sample each node holds.
pub fn weighted_entropy_by_depth<R: Router>(t: &R, ds: &Dataset, sample: &SampleSet) -> Result<Vec<f64>> {
    if ds.task() != Task::Classification {
        return Err(Error::UndefinedMetric("entropy needs class labels".into()));
    }
    if sample.is_empty() {
        return Err(Error::EmptyInput("entropy of an empty sample".into()));
    }
    let total = sample.len() as f64;
    let entropies = nodes_by_depth(t, ds, sample)
        .iter()
        .map(|level| {
            level
                .values()
                .map(|rows| {
                    let mut counts = vec![0usize; ds.n_classes()];
                    for &i in rows {
                        counts[ds.class_of(i)] += 1;
                    }
                    rows.len() as f64 / total * entropy_bits(&counts)
                })
                .sum()
        })
        .collect();
    Ok(entropies)
}
