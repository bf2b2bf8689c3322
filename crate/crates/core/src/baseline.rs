//! Axis-aligned CART trees and a bootstrap ensemble of them, grown on the
//! same samples as a clustering forest with the same seed.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SampleSet, Task};
use crate::error::{Error, Result};
use crate::forest::{leaf_label_classification, leaf_label_regression, tree_bootstrap, Payload};
use crate::clustering::NoiseConfig;
use crate::inference::{entropy_bits, Router};
use crate::persist::{self, FORMAT_VERSION};

/// Gains at or below this are treated as zero.
const MIN_GAIN: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartNode {
    /// Split feature; `None` for leaves.
    pub feature: Option<usize>,
    /// Rows with `x[feature] <= threshold` go to the first child.
    #[serde(with = "crate::persist::f17")]
    pub threshold: f64,
    pub children: Vec<usize>,
    pub payload: Option<Payload>,
    pub depth: usize,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartTree {
    pub nodes: Vec<CartNode>,
    pub max_depth: usize,
}

impl CartTree {
    fn next(&self, id: usize, x: &[f64]) -> Option<usize> {
        let node = &self.nodes[id];
        node.feature.map(|f| {
            if x[f] <= node.threshold {
                node.children[0]
            } else {
                node.children[1]
            }
        })
    }

    pub fn leaf_id(&self, x: &[f64]) -> usize {
        let mut id = 0;
        while let Some(n) = self.next(id, x) {
            id = n;
        }
        id
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature.is_none()).count()
    }
}

impl Router for CartTree {
    fn path(&self, x: &[f64]) -> Vec<usize> {
        let mut path = vec![0];
        let mut id = 0;
        while let Some(n) = self.next(id, x) {
            id = n;
            path.push(id);
        }
        path
    }

    fn leaf_payload(&self, x: &[f64]) -> &Payload {
        self.nodes[self.leaf_id(x)]
            .payload
            .as_ref()
            .expect("leaves carry payloads")
    }

    fn max_depth(&self) -> usize {
        self.max_depth
    }
}

/// Best split found for one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Impurity of a node: entropy in bits for classes, sum of squared
/// deviations per row for values.
fn impurity(ds: &Dataset, rows: &[usize]) -> f64 {
    match ds.task() {
        Task::Classification => {
            let mut counts = vec![0usize; ds.n_classes()];
            for &i in rows {
                counts[ds.class_of(i)] += 1;
            }
            entropy_bits(&counts)
        }
        Task::Regression => {
            let n = rows.len() as f64;
            let mean = rows.iter().map(|&i| ds.label_value(i)).sum::<f64>() / n;
            rows.iter()
                .map(|&i| (ds.label_value(i) - mean).powi(2))
                .sum::<f64>()
                / n
        }
    }
}

/// Running label summary of one side of a candidate split.
#[derive(Clone)]
enum Side {
    Counts(Vec<usize>, usize),
    Moments { n: usize, sum: f64, sum_sq: f64 },
}

impl Side {
    fn empty(ds: &Dataset) -> Side {
        match ds.task() {
            Task::Classification => Side::Counts(vec![0; ds.n_classes()], 0),
            Task::Regression => Side::Moments {
                n: 0,
                sum: 0.0,
                sum_sq: 0.0,
            },
        }
    }

    fn add(&mut self, ds: &Dataset, i: usize, sign: i64) {
        match self {
            Side::Counts(c, n) => {
                let l = ds.class_of(i);
                c[l] = (c[l] as i64 + sign) as usize;
                *n = (*n as i64 + sign) as usize;
            }
            Side::Moments { n, sum, sum_sq } => {
                let y = ds.label_value(i);
                *n = (*n as i64 + sign) as usize;
                *sum += sign as f64 * y;
                *sum_sq += sign as f64 * y * y;
            }
        }
    }

    fn n(&self) -> usize {
        match self {
            Side::Counts(_, n) => *n,
            Side::Moments { n, .. } => *n,
        }
    }

    /// Impurity times row count.
    fn weighted_impurity(&self) -> f64 {
        match self {
            Side::Counts(c, n) => *n as f64 * entropy_bits(c),
            Side::Moments { n, sum, sum_sq } => {
                if *n == 0 {
                    0.0
                } else {
                    (sum_sq - sum * sum / *n as f64).max(0.0)
                }
            }
        }
    }
}

/// Exhaustive search over features and midpoints between consecutive
/// distinct values. Ties keep the lowest feature, then lowest threshold.
pub fn best_split(ds: &Dataset, rows: &[usize], min_leaf: usize) -> Option<Split> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let parent = impurity(ds, rows);
    let mut full = Side::empty(ds);
    for &i in rows {
        full.add(ds, i, 1);
    }
    let mut best: Option<Split> = None;
    let mut sorted = rows.to_vec();
    for f in 0..ds.n_features() {
        sorted.sort_by(|&a, &b| ds.row(a)[f].total_cmp(&ds.row(b)[f]));
        let mut left = Side::empty(ds);
        let mut right = full.clone();
        for pos in 0..n - 1 {
            let i = sorted[pos];
            left.add(ds, i, 1);
            right.add(ds, i, -1);
            let a = ds.row(i)[f];
            let b = ds.row(sorted[pos + 1])[f];
            if a == b || left.n() < min_leaf || right.n() < min_leaf {
                continue;
            }
            let child = (left.weighted_impurity() + right.weighted_impurity()) / n as f64;
            let gain = parent - child;
            if best.is_none_or(|s| gain > s.gain) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best.filter(|s| s.gain > MIN_GAIN)
}

fn leaf_payload(ds: &Dataset, rows: &[usize]) -> Result<Payload> {
    match ds.task() {
        Task::Classification => {
            let labels: Vec<usize> = rows.iter().map(|&i| ds.class_of(i)).collect();
            leaf_label_classification(&labels, ds.n_classes(), &NoiseConfig::exact(), 0)
                .map(Payload::Probs)
        }
        Task::Regression => {
            let ys: Vec<f64> = rows.iter().map(|&i| ds.label_value(i)).collect();
            leaf_label_regression(&ys).map(Payload::Mean)
        }
    }
}

/// Grow a greedy binary tree on the sampled rows.
pub fn build_cart(ds: &Dataset, sample: &SampleSet, max_depth: usize, min_leaf: usize) -> Result<CartTree> {
    if sample.is_empty() {
        return Err(Error::EmptyInput("tree sample is empty".into()));
    }
    let min_leaf = min_leaf.max(1);
    let mut nodes = vec![CartNode {
        feature: None,
        threshold: 0.0,
        children: vec![],
        payload: None,
        depth: 0,
        n_samples: sample.len(),
    }];
    let mut queue = std::collections::VecDeque::from([(0usize, sample.indices.clone())]);
    while let Some((id, rows)) = queue.pop_front() {
        let depth = nodes[id].depth;
        let split = if depth < max_depth {
            best_split(ds, &rows, min_leaf)
        } else {
            None
        };
        let Some(split) = split else {
            nodes[id].payload = Some(leaf_payload(ds, &rows)?);
            continue;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| ds.row(i)[split.feature] <= split.threshold);
        nodes[id].feature = Some(split.feature);
        nodes[id].threshold = split.threshold;
        for part in [left, right] {
            let child = nodes.len();
            nodes.push(CartNode {
                feature: None,
                threshold: 0.0,
                children: vec![],
                payload: None,
                depth: depth + 1,
                n_samples: part.len(),
            });
            nodes[id].children.push(child);
            queue.push_back((child, part));
        }
    }
    Ok(CartTree { nodes, max_depth })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Defaults to the training set size.
    pub draw_size: Option<usize>,
    pub seed: u64,
}

impl Default for CartConfig {
    fn default() -> Self {
        CartConfig {
            n_trees: 100,
            max_depth: 3,
            min_leaf: 1,
            draw_size: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CartEnsemble {
    pub task: Task,
    pub classes: Vec<String>,
    pub config: CartConfig,
    pub trees: Vec<CartTree>,
    pub samples: Vec<SampleSet>,
}

/// Bootstrap ensemble of CART trees. Tree `t` uses the same sample as tree
/// `t` of a clustering forest built with the same seed and draw size.
pub fn cart_ensemble(ds: &Dataset, config: &CartConfig) -> Result<CartEnsemble> {
    if config.n_trees == 0 {
        return Err(Error::Config("ensemble needs at least one tree".into()));
    }
    let draw = config.draw_size.unwrap_or(ds.n_rows());
    let built: Vec<(CartTree, SampleSet)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let sample = tree_bootstrap(ds, draw, config.seed, t);
            Ok((build_cart(ds, &sample, config.max_depth, config.min_leaf)?, sample))
        })
        .collect::<Result<_>>()?;
    let (trees, samples) = built.into_iter().unzip();
    Ok(CartEnsemble {
        task: ds.task(),
        classes: ds.classes().to_vec(),
        config: config.clone(),
        trees,
        samples,
    })
}

#[derive(Serialize, Deserialize)]
struct CartFile {
    format_version: u32,
    variant: String,
    task: Task,
    classes: Vec<String>,
    config: CartConfig,
    trees: Vec<CartTree>,
    sample_indices: Vec<Vec<usize>>,
}

pub const AXIS_SPLIT_VARIANT: &str = "axis_split";

impl CartEnsemble {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        persist::to_model_bytes(&CartFile {
            format_version: FORMAT_VERSION,
            variant: AXIS_SPLIT_VARIANT.into(),
            task: self.task,
            classes: self.classes.clone(),
            config: self.config.clone(),
            trees: self.trees.clone(),
            sample_indices: self.samples.iter().map(|s| s.indices.clone()).collect(),
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CartEnsemble> {
        let file: CartFile = persist::from_model_bytes(bytes)?;
        if file.variant != AXIS_SPLIT_VARIANT {
            return Err(Error::Format(format!(
                "expected an `{AXIS_SPLIT_VARIANT}` model, found `{}`",
                file.variant
            )));
        }
        Ok(CartEnsemble {
            task: file.task,
            classes: file.classes,
            config: file.config,
            trees: file.trees,
            samples: file
                .sample_indices
                .into_iter()
                .map(|indices| SampleSet { indices })
                .collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(xs: &[f64], ys: &[usize]) -> Dataset {
        Dataset::classification(
            xs.iter().map(|&x| vec![x]).collect(),
            ys.to_vec(),
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn all(ds: &Dataset) -> SampleSet {
        SampleSet {
            indices: (0..ds.n_rows()).collect(),
        }
    }

    #[test]
    fn pure_input_is_a_single_leaf() {
        let ds = labelled(&[1.0, 2.0, 3.0], &[1, 1, 1]);
        let t = build_cart(&ds, &all(&ds), 4, 1).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].payload, Some(Payload::Probs(vec![0.0, 1.0])));
    }

    #[test]
    fn separable_line_splits_once() {
        let ds = labelled(&[1.0, 2.0, 3.0, 10.0, 11.0], &[0, 0, 0, 1, 1]);
        let t = build_cart(&ds, &all(&ds), 4, 1).unwrap();
        assert_eq!(t.nodes.len(), 3);
        assert_eq!(t.nodes[0].feature, Some(0));
        assert_eq!(t.nodes[0].threshold, 6.5);
        assert_eq!(t.leaf_payload(&[0.0]), &Payload::Probs(vec![1.0, 0.0]));
        assert_eq!(t.leaf_payload(&[20.0]), &Payload::Probs(vec![0.0, 1.0]));
    }

    #[test]
    fn regression_uses_variance_reduction() {
        let ds = Dataset::regression(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![1.0, 1.0, 5.0, 5.0],
        )
        .unwrap();
        let t = build_cart(&ds, &all(&ds), 1, 1).unwrap();
        assert_eq!(t.nodes[0].threshold, 1.5);
        assert_eq!(t.leaf_payload(&[3.0]), &Payload::Mean(5.0));
    }

    #[test]
    fn min_leaf_blocks_small_children() {
        let ds = labelled(&[1.0, 2.0, 3.0, 4.0], &[0, 1, 1, 1]);
        let t = build_cart(&ds, &all(&ds), 3, 2).unwrap();
        assert!(t.nodes.iter().all(|n| n.n_samples >= 2));
    }
}
