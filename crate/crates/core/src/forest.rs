//! Clustering trees and the retrainable forest built from them.
//!
//! Every internal node is split by weighted k-means over the rows that reach
//! it; its children store their (unweighted) cluster centroids. A forest
//! keeps each tree's bootstrap sample and weight statistics so that
//! [`retrain_forest`] can fold in a new batch without recomputing weights
//! over the old rows.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    count_distinct, supervised_kmeans, KMeansParams, NoiseConfig,
};
use crate::data::{draw_with_replacement, Dataset, NormParams, SampleSet, Task};
use crate::error::{Error, Result};
use crate::feature_weights::{FeatureWeights, WeightMethod, WeightState};
use crate::persist::{self, FORMAT_VERSION};
use crate::rng::{derive_seed, rng_from_seed, tag};

/// Label information stored at a leaf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    /// Relative class frequencies.
    Probs(#[serde(with = "crate::persist::f17_vec")] Vec<f64>),
    /// Mean label.
    Mean(#[serde(with = "crate::persist::f17")] f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(with = "crate::persist::f17_vec")]
    pub centroid: Vec<f64>,
    pub children: Vec<usize>,
    pub payload: Option<Payload>,
    pub depth: usize,
    /// Training rows (with multiplicity) that reached this node.
    pub n_samples: usize,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A clustering tree stored as a node arena; node 0 is the root and nodes
/// appear in breadth-first order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub weights: FeatureWeights,
    pub k: usize,
    pub max_depth: usize,
}

impl Tree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Node ids from the root to the leaf reached by `x`.
    pub fn path(&self, x: &[f64]) -> Vec<usize> {
        let w = self.weights.as_slice();
        let mut id = 0;
        let mut path = vec![0];
        loop {
            let node = &self.nodes[id];
            if node.is_leaf() {
                return path;
            }
            let pick = nearest_child(x, &self.nodes, &node.children, w);
            id = node.children[pick];
            path.push(id);
        }
    }

    pub fn leaf_id(&self, x: &[f64]) -> usize {
        let w = self.weights.as_slice();
        let mut id = 0;
        while !self.nodes[id].is_leaf() {
            let node = &self.nodes[id];
            id = node.children[nearest_child(x, &self.nodes, &node.children, w)];
        }
        id
    }

    pub fn leaf_payload(&self, x: &[f64]) -> &Payload {
        self.nodes[self.leaf_id(x)]
            .payload
            .as_ref()
            .expect("leaves carry payloads")
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

fn nearest_child(x: &[f64], nodes: &[TreeNode], children: &[usize], w: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &c) in children.iter().enumerate() {
        let d = crate::clustering::wdist(x, &nodes[c].centroid, w);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

pub fn leaf_label_regression(ys: &[f64]) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::EmptyInput("leaf has no labels".into()));
    }
    Ok(ys.iter().sum::<f64>() / ys.len() as f64)
}

/// Relative class frequencies, optionally through the additive count-error
/// model: each count moves by a uniform amount in `[-eps4, eps4]`, is
/// clamped at zero, and the result is renormalized.
pub fn leaf_label_classification(
    labels: &[usize],
    n_classes: usize,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("leaf has no labels".into()));
    }
    let mut counts = vec![0.0; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::ClassCatalog {
                index: l,
                n_classes,
            });
        }
        counts[l] += 1.0;
    }
    if noise.eps4 > 0.0 {
        let mut rng = rng_from_seed(derive_seed(noise.seed, tag::LEAF, seed));
        let exact = counts.clone();
        for c in &mut counts {
            *c = (*c + rng.gen_range(-1.0..=1.0) * noise.eps4).max(0.0);
        }
        if counts.iter().sum::<f64>() <= 0.0 {
            counts = exact;
        }
    }
    let total: f64 = counts.iter().sum();
    Ok(counts.iter().map(|c| c / total).collect())
}

/// Per-tree growth parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Clusters per split.
    pub k: usize,
    pub max_depth: usize,
    /// Nodes with fewer rows than this are not split.
    pub min_leaf: usize,
    pub max_iter: usize,
    #[serde(with = "crate::persist::f17")]
    pub tol: f64,
    pub noise: NoiseConfig,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            k: 2,
            max_depth: 2,
            min_leaf: 1,
            max_iter: 1000,
            tol: 1e-6,
            noise: NoiseConfig::exact(),
        }
    }
}

fn make_payload(
    ds: &Dataset,
    rows: &[usize],
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Payload> {
    match ds.task() {
        Task::Classification => {
            let labels: Vec<usize> = rows.iter().map(|&i| ds.class_of(i)).collect();
            leaf_label_classification(&labels, ds.n_classes(), noise, seed).map(Payload::Probs)
        }
        Task::Regression => {
            let ys: Vec<f64> = rows.iter().map(|&i| ds.label_value(i)).collect();
            leaf_label_regression(&ys).map(Payload::Mean)
        }
    }
}

fn mean_row(ds: &Dataset, rows: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; ds.n_features()];
    for &i in rows {
        for (s, v) in c.iter_mut().zip(ds.row(i)) {
            *s += v;
        }
    }
    c.iter_mut().for_each(|s| *s /= rows.len() as f64);
    c
}

/// Grow one tree over the sampled rows of `ds`.
pub fn build_tree(
    ds: &Dataset,
    sample: &SampleSet,
    weights: FeatureWeights,
    params: &TreeParams,
    seed: u64,
) -> Result<Tree> {
    if sample.is_empty() {
        return Err(Error::EmptyInput("tree sample is empty".into()));
    }
    if weights.len() != ds.n_features() {
        return Err(Error::Shape {
            expected: ds.n_features(),
            found: weights.len(),
        });
    }
    let kmeans = KMeansParams {
        k: params.k,
        max_iter: params.max_iter,
        tol: params.tol,
    };
    let mut nodes = vec![TreeNode {
        centroid: mean_row(ds, &sample.indices),
        children: Vec::new(),
        payload: None,
        depth: 0,
        n_samples: sample.len(),
    }];
    let mut queue: VecDeque<(usize, Vec<usize>)> = VecDeque::new();
    queue.push_back((0, sample.indices.clone()));

    while let Some((id, rows)) = queue.pop_front() {
        let node_seed = derive_seed(seed, tag::NODE, id as u64);
        let depth = nodes[id].depth;
        let mut groups: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
        if depth < params.max_depth && rows.len() >= params.min_leaf.max(2) && params.k >= 2 {
            let points: Vec<&[f64]> = rows.iter().map(|&i| ds.row(i)).collect();
            if count_distinct(&points, &weights, params.k) >= params.k {
                let noise = params.noise.reseeded(node_seed);
                match supervised_kmeans(&points, &weights, &kmeans, &noise, node_seed) {
                    Ok(fit) => {
                        let mut members = vec![Vec::new(); params.k];
                        for (&r, &a) in rows.iter().zip(&fit.assignment) {
                            members[a].push(r);
                        }
                        groups = fit
                            .centroids
                            .centers
                            .into_iter()
                            .zip(members)
                            .filter(|(_, m)| !m.is_empty())
                            .collect();
                    }
                    Err(Error::InsufficientPoints { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        if groups.len() < 2 {
            nodes[id].payload = Some(make_payload(ds, &rows, &params.noise, node_seed)?);
            continue;
        }
        for (centroid, members) in groups {
            let child = nodes.len();
            nodes.push(TreeNode {
                centroid,
                children: Vec::new(),
                payload: None,
                depth: depth + 1,
                n_samples: members.len(),
            });
            nodes[id].children.push(child);
            queue.push_back((child, members));
        }
    }
    Ok(Tree {
        nodes,
        weights,
        k: params.k,
        max_depth: params.max_depth,
    })
}

/// Forest-level configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub tree: TreeParams,
    pub weight_method: WeightMethod,
    /// Cluster with the feature weights (true) or plain Euclidean distance.
    pub use_weights: bool,
    /// Bootstrap draw per tree; defaults to the training set size.
    pub draw_size: Option<usize>,
    /// Draw from each retraining batch; defaults to the batch size.
    pub draw_size_new: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            tree: TreeParams::default(),
            weight_method: WeightMethod::Eta,
            use_weights: true,
            draw_size: None,
            draw_size_new: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        if self.tree.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        self.tree.noise.validate()?;
        match (self.weight_method, ds.task()) {
            (WeightMethod::Pearson, Task::Classification) if ds.n_classes() > 2 => {
                Err(Error::Config(format!(
                    "pearson weights support regression or binary labels, found {} classes",
                    ds.n_classes()
                )))
            }
            (WeightMethod::Eta, Task::Regression) => {
                Err(Error::Config("eta weights need class labels".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Seed for tree `t` of a forest built with `master`.
pub fn tree_seed(master: u64, t: usize) -> u64 {
    derive_seed(master, tag::TREE, t as u64)
}

/// The bootstrap sample of tree `t`; shared with the baseline ensemble so
/// both consume identical rows.
pub fn tree_bootstrap(ds: &Dataset, draw_size: usize, master: u64, t: usize) -> SampleSet {
    let mut rng = rng_from_seed(derive_seed(tree_seed(master, t), tag::BOOTSTRAP, 0));
    SampleSet {
        indices: draw_with_replacement(ds.n_rows(), draw_size, &mut rng),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub task: Task,
    pub classes: Vec<String>,
    pub feature_names: Vec<String>,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
    pub weight_states: Vec<WeightState>,
    /// Stored training multiset of each tree, as row indices into the
    /// cumulative training data (initial rows followed by every batch).
    pub samples: Vec<SampleSet>,
    /// Rows in the cumulative training data.
    pub n_rows_seen: usize,
    /// Normalization fitted on the initial training data, if any.
    pub norm: Option<NormParams>,
}

impl Forest {
    pub fn n_features(&self) -> usize {
        self.trees[0].weights.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }
}

pub fn build_forest(ds: &Dataset, config: &ForestConfig) -> Result<Forest> {
    config.validate(ds)?;
    let draw = config.draw_size.unwrap_or(ds.n_rows());
    if draw < 2 {
        return Err(Error::Config(format!(
            "bootstrap draw of {draw} rows is too small for weight statistics"
        )));
    }
    let built: Vec<(Tree, WeightState, SampleSet)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let sample = tree_bootstrap(ds, draw, config.seed, t);
            let state = WeightState::compute(config.weight_method, ds, &sample.indices)?;
            let weights = tree_weights(config, &state, ds.n_features());
            let seed = derive_seed(tree_seed(config.seed, t), tag::NODE, 0);
            let tree = build_tree(ds, &sample, weights, &config.tree, seed)?;
            Ok((tree, state, sample))
        })
        .collect::<Result<_>>()?;
    Ok(assemble(ds, config.clone(), built, ds.n_rows()))
}

fn tree_weights(config: &ForestConfig, state: &WeightState, d: usize) -> FeatureWeights {
    if config.use_weights {
        state.weights()
    } else {
        FeatureWeights::uniform(d)
    }
}

fn assemble(
    ds: &Dataset,
    config: ForestConfig,
    built: Vec<(Tree, WeightState, SampleSet)>,
    n_rows_seen: usize,
) -> Forest {
    let mut trees = Vec::with_capacity(built.len());
    let mut weight_states = Vec::with_capacity(built.len());
    let mut samples = Vec::with_capacity(built.len());
    for (t, s, m) in built {
        trees.push(t);
        weight_states.push(s);
        samples.push(m);
    }
    Forest {
        task: ds.task(),
        classes: ds.classes().to_vec(),
        feature_names: ds.feature_names().to_vec(),
        config,
        trees,
        weight_states,
        samples,
        n_rows_seen,
        norm: None,
    }
}

/// Fold a new batch into every tree.
///
/// `ds_old` must be the cumulative training data the forest was trained on
/// (its stored sample indices point into it). For each tree, a bootstrap
/// draw from `ds_new` updates the tree's weight statistics using only the
/// new rows, and the tree is regrown from the root on the old sample plus
/// the new draw. Sample indices of the result point into
/// `ds_old.concat(ds_new)`.
pub fn retrain_forest(f: &Forest, ds_old: &Dataset, ds_new: &Dataset, seed: u64) -> Result<Forest> {
    if ds_old.n_rows() != f.n_rows_seen {
        return Err(Error::Config(format!(
            "forest was trained on {} rows but the supplied history has {}",
            f.n_rows_seen,
            ds_old.n_rows()
        )));
    }
    ds_old
        .check_schema(ds_new)
        .map_err(|e| Error::Config(format!("new batch does not match the training schema: {e}")))?;
    let all = ds_old.concat(ds_new)?;
    let offset = ds_old.n_rows();
    let draw_new = f.config.draw_size_new.unwrap_or(ds_new.n_rows());
    let config = &f.config;
    let built: Vec<(Tree, WeightState, SampleSet)> = (0..f.trees.len())
        .into_par_iter()
        .map(|t| {
            let ts = tree_seed(seed, t);
            let mut rng = rng_from_seed(derive_seed(ts, tag::RETRAIN_DRAW, 0));
            let fresh = draw_with_replacement(ds_new.n_rows(), draw_new, &mut rng);
            let state = f.weight_states[t].update(ds_new, &fresh)?;
            let mut indices = f.samples[t].indices.clone();
            indices.extend(fresh.iter().map(|i| i + offset));
            let sample = SampleSet { indices };
            let weights = tree_weights(config, &state, all.n_features());
            let tree = build_tree(&all, &sample, weights, &config.tree, derive_seed(ts, tag::NODE, 0))?;
            Ok((tree, state, sample))
        })
        .collect::<Result<_>>()?;
    let mut out = assemble(&all, f.config.clone(), built, all.n_rows());
    out.classes = f.classes.clone();
    out.norm = f.norm.clone();
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format_version: u32,
    variant: String,
    task: Task,
    classes: Vec<String>,
    feature_names: Vec<String>,
    config: ForestConfig,
    n_rows_seen: usize,
    norm: Option<NormParams>,
    trees: Vec<Tree>,
    weight_states: Vec<WeightState>,
    sample_indices: Vec<Vec<usize>>,
}

pub const CLUSTER_VARIANT: &str = "cluster";

impl Forest {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        persist::to_model_bytes(&ForestFile {
            format_version: FORMAT_VERSION,
            variant: CLUSTER_VARIANT.into(),
            task: self.task,
            classes: self.classes.clone(),
            feature_names: self.feature_names.clone(),
            config: self.config.clone(),
            n_rows_seen: self.n_rows_seen,
            norm: self.norm.clone(),
            trees: self.trees.clone(),
            weight_states: self.weight_states.clone(),
            sample_indices: self.samples.iter().map(|s| s.indices.clone()).collect(),
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Forest> {
        let file: ForestFile = persist::from_model_bytes(bytes)?;
        if file.variant != CLUSTER_VARIANT {
            return Err(Error::Format(format!(
                "expected a `{CLUSTER_VARIANT}` model, found `{}`",
                file.variant
            )));
        }
        if file.trees.is_empty()
            || file.trees.len() != file.weight_states.len()
            || file.trees.len() != file.sample_indices.len()
        {
            return Err(Error::Format("tree, weight and sample counts disagree".into()));
        }
        Ok(Forest {
            task: file.task,
            classes: file.classes,
            feature_names: file.feature_names,
            config: file.config,
            trees: file.trees,
            weight_states: file.weight_states,
            samples: file
                .sample_indices
                .into_iter()
                .map(|indices| SampleSet { indices })
                .collect(),
            n_rows_seen: file.n_rows_seen,
            norm: file.norm,
        })
    }
}

pub fn save_model(f: &Forest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, f.to_bytes()?).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Forest> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Forest::from_bytes(&bytes)
}
