//! Feature relevance weights and their sufficient statistics.
//!
//! Two relevance measures are supported:
//!
//! * Pearson correlation `|r_j|` between each feature and a real (or 0/1) label,
//! * the correlation ratio `eta_j^2 = SS_c / SS_T` between each feature and a
//!   class label.
//!
//! Both are computed from a small set of per-feature aggregates. Appending a
//! batch merges the batch's own aggregates into the stored ones, so an update
//! costs `O(n_new * d)` (times the class count for eta) and never touches the
//! rows already absorbed. Sums of squared deviations are merged with the
//! pairwise identity
//!
//! ```text
//! SS_tot = SS_a + SS_b + (mu_b - mu_a)^2 * n_a * n_b / (n_a + n_b)
//! ```
//!
//! which is algebraically the same as expanding both sides into raw sums of
//! squares but does not cancel catastrophically.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Task};
use crate::error::{Error, Result};

/// A feature whose sum of squared deviations is below this (scaled) bound is
/// treated as constant and gets weight 0.
fn is_degenerate(ss: f64, n: usize, mu: f64) -> bool {
    ss <= n as f64 * 1e-20 * mu.mul_add(mu, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMethod {
    Pearson,
    Eta,
}

impl std::str::FromStr for WeightMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(WeightMethod::Pearson),
            "eta" => Ok(WeightMethod::Eta),
            other => Err(Error::Config(format!("unknown weight method `{other}`"))),
        }
    }
}

/// Relevance values and their sum-to-one normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    #[serde(with = "crate::persist::f17_vec")]
    pub raw: Vec<f64>,
    #[serde(with = "crate::persist::f17_vec")]
    pub normalized: Vec<f64>,
    /// Set when every raw value was zero and the uniform `1/d` weights were used.
    pub uniform_fallback: bool,
}

impl FeatureWeights {
    pub fn uniform(d: usize) -> FeatureWeights {
        FeatureWeights {
            raw: vec![1.0; d],
            normalized: vec![1.0 / d as f64; d],
            uniform_fallback: false,
        }
    }

    /// Normalize nonnegative raw relevance values by their sum.
    pub fn from_raw(raw: Vec<f64>) -> FeatureWeights {
        debug_assert!(raw.iter().all(|&r| r >= 0.0));
        let total: f64 = raw.iter().sum();
        let d = raw.len();
        if total > 0.0 {
            let normalized = raw.iter().map(|r| r / total).collect();
            FeatureWeights {
                raw,
                normalized,
                uniform_fallback: false,
            }
        } else {
            FeatureWeights {
                raw,
                normalized: vec![1.0 / d as f64; d],
                uniform_fallback: true,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.normalized
    }
}

/// Per-feature mean and sum of squared deviations for a set of rows.
struct Moments {
    n: usize,
    mean: Vec<f64>,
    ss: Vec<f64>,
}

fn moments(ds: &Dataset, rows: &[usize]) -> Moments {
    let d = ds.n_features();
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(ds.row(i)) {
            *m += v;
        }
    }
    if n > 0 {
        mean.iter_mut().for_each(|m| *m /= n as f64);
    }
    let mut ss = vec![0.0; d];
    for &i in rows {
        for (j, v) in ds.row(i).iter().enumerate() {
            let dv = v - mean[j];
            ss[j] += dv * dv;
        }
    }
    Moments { n, mean, ss }
}

/// Merge `(n_b, mu_b, ss_b)` into `(n_a, mu_a, ss_a)`.
#[inline]
fn merge(n_a: usize, mu_a: f64, ss_a: f64, n_b: usize, mu_b: f64, ss_b: f64) -> (f64, f64) {
    if n_b == 0 {
        return (mu_a, ss_a);
    }
    if n_a == 0 {
        return (mu_b, ss_b);
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    let n = na + nb;
    let delta = mu_b - mu_a;
    (mu_a + delta * (nb / n), ss_a + ss_b + delta * delta * (na * nb / n))
}

fn check_width(expected: usize, ds: &Dataset) -> Result<()> {
    if ds.n_features() != expected {
        return Err(Error::Shape {
            expected,
            found: ds.n_features(),
        });
    }
    Ok(())
}

/// Sufficient statistics for Pearson feature weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PearsonState {
    pub n: usize,
    #[serde(with = "crate::persist::f17_vec")]
    pub mu_x: Vec<f64>,
    #[serde(with = "crate::persist::f17")]
    pub mu_y: f64,
    /// `sum_i x_ij * y_i`
    #[serde(with = "crate::persist::f17_vec")]
    pub sum_xy: Vec<f64>,
    /// `sum_i (x_ij - mu_j)^2`
    #[serde(with = "crate::persist::f17_vec")]
    pub ss_x: Vec<f64>,
    #[serde(with = "crate::persist::f17")]
    pub ss_y: f64,
}

fn label_moments(ds: &Dataset, rows: &[usize]) -> (f64, f64) {
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let mu = rows.iter().map(|&i| ds.label_value(i)).sum::<f64>() / rows.len() as f64;
    let ss = rows
        .iter()
        .map(|&i| {
            let dv = ds.label_value(i) - mu;
            dv * dv
        })
        .sum();
    (mu, ss)
}

fn cross_sums(ds: &Dataset, rows: &[usize]) -> Vec<f64> {
    let mut sxy = vec![0.0; ds.n_features()];
    for &i in rows {
        let y = ds.label_value(i);
        for (s, x) in sxy.iter_mut().zip(ds.row(i)) {
            *s += x * y;
        }
    }
    sxy
}

fn check_pearson_labels(ds: &Dataset) -> Result<()> {
    if ds.task() == Task::Classification && ds.n_classes() > 2 {
        return Err(Error::Config(format!(
            "pearson weights need a real or binary label, found {} classes",
            ds.n_classes()
        )));
    }
    Ok(())
}

/// Statistics over the rows `rows` of `ds` (repeats allowed).
pub fn pearson_stats(ds: &Dataset, rows: &[usize]) -> Result<PearsonState> {
    check_pearson_labels(ds)?;
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "pearson statistics need at least 2 rows, got {}",
            rows.len()
        )));
    }
    let m = moments(ds, rows);
    let (mu_y, ss_y) = label_moments(ds, rows);
    Ok(PearsonState {
        n: m.n,
        mu_x: m.mean,
        mu_y,
        sum_xy: cross_sums(ds, rows),
        ss_x: m.ss,
        ss_y,
    })
}

/// Absorb the rows `rows` of `batch`. Reads only the batch.
pub fn pearson_update(state: &PearsonState, batch: &Dataset, rows: &[usize]) -> Result<PearsonState> {
    check_width(state.mu_x.len(), batch)?;
    check_pearson_labels(batch)?;
    if rows.is_empty() {
        return Ok(state.clone());
    }
    let b = moments(batch, rows);
    let (mu_yb, ss_yb) = label_moments(batch, rows);
    let sxy_b = cross_sums(batch, rows);
    let d = state.mu_x.len();
    let mut mu_x = Vec::with_capacity(d);
    let mut ss_x = Vec::with_capacity(d);
    for j in 0..d {
        let (mu, ss) = merge(state.n, state.mu_x[j], state.ss_x[j], b.n, b.mean[j], b.ss[j]);
        mu_x.push(mu);
        ss_x.push(ss);
    }
    let (mu_y, ss_y) = merge(state.n, state.mu_y, state.ss_y, b.n, mu_yb, ss_yb);
    Ok(PearsonState {
        n: state.n + b.n,
        mu_x,
        mu_y,
        sum_xy: state.sum_xy.iter().zip(&sxy_b).map(|(a, b)| a + b).collect(),
        ss_x,
        ss_y,
    })
}

impl PearsonState {
    /// Signed correlation of each feature with the label; 0 where undefined.
    pub fn correlations(&self) -> Vec<f64> {
        let n = self.n as f64;
        let label_flat = is_degenerate(self.ss_y, self.n, self.mu_y);
        (0..self.mu_x.len())
            .map(|j| {
                if label_flat || is_degenerate(self.ss_x[j], self.n, self.mu_x[j]) {
                    return 0.0;
                }
                let cov = self.sum_xy[j] - n * self.mu_x[j] * self.mu_y;
                (cov / (self.ss_x[j].sqrt() * self.ss_y.sqrt())).clamp(-1.0, 1.0)
            })
            .collect()
    }
}

/// `raw_j = |r_j|`, normalized to sum to one.
pub fn pearson_weights(state: &PearsonState) -> FeatureWeights {
    FeatureWeights::from_raw(state.correlations().iter().map(|r| r.abs()).collect())
}

/// Sufficient statistics for correlation-ratio feature weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaState {
    pub n: usize,
    #[serde(with = "crate::persist::f17_vec")]
    pub mu_x: Vec<f64>,
    /// Rows per class.
    pub class_counts: Vec<usize>,
    /// Per-class feature means, indexed `[feature][class]`.
    #[serde(with = "crate::persist::f17_mat")]
    pub mu_xc: Vec<Vec<f64>>,
    /// Total sum of squared deviations per feature.
    #[serde(with = "crate::persist::f17_vec")]
    pub ss_t: Vec<f64>,
}

fn class_moments(
    ds: &Dataset,
    rows: &[usize],
    n_classes: usize,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let d = ds.n_features();
    let mut counts = vec![0usize; n_classes];
    let mut sums = vec![vec![0.0; n_classes]; d];
    for &i in rows {
        let c = ds.class_of(i);
        if c >= n_classes {
            return Err(Error::ClassCatalog {
                index: c,
                n_classes,
            });
        }
        counts[c] += 1;
        for (j, v) in ds.row(i).iter().enumerate() {
            sums[j][c] += v;
        }
    }
    for row in &mut sums {
        for (s, &c) in row.iter_mut().zip(&counts) {
            if c > 0 {
                *s /= c as f64;
            }
        }
    }
    Ok((counts, sums))
}

fn require_classes(ds: &Dataset) -> Result<()> {
    if ds.task() != Task::Classification {
        return Err(Error::Config("eta weights need class labels".into()));
    }
    Ok(())
}

pub fn eta_stats(ds: &Dataset, rows: &[usize], n_classes: usize) -> Result<EtaState> {
    require_classes(ds)?;
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "eta statistics need at least 2 rows, got {}",
            rows.len()
        )));
    }
    let m = moments(ds, rows);
    let (class_counts, mu_xc) = class_moments(ds, rows, n_classes)?;
    Ok(EtaState {
        n: m.n,
        mu_x: m.mean,
        class_counts,
        mu_xc,
        ss_t: m.ss,
    })
}

pub fn eta_update(state: &EtaState, batch: &Dataset, rows: &[usize]) -> Result<EtaState> {
    check_width(state.mu_x.len(), batch)?;
    require_classes(batch)?;
    let n_classes = state.class_counts.len();
    if rows.is_empty() {
        return Ok(state.clone());
    }
    let b = moments(batch, rows);
    let (counts_b, mu_xc_b) = class_moments(batch, rows, n_classes)?;
    let d = state.mu_x.len();
    let mut mu_x = Vec::with_capacity(d);
    let mut ss_t = Vec::with_capacity(d);
    let mut mu_xc = Vec::with_capacity(d);
    for j in 0..d {
        let (mu, ss) = merge(state.n, state.mu_x[j], state.ss_t[j], b.n, b.mean[j], b.ss[j]);
        mu_x.push(mu);
        ss_t.push(ss);
        mu_xc.push(
            (0..n_classes)
                .map(|l| {
                    merge(
                        state.class_counts[l],
                        state.mu_xc[j][l],
                        0.0,
                        counts_b[l],
                        mu_xc_b[j][l],
                        0.0,
                    )
                    .0
                })
                .collect(),
        );
    }
    Ok(EtaState {
        n: state.n + b.n,
        mu_x,
        class_counts: state
            .class_counts
            .iter()
            .zip(&counts_b)
            .map(|(a, b)| a + b)
            .collect(),
        mu_xc,
        ss_t,
    })
}

impl EtaState {
    /// Between-class sum of squares per feature.
    pub fn ss_c(&self) -> Vec<f64> {
        self.mu_xc
            .iter()
            .zip(&self.mu_x)
            .map(|(means, mu)| {
                means
                    .iter()
                    .zip(&self.class_counts)
                    .map(|(m, &c)| c as f64 * (m - mu) * (m - mu))
                    .sum()
            })
            .collect()
    }

    /// `eta_j^2 = SS_c / SS_T`, 0 for constant features.
    pub fn eta_squared(&self) -> Vec<f64> {
        self.ss_c()
            .iter()
            .enumerate()
            .map(|(j, ssc)| {
                if is_degenerate(self.ss_t[j], self.n, self.mu_x[j]) {
                    0.0
                } else {
                    (ssc / self.ss_t[j]).clamp(0.0, 1.0)
                }
            })
            .collect()
    }
}

pub fn eta_weights(state: &EtaState) -> FeatureWeights {
    FeatureWeights::from_raw(state.eta_squared())
}

/// Sufficient statistics for either weight method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum WeightState {
    Pearson(PearsonState),
    Eta(EtaState),
}

impl WeightState {
    pub fn compute(method: WeightMethod, ds: &Dataset, rows: &[usize]) -> Result<WeightState> {
        match method {
            WeightMethod::Pearson => pearson_stats(ds, rows).map(WeightState::Pearson),
            WeightMethod::Eta => eta_stats(ds, rows, ds.n_classes()).map(WeightState::Eta),
        }
    }

    pub fn update(&self, batch: &Dataset, rows: &[usize]) -> Result<WeightState> {
        match self {
            WeightState::Pearson(s) => pearson_update(s, batch, rows).map(WeightState::Pearson),
            WeightState::Eta(s) => eta_update(s, batch, rows).map(WeightState::Eta),
        }
    }

    pub fn weights(&self) -> FeatureWeights {
        match self {
            WeightState::Pearson(s) => pearson_weights(s),
            WeightState::Eta(s) => eta_weights(s),
        }
    }

    pub fn method(&self) -> WeightMethod {
        match self {
            WeightState::Pearson(_) => WeightMethod::Pearson,
            WeightState::Eta(_) => WeightMethod::Eta,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            WeightState::Pearson(s) => s.n,
            WeightState::Eta(s) => s.n,
        }
    }

    /// Field values in a fixed order, for field-by-field comparison.
    pub fn fields(&self) -> Vec<f64> {
        match self {
            WeightState::Pearson(s) => std::iter::once(s.n as f64)
                .chain(s.mu_x.iter().copied())
                .chain([s.mu_y])
                .chain(s.sum_xy.iter().copied())
                .chain(s.ss_x.iter().copied())
                .chain([s.ss_y])
                .collect(),
            WeightState::Eta(s) => std::iter::once(s.n as f64)
                .chain(s.mu_x.iter().copied())
                .chain(s.class_counts.iter().map(|&c| c as f64))
                .chain(s.mu_xc.iter().flatten().copied())
                .chain(s.ss_t.iter().copied())
                .collect(),
        }
    }

    /// Largest field-wise relative deviation `|a - b| / max(|a|, |b|)`.
    /// Returns infinity when the two states have different shapes or methods.
    pub fn max_relative_deviation(&self, other: &WeightState) -> f64 {
        let (a, b) = (self.fields(), other.fields());
        if self.method() != other.method() || a.len() != b.len() {
            return f64::INFINITY;
        }
        a.iter()
            .zip(&b)
            .map(|(&x, &y)| relative_deviation(x, y))
            .fold(0.0, f64::max)
    }
}

pub fn relative_deviation(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
