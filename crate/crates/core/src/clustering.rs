//! Weighted k-means with k-means++ seeding and an optional error model for
//! the distance and count estimates a quantum implementation would make.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_weights::FeatureWeights;
use crate::rng::{derive_seed, rng_from_seed, tag, Rng};

/// Estimation error knobs. The all-zero configuration is exact arithmetic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Multiplicative distance error bound: each distance is scaled by a
    /// uniform factor in `[1 - eps1, 1 + eps1]`.
    #[serde(with = "crate::persist::f17")]
    pub eps1: f64,
    /// Probability that a distance estimate fails, doubling its error range.
    #[serde(with = "crate::persist::f17")]
    pub delta_fail: f64,
    /// Near-tie window: any centroid whose noisy distance is within this of
    /// the minimum may be chosen, uniformly at random.
    #[serde(with = "crate::persist::f17")]
    pub delta_tie: f64,
    /// Additive centroid perturbation bound, off by default.
    #[serde(with = "crate::persist::f17")]
    pub eps2: f64,
    /// Additive error bound on per-class leaf counts.
    #[serde(with = "crate::persist::f17")]
    pub eps4: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn exact() -> NoiseConfig {
        NoiseConfig::default()
    }

    pub fn is_exact(&self) -> bool {
        self.eps1 == 0.0
            && self.delta_fail == 0.0
            && self.delta_tie == 0.0
            && self.eps2 == 0.0
            && self.eps4 == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [
            ("eps1", self.eps1),
            ("delta_tie", self.delta_tie),
            ("eps2", self.eps2),
            ("eps4", self.eps4),
        ];
        for (name, v) in bounds {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("noise bound {name} must be finite and >= 0")));
            }
        }
        if !(0.0..0.5).contains(&self.delta_fail) {
            return Err(Error::Config("noise delta_fail must lie in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// The same knobs with a seed mixed for one particular call site.
    pub(crate) fn reseeded(&self, seed: u64) -> NoiseConfig {
        NoiseConfig {
            seed: derive_seed(self.seed, tag::NOISE, seed),
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Centroids {
    pub centers: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl Centroids {
    pub fn new(centers: Vec<Vec<f64>>) -> Centroids {
        Centroids {
            centers,
            iterations: 0,
            converged: false,
        }
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }
}

/// `sum_j w_j (x_j - c_j)^2`.
pub fn weighted_sq_distance(x: &[f64], c: &[f64], w: &FeatureWeights) -> Result<f64> {
    if x.len() != c.len() {
        return Err(Error::Shape {
            expected: x.len(),
            found: c.len(),
        });
    }
    if w.len() != x.len() {
        return Err(Error::Shape {
            expected: x.len(),
            found: w.len(),
        });
    }
    Ok(wdist(x, c, w.as_slice()))
}

#[inline]
pub(crate) fn wdist(x: &[f64], c: &[f64], w: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), c.len());
    x.iter()
        .zip(c)
        .zip(w)
        .map(|((a, b), wj)| {
            let d = a - b;
            wj * d * d
        })
        .sum()
}

/// Nearest center under `w`; ties go to the lowest index.
#[inline]
pub(crate) fn nearest(x: &[f64], centers: &[Vec<f64>], w: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (l, c) in centers.iter().enumerate() {
        let d = wdist(x, c, w);
        if d < best_d {
            best_d = d;
            best = l;
        }
    }
    best
}

/// Two points are indistinguishable when they agree on every positively weighted feature.
fn same_under(a: &[f64], b: &[f64], w: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .zip(w)
        .all(|((x, y), wj)| *wj <= 0.0 || x == y)
}

/// Number of points distinguishable under `w`, counting at most `cap`.
pub fn count_distinct(points: &[&[f64]], w: &FeatureWeights, cap: usize) -> usize {
    let mut reps: Vec<&[f64]> = Vec::with_capacity(cap);
    for &p in points {
        if !reps.iter().any(|r| same_under(r, p, w.as_slice())) {
            reps.push(p);
            if reps.len() >= cap {
                break;
            }
        }
    }
    reps.len()
}

/// k-means++ seeding: D^2 sampling under the weighted distance.
pub fn kmeanspp_init(
    points: &[&[f64]],
    k: usize,
    w: &FeatureWeights,
    seed: u64,
) -> Result<Centroids> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let found = count_distinct(points, w, k);
    if found < k {
        return Err(Error::InsufficientPoints { needed: k, found });
    }
    let w = w.as_slice();
    let mut rng = rng_from_seed(seed);
    let first = rng.gen_range(0..points.len());
    let mut centers = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| wdist(p, &centers[0], w)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        debug_assert!(total > 0.0, "distinct points must leave D^2 mass");
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let pick = pick.ok_or(Error::InsufficientPoints {
            needed: k,
            found: centers.len(),
        })?;
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(wdist(p, &c, w));
        }
        centers.push(c);
    }
    Ok(Centroids::new(centers))
}

/// Exact nearest-centroid assignment, lowest index on ties.
pub fn assign_exact(points: &[&[f64]], centroids: &Centroids, w: &FeatureWeights) -> Vec<usize> {
    points
        .iter()
        .map(|p| nearest(p, &centroids.centers, w.as_slice()))
        .collect()
}

/// Nearest-centroid assignment through the error model in `noise`.
///
/// Distances are scaled by independent factors `1 + u * eps1`, `u` uniform
/// in `[-1, 1]`, with the range doubled on a failed estimate (probability
/// `delta_fail`). With `delta_tie > 0`, the choice is uniform over all
/// centroids within `delta_tie` of the noisy minimum. No random numbers are
/// drawn for knobs that are zero, so the exact configuration reproduces
/// [`assign_exact`] bit for bit.
pub fn assign(
    points: &[&[f64]],
    centroids: &Centroids,
    w: &FeatureWeights,
    noise: &NoiseConfig,
) -> Vec<usize> {
    let w = w.as_slice();
    let mut rng = rng_from_seed(noise.seed);
    let mut dist = vec![0.0; centroids.k()];
    let mut ties = Vec::with_capacity(centroids.k());
    points
        .iter()
        .map(|p| {
            for (d, c) in dist.iter_mut().zip(&centroids.centers) {
                *d = wdist(p, c, w);
                if noise.eps1 > 0.0 {
                    let mut width = noise.eps1;
                    if noise.delta_fail > 0.0 && rng.gen::<f64>() < noise.delta_fail {
                        width *= 2.0;
                    }
                    *d *= 1.0 + rng.gen_range(-1.0..=1.0) * width;
                }
            }
            let mut best = 0;
            for (l, &d) in dist.iter().enumerate() {
                if d < dist[best] {
                    best = l;
                }
            }
            if noise.delta_tie > 0.0 {
                ties.clear();
                let bound = dist[best] + noise.delta_tie;
                ties.extend((0..dist.len()).filter(|&l| dist[l] <= bound));
                if ties.len() > 1 {
                    best = ties[rng.gen_range(0..ties.len())];
                }
            }
            best
        })
        .collect()
}

/// Recompute each centroid as the mean of its points.
///
/// An empty cluster is reseeded at the point farthest (weighted) from the
/// populated centroid nearest to its old position. Points already used as
/// reseeds in the same call are skipped.
pub fn update_centroids(
    points: &[&[f64]],
    assignment: &[usize],
    k: usize,
    prev: &Centroids,
    w: &FeatureWeights,
) -> Centroids {
    let d = prev.centers.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    let mut centers: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c > 0 {
                s.into_iter().map(|v| v / c as f64).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    let ws = w.as_slice();
    let mut populated: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
    let mut used = vec![false; points.len()];
    for l in 0..k {
        if populated[l] {
            continue;
        }
        let anchor = (0..k)
            .filter(|&m| populated[m])
            .min_by(|&a, &b| {
                wdist(&prev.centers[l], &centers[a], ws)
                    .total_cmp(&wdist(&prev.centers[l], &centers[b], ws))
            });
        let Some(anchor) = anchor else {
            centers[l] = prev.centers[l].clone();
            continue;
        };
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if used[i] {
                continue;
            }
            let dd = wdist(p, &centers[anchor], ws);
            if dd > far_d {
                far_d = dd;
                far = Some(i);
            }
        }
        match far {
            Some(i) => {
                used[i] = true;
                centers[l] = points[i].to_vec();
            }
            None => centers[l] = prev.centers[l].clone(),
        }
        populated[l] = true;
    }
    Centroids {
        centers,
        iterations: prev.iterations,
        converged: false,
    }
}

/// Total weighted squared distance of points to their assigned centroids.
pub fn weighted_inertia(
    points: &[&[f64]],
    assignment: &[usize],
    centroids: &Centroids,
    w: &FeatureWeights,
) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| wdist(p, &centroids.centers[a], w.as_slice()))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    /// Iteration cap.
    pub max_iter: usize,
    /// Stop once no centroid coordinate moves by this much or more.
    #[serde(with = "crate::persist::f17")]
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 2,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub centroids: Centroids,
    pub assignment: Vec<usize>,
    /// Inertia after the initial assignment and after every (update, assign) pair.
    pub inertia_trace: Vec<f64>,
}

/// Weighted Lloyd iteration from k-means++ seeds.
pub fn supervised_kmeans(
    points: &[&[f64]],
    w: &FeatureWeights,
    params: &KMeansParams,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<KMeansFit> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points to cluster".into()));
    }
    let init = kmeanspp_init(points, params.k, w, derive_seed(seed, tag::NODE, 0))?;
    Ok(lloyd(points, w, init, params, noise, seed))
}

/// Weighted Lloyd iteration from the given initial centroids.
pub fn lloyd(
    points: &[&[f64]],
    w: &FeatureWeights,
    init: Centroids,
    params: &KMeansParams,
    noise: &NoiseConfig,
    seed: u64,
) -> KMeansFit {
    let k = init.k();
    let mut perturb_rng: Option<Rng> =
        (noise.eps2 > 0.0).then(|| rng_from_seed(derive_seed(noise.seed, tag::NOISE, seed)));
    let assign_with = |c: &Centroids, it: u64| {
        assign(points, c, w, &noise.reseeded(derive_seed(seed, tag::NODE, it + 1)))
    };
    let mut centroids = init;
    let mut assignment = assign_with(&centroids, 0);
    let mut trace = vec![weighted_inertia(points, &assignment, &centroids, w)];
    for it in 0..params.max_iter {
        let mut next = update_centroids(points, &assignment, k, &centroids, w);
        if let Some(rng) = perturb_rng.as_mut() {
            for v in next.centers.iter_mut().flatten() {
                *v += rng.gen_range(-1.0..=1.0) * noise.eps2;
            }
        }
        let shift = centroids
            .centers
            .iter()
            .flatten()
            .zip(next.centers.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        next.iterations = it + 1;
        centroids = next;
        assignment = assign_with(&centroids, it as u64 + 1);
        trace.push(weighted_inertia(points, &assignment, &centroids, w));
        if shift < params.tol {
            centroids.converged = true;
            break;
        }
    }
    KMeansFit {
        centroids,
        assignment,
        inertia_trace: trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    fn w(v: &[f64]) -> FeatureWeights {
        FeatureWeights::from_raw(v.to_vec())
    }

    #[test]
    fn distance_examples() {
        let one = w(&[1.0, 0.0]);
        assert_eq!(weighted_sq_distance(&[3.0, 7.0], &[0.0, 0.0], &one).unwrap(), 9.0);
        assert_eq!(weighted_sq_distance(&[3.0, 7.0], &[3.0, 7.0], &one).unwrap(), 0.0);
        let q = w(&[0.25, 0.75]);
        assert_eq!(weighted_sq_distance(&[1.0, 2.0], &[0.0, 0.0], &q).unwrap(), 3.25);
        assert!(weighted_sq_distance(&[1.0], &[0.0, 0.0], &q).is_err());
    }

    #[test]
    fn uniform_weights_scale_euclidean() {
        let u = FeatureWeights::uniform(3);
        let d = weighted_sq_distance(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], &u).unwrap();
        assert!((d - 14.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn init_with_k_equal_distinct_points_selects_all() {
        let pts = vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0], vec![5.0, 0.0]];
        let u = FeatureWeights::uniform(2);
        for seed in 0..20 {
            let c = kmeanspp_init(&refs(&pts), 3, &u, seed).unwrap();
            let mut got = c.centers.clone();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, vec![vec![0.0, 0.0], vec![0.0, 5.0], vec![5.0, 0.0]]);
        }
        assert!(matches!(
            kmeanspp_init(&refs(&pts), 4, &u, 0),
            Err(Error::InsufficientPoints { needed: 4, found: 3 })
        ));
    }

    #[test]
    fn zero_weight_features_do_not_count_as_distinct() {
        let pts = vec![vec![0.0, 1.0], vec![0.0, 2.0]];
        assert_eq!(count_distinct(&refs(&pts), &w(&[1.0, 0.0]), 5), 1);
        assert_eq!(count_distinct(&refs(&pts), &w(&[1.0, 1.0]), 5), 2);
    }

    #[test]
    fn single_centroid_takes_everything() {
        let pts = vec![vec![0.0], vec![3.0], vec![-2.0]];
        let c = Centroids::new(vec![vec![10.0]]);
        let u = FeatureWeights::uniform(1);
        assert_eq!(assign_exact(&refs(&pts), &c, &u), vec![0, 0, 0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pts = vec![vec![0.0]];
        let c = Centroids::new(vec![vec![-1.0], vec![1.0]]);
        let u = FeatureWeights::uniform(1);
        assert_eq!(assign(&refs(&pts), &c, &u, &NoiseConfig::exact()), vec![0]);
    }

    #[test]
    fn tie_window_randomizes_near_ties() {
        let pts = vec![vec![0.0]; 200];
        let c = Centroids::new(vec![vec![-1.0], vec![1.0]]);
        let u = FeatureWeights::uniform(1);
        let noise = NoiseConfig {
            delta_tie: 0.1,
            seed: 4,
            ..NoiseConfig::default()
        };
        let a = assign(&refs(&pts), &c, &u, &noise);
        let ones = a.iter().filter(|&&x| x == 1).count();
        assert!(ones > 50 && ones < 150, "{ones}");
    }

    #[test]
    fn centroid_is_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let prev = Centroids::new(vec![vec![5.0, 5.0]]);
        let c = update_centroids(&refs(&pts), &[0, 0], 1, &prev, &FeatureWeights::uniform(2));
        assert_eq!(c.centers, vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn empty_cluster_reseeds_at_farthest_point() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        let prev = Centroids::new(vec![vec![0.0], vec![100.0]]);
        let c = update_centroids(&refs(&pts), &[0, 0, 0], 2, &prev, &FeatureWeights::uniform(1));
        assert!((c.centers[0][0] - 11.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.centers[1], vec![10.0]);
    }

    #[test]
    fn fixed_point_converges_immediately() {
        let pts = vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 4.0]];
        let init = Centroids::new(pts.clone());
        let params = KMeansParams {
            k: 3,
            ..KMeansParams::default()
        };
        let fit = lloyd(
            &refs(&pts),
            &FeatureWeights::uniform(2),
            init,
            &params,
            &NoiseConfig::exact(),
            0,
        );
        assert_eq!(fit.centroids.iterations, 1);
        assert!(fit.centroids.converged);
        assert_eq!(*fit.inertia_trace.last().unwrap(), 0.0);
    }

    #[test]
    fn zero_iterations_returns_seeds() {
        let pts = vec![vec![0.0], vec![1.0], vec![9.0], vec![10.0]];
        let u = FeatureWeights::uniform(1);
        let params = KMeansParams {
            k: 2,
            max_iter: 0,
            tol: 1e-6,
        };
        let fit = supervised_kmeans(&refs(&pts), &u, &params, &NoiseConfig::exact(), 3).unwrap();
        let seeds = kmeanspp_init(&refs(&pts), 2, &u, derive_seed(3, tag::NODE, 0)).unwrap();
        assert_eq!(fit.centroids.centers, seeds.centers);
        assert_eq!(fit.assignment, assign_exact(&refs(&pts), &seeds, &u));
        assert_eq!(fit.centroids.iterations, 0);
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseConfig::exact().validate().is_ok());
        let bad = NoiseConfig {
            delta_fail: 0.5,
            ..NoiseConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = NoiseConfig {
            eps1: -1.0,
            ..NoiseConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
