//! Synthetic data generators used by the experiments.

use qcforest::data::Dataset;
use qcforest::rng::{derive_seed, rng_from_seed};
use qcforest::Result;
use rand::Rng;
use rand_distr::StandardNormal;

/// Binary stream whose two Gaussian class-conditionals drift over time.
///
/// Row `i` has angle `theta = turn_per_row * i`. The class-1 mean is
/// `(s/2)(cos theta, sin theta, 0, ...)` and the class-0 mean its negation;
/// all coordinates have unit variance and classes are equally likely.
/// Features beyond the first two carry no label information.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftSpec {
    pub d: usize,
    pub separation: f64,
    pub turn_per_row: f64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec {
            d: 6,
            separation: 1.5,
            turn_per_row: std::f64::consts::FRAC_PI_2 / 1000.0,
        }
    }
}

const CLASSES: [&str; 2] = ["0", "1"];

impl DriftSpec {
    fn row(&self, theta: f64, rng: &mut impl Rng) -> (Vec<f64>, usize) {
        let label = rng.gen_range(0..2);
        let sign = if label == 1 { 0.5 } else { -0.5 } * self.separation;
        let mut x: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
        x[0] += sign * theta.cos();
        x[1] += sign * theta.sin();
        (x, label)
    }

    /// Rows `start..start + n` of the stream.
    pub fn rows(&self, start: usize, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = rng_from_seed(derive_seed(seed, 0x5354_5245, start as u64));
        let (xs, ys) = (start..start + n)
            .map(|i| self.row(self.turn_per_row * i as f64, &mut rng))
            .unzip();
        Dataset::classification(xs, ys, CLASSES.map(String::from).to_vec())
    }

    /// `n` independent rows drawn at the angle of stream row `at`.
    pub fn snapshot(&self, at: usize, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = rng_from_seed(derive_seed(seed, 0x534e_4150, at as u64));
        let theta = self.turn_per_row * at as f64;
        let (xs, ys) = (0..n).map(|_| self.row(theta, &mut rng)).unzip();
        Dataset::classification(xs, ys, CLASSES.map(String::from).to_vec())
    }
}

/// Two labelled Gaussian blobs separated along the first feature, plus
/// `noise_dims` wide uninformative features.
pub fn separable_with_noise(n: usize, noise_dims: usize, seed: u64) -> Result<Dataset> {
    let mut rng = rng_from_seed(seed);
    let (xs, ys) = (0..n)
        .map(|i| {
            let label = i % 2;
            let mut x = vec![if label == 1 { 3.0 } else { -3.0 }];
            x[0] += 0.3 * rng.sample::<f64, _>(StandardNormal);
            x.extend((0..noise_dims).map(|_| 4.0 * rng.sample::<f64, _>(StandardNormal)));
            (x, label)
        })
        .unzip();
    Dataset::classification(xs, ys, CLASSES.map(String::from).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_chunks_are_reproducible() {
        let s = DriftSpec::default();
        assert_eq!(s.rows(100, 20, 1).unwrap(), s.rows(100, 20, 1).unwrap());
        assert_ne!(s.rows(100, 20, 1).unwrap(), s.rows(100, 20, 2).unwrap());
        let ds = s.rows(0, 10, 3).unwrap();
        assert_eq!((ds.n_rows(), ds.n_features()), (10, 6));
    }

    #[test]
    fn class_means_follow_the_angle() {
        let s = DriftSpec {
            turn_per_row: std::f64::consts::FRAC_PI_2,
            ..DriftSpec::default()
        };
        // at row 1 the signal sits entirely in the second feature
        let ds = s.snapshot(1, 4000, 9).unwrap();
        let mean = |j: usize, c: usize| {
            let v: Vec<f64> = (0..ds.n_rows())
                .filter(|&i| ds.class_of(i) == c)
                .map(|i| ds.row(i)[j])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(0, 1).abs() < 0.1);
        assert!((mean(1, 1) - 0.75).abs() < 0.1);
        assert!((mean(1, 0) + 0.75).abs() < 0.1);
    }
}
