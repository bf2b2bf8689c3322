//! Leading-order operation counts for inference, data loading, clustering
//! and retraining.
//!
//! Every constant hidden by big-O is set to 1, and `polylog(x)` is taken as
//! `lg(x)^2` where `lg(x) = max(1, log2(x))`. The numbers are estimates of
//! relative cost, not wall time.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feature_weights::WeightMethod;

/// `max(1, log2(x))`, so logarithmic factors never shrink a count.
pub fn lg(x: f64) -> f64 {
    if x <= 2.0 {
        1.0
    } else {
        x.log2()
    }
}

fn polylog(x: f64) -> f64 {
    lg(x).powi(2)
}

/// Distance evaluations to route one row through one tree.
pub fn eval_cost(k: u64, depth: u64, d: u64) -> u64 {
    k * depth * d
}

/// Cost of loading `n` rows of width `d` into the quantum-accessible store.
pub fn kp_load_cost(n: f64, d: f64) -> f64 {
    if n <= 0.0 || d <= 0.0 {
        return 0.0;
    }
    n * d * polylog(n * d)
}

/// Parameters of the retraining cost expressions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Rows already stored.
    pub n: f64,
    pub n_new: f64,
    pub d: f64,
    pub k: f64,
    /// Clustering iterations per split.
    pub max_iter: f64,
    pub depth: f64,
    pub n_trees: f64,
    /// Number of classes; 0 or 1 means regression.
    pub n_classes: f64,
    pub method: WeightMethod,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub delta: f64,
    /// Qubits encoding a distance.
    pub qubits: f64,
    /// Largest squared row norm.
    pub eta1: f64,
    /// Largest column norm.
    pub eta2: f64,
    /// Norm of the label vector.
    pub eta3: f64,
    /// Rows reaching a leaf; defaults to all stored rows.
    pub leaf_size: Option<f64>,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            n: 1e5,
            n_new: 1e3,
            d: 38.0,
            k: 4.0,
            max_iter: 1000.0,
            depth: 2.0,
            n_trees: 100.0,
            n_classes: 2.0,
            method: WeightMethod::Eta,
            eps1: 0.1,
            eps2: 0.1,
            eps3: 0.1,
            delta: 0.01,
            qubits: 8.0,
            eta1: 1.0,
            eta2: 1.0,
            eta3: 1.0,
            leaf_size: None,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("n", self.n),
            ("n_new", self.n_new),
            ("d", self.d),
            ("k", self.k),
            ("max_iter", self.max_iter),
            ("depth", self.depth),
            ("n_trees", self.n_trees),
            ("n_classes", self.n_classes),
            ("qubits", self.qubits),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("eta3", self.eta3),
        ];
        for (name, v) in sizes {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("cost parameter {name} must be finite and >= 0")));
            }
        }
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2), ("eps3", self.eps3)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("cost parameter {name} must be > 0")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::Config("cost parameter delta must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    /// Fill the data-norm maxima from a dataset.
    pub fn measure_norms(&mut self, ds: &Dataset) {
        self.eta1 = ds
            .rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        self.eta2 = (0..ds.n_features())
            .map(|j| ds.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        self.eta3 = (0..ds.n_rows())
            .map(|i| ds.label_value(i).powi(2))
            .sum::<f64>()
            .sqrt();
    }

    fn stored(&self) -> f64 {
        self.n + self.n_new
    }
}

/// Cost of growing one depth-`depth` tree by repeated clustering.
pub fn clustering_cost(p: &CostParams) -> Result<f64> {
    p.validate()?;
    Ok(polylog(p.stored() * p.d) * c1(p))
}

fn c1(p: &CostParams) -> f64 {
    p.max_iter
        * p.depth
        * p.k.powf(3.0 * p.depth)
        * p.d
        * lg(p.k).powi(2)
        * lg(p.qubits).powi(2)
        * lg(1.0 / p.delta).powi(2)
        * p.eta1.powi(2)
        * p.eta2
        / (p.eps1.powi(2) * p.eps2)
}

fn c2(p: &CostParams) -> f64 {
    p.depth
        * p.k.powf(3.0 * p.depth)
        * p.d
        * lg(p.k)
        * lg(p.qubits)
        * lg(1.0 / p.delta)
        * p.eta1
        * p.eta3
        / (p.eps1 * p.eps3)
}

fn c3(p: &CostParams) -> f64 {
    let m = p.n_classes;
    let leaf = p.leaf_size.unwrap_or(p.stored());
    c2(p) * m * lg(leaf * lg(m)) * lg(m)
}

/// The four components of the retraining cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainCost {
    pub load_new: f64,
    pub weights_update: f64,
    pub clustering: f64,
    pub leaf_label: f64,
}

impl RetrainCost {
    pub fn total(&self) -> f64 {
        self.load_new + self.weights_update + self.clustering + self.leaf_label
    }
}

pub fn retrain_cost_breakdown(p: &CostParams) -> Result<RetrainCost> {
    p.validate()?;
    let per_row = match p.method {
        WeightMethod::Eta => p.n_classes.max(1.0),
        WeightMethod::Pearson => 1.0,
    };
    let leaf_c = if p.n_classes >= 2.0 { c3(p) } else { c2(p) };
    Ok(RetrainCost {
        load_new: kp_load_cost(p.n_new, p.d),
        weights_update: p.n_new * p.d * per_row,
        clustering: clustering_cost(p)?,
        leaf_label: p.n_trees * polylog(p.stored() * p.d) * leaf_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_cost_examples() {
        assert_eq!(eval_cost(1, 1, 1), 1);
        assert_eq!(eval_cost(4, 2, 38), 304);
        assert_eq!(eval_cost(4, 2, 76), 2 * eval_cost(4, 2, 38));
    }

    #[test]
    fn kp_load_examples() {
        assert_eq!(kp_load_cost(2.0, 1.0), 2.0);
        let r = kp_load_cost(2e6, 10.0) / kp_load_cost(1e6, 10.0);
        assert!(r > 2.0 && r < 2.2);
    }

    #[test]
    fn clustering_scales() {
        let unit = CostParams {
            n: 1.0,
            n_new: 0.0,
            d: 1.0,
            k: 1.0,
            max_iter: 1.0,
            depth: 1.0,
            eps1: 1.0,
            eps2: 1.0,
            delta: 0.49,
            qubits: 2.0,
            ..CostParams::default()
        };
        let base = clustering_cost(&unit).unwrap();
        assert!(base.is_finite() && base > 0.0);
        let twice = clustering_cost(&CostParams {
            max_iter: 2.0,
            ..unit.clone()
        })
        .unwrap();
        assert_eq!(twice, 2.0 * base);
    }

    #[test]
    fn empty_batch_has_no_load_or_weight_cost() {
        let c = retrain_cost_breakdown(&CostParams {
            n_new: 0.0,
            ..CostParams::default()
        })
        .unwrap();
        assert_eq!(c.load_new, 0.0);
        assert_eq!(c.weights_update, 0.0);
        assert!(c.clustering > 0.0 && c.leaf_label > 0.0);
    }

    #[test]
    fn eta_costs_classes_times_pearson() {
        let p = CostParams {
            n_classes: 3.0,
            ..CostParams::default()
        };
        let eta = retrain_cost_breakdown(&p).unwrap().weights_update;
        let pearson = retrain_cost_breakdown(&CostParams {
            method: WeightMethod::Pearson,
            ..p
        })
        .unwrap()
        .weights_update;
        assert_eq!(eta / pearson, 3.0);
    }

    #[test]
    fn rejects_zero_error_bounds() {
        assert!(clustering_cost(&CostParams {
            eps1: 0.0,
            ..CostParams::default()
        })
        .is_err());
    }
}
