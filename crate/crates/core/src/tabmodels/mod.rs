//! Ordinary least squares, CART regression trees, first-order gradient
//! boosting and regularized second-order boosting.

mod boost;
mod linear;
mod tree;

pub use boost::{fit_gbdt, fit_xgb_style, BoostMode, BoostedEnsemble};
pub use linear::{fit_linear, LinearModel, RIDGE_EPS};
pub use tree::{fit_tree, RegressionTree, TreeNode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeHyperparams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub n_rounds: usize,
    pub shrinkage: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for TreeHyperparams {
    fn default() -> Self {
        TreeHyperparams {
            max_depth: 4,
            min_samples_leaf: 2,
            n_rounds: 200,
            shrinkage: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            seed: 0,
        }
    }
}

impl TreeHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 || self.min_samples_leaf < 1 || self.n_rounds < 1 {
            return Err(Error::Config(
                "max_depth, min_samples_leaf and n_rounds must all be >= 1".into(),
            ));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::Config(format!("shrinkage {} outside (0, 1]", self.shrinkage)));
        }
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::Config("lambda and gamma must be >= 0".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_columns(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!("model trained on {expected} features, input has {got}")));
    }
    Ok(())
}
