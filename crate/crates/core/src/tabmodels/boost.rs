use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, SplitCriterion};
use super::{check_columns, RegressionTree, TreeHyperparams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostMode {
    /// Trees fit to residuals by squared-error CART; leaves hold residual means.
    FirstOrder,
    /// Trees grown on the regularized second-order gain.
    SecondOrder,
}

/// Additive tree ensemble: `base_prediction + shrinkage * sum(tree(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    pub mode: BoostMode,
    pub base_prediction: f64,
    pub shrinkage: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub trees: Vec<RegressionTree>,
    /// Training MSE after each round.
    pub train_mse: Vec<f64>,
    pub n_features: usize,
}

/// First-order gradient boosting under squared loss.
pub fn fit_gbdt(x: &Matrix, y: &[f64], hp: &TreeHyperparams) -> Result<BoostedEnsemble> {
    fit(x, y, hp, BoostMode::FirstOrder)
}

/// Second-order boosting with L2 leaf penalty `lambda` and split penalty `gamma`.
/// With both at zero it grows the same trees as [`fit_gbdt`].
pub fn fit_xgb_style(x: &Matrix, y: &[f64], hp: &TreeHyperparams) -> Result<BoostedEnsemble> {
    fit(x, y, hp, BoostMode::SecondOrder)
}

fn fit(x: &Matrix, y: &[f64], hp: &TreeHyperparams, mode: BoostMode) -> Result<BoostedEnsemble> {
    hp.validate()?;
    let n = x.rows();
    if n == 0 || y.len() != n {
        return Err(Error::Shape(format!("{n} rows vs {} targets", y.len())));
    }
    let criterion = match mode {
        BoostMode::FirstOrder => SplitCriterion::Variance,
        BoostMode::SecondOrder => SplitCriterion::SecondOrder {
            lambda: hp.lambda,
            gamma: hp.gamma,
        },
    };
    let base = y.iter().sum::<f64>() / n as f64;
    let mut current = vec![base; n];
    let mut residuals = vec![0.0; n];
    let mut trees = Vec::with_capacity(hp.n_rounds);
    let mut train_mse = Vec::with_capacity(hp.n_rounds);
    for _ in 0..hp.n_rounds {
        for i in 0..n {
            residuals[i] = y[i] - current[i];
        }
        let tree = grow_tree(x, &residuals, criterion, hp.max_depth, hp.min_samples_leaf)?;
        for (i, c) in current.iter_mut().enumerate() {
            *c += hp.shrinkage * tree.predict_row(x.row(i));
        }
        train_mse.push(current.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64);
        trees.push(tree);
    }
    Ok(BoostedEnsemble {
        mode,
        base_prediction: base,
        shrinkage: hp.shrinkage,
        lambda: if mode == BoostMode::SecondOrder { hp.lambda } else { 0.0 },
        gamma: if mode == BoostMode::SecondOrder { hp.gamma } else { 0.0 },
        trees,
        train_mse,
        n_features: x.cols(),
    })
}

impl BoostedEnsemble {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut out = self.base_prediction;
        for t in &self.trees {
            out += self.shrinkage * t.predict_row(row);
        }
        out
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_columns(self.n_features, x.cols())?;
        Ok((0..x.rows()).map(|i| self.predict_row(x.row(i))).collect())
    }

    /// Split gain summed over all trees, per feature index.
    pub fn gain_by_feature(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        for t in &self.trees {
            for (o, g) in out.iter_mut().zip(t.gain_by_feature()) {
                *o += g;
            }
        }
        out
    }
}
