use serde::{Deserialize, Serialize};

use super::{check_columns, TreeHyperparams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Gains within this relative margin of the current best do not replace it,
/// so near-ties resolve to the lower (feature, threshold).
const TIE_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Criterion gain recorded when the split was chosen.
        gain: f64,
        left: usize,
        right: usize,
        n_samples: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

/// Binary regression tree; node 0 is the root. Rows with
/// `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SplitCriterion {
    /// Squared-error reduction; leaves hold the mean.
    Variance,
    /// Second-order gain under squared loss (gradient `F - y`, hessian 1)
    /// with L2 leaf penalty `lambda` and split penalty `gamma`.
    SecondOrder { lambda: f64, gamma: f64 },
}

impl SplitCriterion {
    fn leaf(&self, sum: f64, n: usize) -> f64 {
        match *self {
            SplitCriterion::Variance => sum / n as f64,
            SplitCriterion::SecondOrder { lambda, .. } => sum / (n as f64 + lambda),
        }
    }

    fn scale(&self) -> f64 {
        match self {
            SplitCriterion::Variance => 1.0,
            SplitCriterion::SecondOrder { .. } => 0.5,
        }
    }

    /// Gain of splitting a node with target sum `s` over `n` rows into
    /// (`sl`, `nl`) and (`s - sl`, `n - nl`).
    fn gain(&self, sl: f64, nl: usize, s: f64, n: usize) -> f64 {
        let (sr, nr) = (s - sl, n - nl);
        let (lambda, gamma) = match *self {
            SplitCriterion::Variance => (0.0, 0.0),
            SplitCriterion::SecondOrder { lambda, gamma } => (lambda, gamma),
        };
        let raw = sl * sl / (nl as f64 + lambda) + sr * sr / (nr as f64 + lambda) - s * s / (n as f64 + lambda);
        self.scale() * raw - gamma
    }
}

struct Grower<'a> {
    x: &'a Matrix,
    targets: &'a [f64],
    criterion: SplitCriterion,
    max_depth: usize,
    min_samples_leaf: usize,
    nodes: Vec<TreeNode>,
    in_left: Vec<bool>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Grower<'_> {
    /// `sorted[f]` holds the node's rows ordered by feature `f` (ties by row index).
    fn grow(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let rows = &sorted[0];
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&r| self.targets[r]).sum();
        let idx = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: self.criterion.leaf(sum, n),
            n_samples: n,
        });
        if depth >= self.max_depth || n < 2 * self.min_samples_leaf {
            return idx;
        }
        let Some(best) = self.best_split(&sorted, sum) else {
            return idx;
        };

        for &r in &sorted[0] {
            self.in_left[r] = self.x.get(r, best.feature) < best.threshold;
        }
        let (mut left, mut right) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
        for list in &sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = list.iter().partition(|&&row| self.in_left[row]);
            left.push(l);
            right.push(r);
        }
        drop(sorted);
        let left_idx = self.grow(left, depth + 1);
        let right_idx = self.grow(right, depth + 1);
        self.nodes[idx] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            gain: best.gain,
            left: left_idx,
            right: right_idx,
            n_samples: n,
        };
        idx
    }

    fn best_split(&self, sorted: &[Vec<usize>], sum: f64) -> Option<Candidate> {
        let n = sorted[0].len();
        let energy: f64 = sorted[0].iter().map(|&r| self.targets[r] * self.targets[r]).sum();
        let floor = self.criterion.scale() * 1e-12 * energy;
        let mut best: Option<Candidate> = None;
        for (f, list) in sorted.iter().enumerate() {
            let mut sl = 0.0;
            for i in 1..n {
                sl += self.targets[list[i - 1]];
                if i < self.min_samples_leaf || n - i < self.min_samples_leaf {
                    continue;
                }
                let (a, b) = (self.x.get(list[i - 1], f), self.x.get(list[i], f));
                if a == b {
                    continue;
                }
                let gain = self.criterion.gain(sl, i, sum, n);
                if !(gain > floor) {
                    continue;
                }
                if best.as_ref().map_or(true, |c| gain > c.gain * (1.0 + TIE_MARGIN)) {
                    let mid = 0.5 * (a + b);
                    best = Some(Candidate {
                        feature: f,
                        threshold: if mid > a { mid } else { b },
                        gain,
                    });
                }
            }
        }
        best
    }
}

pub(crate) fn grow_tree(
    x: &Matrix,
    targets: &[f64],
    criterion: SplitCriterion,
    max_depth: usize,
    min_samples_leaf: usize,
) -> Result<RegressionTree> {
    let (n, f) = (x.rows(), x.cols());
    if n == 0 {
        return Err(Error::Shape("cannot grow a tree on zero rows".into()));
    }
    if targets.len() != n {
        return Err(Error::Shape(format!("{n} rows vs {} targets", targets.len())));
    }
    if f == 0 {
        let sum: f64 = targets.iter().sum();
        return Ok(RegressionTree {
            nodes: vec![TreeNode::Leaf {
                value: criterion.leaf(sum, n),
                n_samples: n,
            }],
            n_features: 0,
        });
    }
    let sorted: Vec<Vec<usize>> = (0..f)
        .map(|j| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut grower = Grower {
        x,
        targets,
        criterion,
        max_depth,
        min_samples_leaf: min_samples_leaf.max(1),
        nodes: Vec::new(),
        in_left: vec![false; n],
    };
    grower.grow(sorted, 0);
    Ok(RegressionTree {
        nodes: grower.nodes,
        n_features: f,
    })
}

/// Greedy CART on squared error. Candidate thresholds are midpoints between
/// consecutive distinct values.
pub fn fit_tree(x: &Matrix, y: &[f64], hp: &TreeHyperparams) -> Result<RegressionTree> {
    hp.validate()?;
    grow_tree(x, y, SplitCriterion::Variance, hp.max_depth, hp.min_samples_leaf)
}

impl RegressionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_columns(self.n_features, x.cols())?;
        Ok((0..x.rows()).map(|i| self.predict_row(x.row(i))).collect())
    }

    /// Index of the leaf a row lands in.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            ..
        } = &self.nodes[i]
        {
            i = if row[*feature] < *threshold { *left } else { *right };
        }
        i
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Total recorded split gain per feature index.
    pub fn gain_by_feature(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        for node in &self.nodes {
            if let TreeNode::Split { feature, gain, .. } = node {
                out[*feature] += gain;
            }
        }
        out
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            TreeNode::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }
}
