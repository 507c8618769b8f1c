use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeSpec {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for TreeSpec {
    fn default() -> Self {
        TreeSpec { max_depth: 6, min_samples_split: 10 }
    }
}

impl TreeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(Error::InvalidParameter("min_samples_split must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf { value: f64, samples: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// CART regression tree; `x[feature] <= threshold` goes left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub dim: usize,
    pub nodes: Vec<TreeNode>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeModel {
    pub fn fit(spec: &TreeSpec, x: &DMatrix<f64>, y: &[f64]) -> Self {
        let mut tree = TreeModel { dim: x.ncols(), nodes: Vec::new() };
        let rows: Vec<usize> = (0..x.nrows()).collect();
        tree.grow(spec, x, y, rows, 0);
        tree
    }

    fn grow(&mut self, spec: &TreeSpec, x: &DMatrix<f64>, y: &[f64], rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let value = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(TreeNode::Leaf { value, samples: rows.len() });
        if depth >= spec.max_depth || rows.len() < spec.min_samples_split {
            return id;
        }
        let Some(split) = best_split(x, y, &rows) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| x[(r, split.feature)] <= split.threshold);
        let left = self.grow(spec, x, y, l, depth + 1);
        let right = self.grow(spec, x, y, r, depth + 1);
        self.nodes[id] = TreeNode::Split { feature: split.feature, threshold: split.threshold, left, right };
        id
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

/// Best squared-error split; ties keep the first candidate in (feature,
/// threshold) scan order.
fn best_split(x: &DMatrix<f64>, y: &[f64], rows: &[usize]) -> Option<Split> {
    let n = rows.len() as f64;
    let total: f64 = rows.iter().map(|&r| y[r]).sum();
    let mut best: Option<Split> = None;
    let mut order = rows.to_vec();
    for feature in 0..x.ncols() {
        order.sort_by(|&a, &b| x[(a, feature)].total_cmp(&x[(b, feature)]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        for k in 0..order.len() - 1 {
            left_sum += y[order[k]];
            let lo = x[(order[k], feature)];
            let hi = x[(order[k + 1], feature)];
            if lo == hi {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let right_sum = total - left_sum;
            // Reduction in SSE relative to the unsplit node.
            let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n;
            if gain > 1e-12 * n && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Split { feature, threshold: 0.5 * (lo + hi), gain });
            }
        }
    }
    best
}

impl Predictor for TreeModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}
