//! Discrete two-class SAMME boosting of shallow gini trees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, DecisionTree, Presorted, TreeParams};
use super::{check_predict, check_training_data, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    /// Boosting stops early once the weighted error is at most
    /// `stop_tolerance * f64::EPSILON`.
    pub stop_tolerance: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
}

impl Default for AdaParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            learning_rate: 1.0,
            stop_tolerance: 10.0,
            max_tree_depth: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaModel {
    pub params: AdaParams,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
    pub alphas: Vec<f64>,
    /// Weighted training error of each accepted round.
    pub errors: Vec<f64>,
}

fn vote(tree: &DecisionTree, row: &[f64]) -> f64 {
    if tree.leaf_value(row) > 0.5 {
        1.0
    } else {
        -1.0
    }
}

pub fn train_adaboost(x: &Matrix, y: &[u8], params: &AdaParams) -> Result<AdaModel> {
    check_training_data(x, y)?;
    if params.n_trees == 0 || params.max_tree_depth == 0 || !(params.learning_rate > 0.0) {
        return Err(Error::Config("AdaBoost needs positive rounds, depth and learning rate".into()));
    }
    let n = y.len();
    let data = Presorted::new(x);
    let counts = vec![1u32; n];
    let tp = TreeParams {
        max_features: x.n_cols(),
        min_samples_leaf: 1,
        max_depth: Some(params.max_tree_depth),
    };
    let floor = params.stop_tolerance * f64::EPSILON;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    // Log-weights keep very large learning rates representable.
    let mut log_w = vec![0.0f64; n];
    let mut weights = vec![1.0 / n as f64; n];
    let mut model = AdaModel {
        params: *params,
        n_features: x.n_cols(),
        trees: Vec::new(),
        alphas: Vec::new(),
        errors: Vec::new(),
    };
    for _ in 0..params.n_trees {
        let tree = grow(&data, y, &counts, &weights, tp, &mut rng);
        let wrong: Vec<bool> = (0..n).map(|i| (vote(&tree, x.row(i)) > 0.0) != (y[i] == 1)).collect();
        let total: f64 = weights.iter().sum();
        let err = weights.iter().zip(&wrong).filter(|(_, &w)| w).map(|(v, _)| v).sum::<f64>() / total;
        if err >= 0.5 {
            break;
        }
        let perfect = err <= floor;
        let e = err.max(floor);
        let alpha = params.learning_rate * ((1.0 - e) / e).ln();
        model.trees.push(tree);
        model.alphas.push(alpha);
        model.errors.push(err);
        if perfect {
            break;
        }
        for i in 0..n {
            if wrong[i] {
                log_w[i] += alpha;
            }
        }
        let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..n {
            weights[i] = (log_w[i] - top).exp();
        }
    }
    if model.trees.is_empty() {
        return Err(Error::Numerical("first boosting round was no better than chance".into()));
    }
    Ok(model)
}

impl AdaModel {
    /// Weighted vote margin mapped from `[-1, 1]` to `[0, 1]`.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_predict(x, self.n_features)?;
        let total: f64 = self.alphas.iter().sum();
        Ok((0..x.n_rows())
            .map(|i| {
                let row = x.row(i);
                let m: f64 = self.trees.iter().zip(&self.alphas).map(|(t, a)| a * vote(t, row)).sum();
                ((m / total + 1.0) / 2.0).clamp(0.0, 1.0)
            })
            .collect())
    }
}
