use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, DecisionTree, Presorted, TreeParams};
use super::{check_predict, check_training_data, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RfParams {
    pub n_trees: usize,
    /// Features examined per split; clamped to the number of columns.
    pub n_features_per_split: usize,
    pub min_samples_leaf: usize,
    /// `None` grows until leaves are pure or cannot be split.
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            n_features_per_split: 7,
            min_samples_leaf: 1,
            max_depth: None,
            seed: 0,
        }
    }
}

impl RfParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.n_features_per_split == 0 || self.min_samples_leaf == 0 {
            return Err(Error::Config("random forest counts must be positive".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::Config("max_depth must be positive or unlimited".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub params: RfParams,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

/// Per-tree generator: the forest seed selects the key, the tree index the
/// stream, so trees are independent of training order.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

pub fn train_random_forest(x: &Matrix, y: &[u8], params: &RfParams) -> Result<RandomForestModel> {
    check_training_data(x, y)?;
    params.validate()?;
    let data = Presorted::new(x);
    let n = y.len();
    let tp = TreeParams {
        max_features: params.n_features_per_split.min(x.n_cols()),
        min_samples_leaf: params.min_samples_leaf,
        max_depth: params.max_depth,
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let mut counts = vec![0u32; n];
            for _ in 0..n {
                counts[rng.gen_range(0..n)] += 1;
            }
            let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            grow(&data, y, &counts, &weights, tp, &mut rng)
        })
        .collect();
    Ok(RandomForestModel {
        params: *params,
        n_features: x.n_cols(),
        trees,
    })
}

impl RandomForestModel {
    /// Mean over trees of the leaf positive fraction.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_predict(x, self.n_features)?;
        let k = self.trees.len() as f64;
        Ok((0..x.n_rows())
            .into_par_iter()
            .with_min_len(256)
            .map(|i| {
                let row = x.row(i);
                self.trees.iter().map(|t| t.leaf_value(row)).sum::<f64>() / k
            })
            .collect())
    }
}

/// Mean decrease in gini impurity per feature, summing to one.
pub fn gini_importance(model: &RandomForestModel) -> Vec<f64> {
    let mut total = vec![0.0; model.n_features];
    for t in &model.trees {
        for (acc, v) in total.iter_mut().zip(t.importances(model.n_features)) {
            *acc += v;
        }
    }
    let s: f64 = total.iter().sum();
    if s > 0.0 {
        total.iter_mut().for_each(|v| *v /= s);
    }
    total
}
