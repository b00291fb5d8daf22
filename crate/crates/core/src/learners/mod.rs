//! Binary classifiers written from scratch: CART random forests, logistic
//! regression and discrete AdaBoost, plus grid search and the
//! history-constrained ensembles.

mod adaboost;
mod ensemble;
mod forest;
mod grid;
mod logreg;
mod tree;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adaboost::{train_adaboost, AdaModel, AdaParams};
pub use ensemble::{
    stacked_rf, weighted_pr_ensemble, ConstraintData, ConstraintForests, HistoryConstraint, StackedModel,
    WeightedPrModel, HISTORY_LEVELS,
};
pub use forest::{gini_importance, train_random_forest, RandomForestModel, RfParams};
pub use grid::{
    ada_default_grid, grid_search, logreg_default_grid, rf_default_grid, write_grid_report, GridCell, GridParams,
    GridResult,
};
pub use logreg::{train_logreg, LogRegModel, LogRegParams, Penalty};
pub use tree::{DecisionTree, Node};

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::InvalidInput(format!(
                "matrix data has {} values, expected {n_rows}x{n_cols}",
                data.len()
            )));
        }
        Ok(Self { n_rows, n_cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        Self::from_vec(rows.len(), n_cols, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self { n_rows: rows.len(), n_cols: self.n_cols, data }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for i in 0..self.n_rows {
            let row = self.row(i);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        Self { n_rows: self.n_rows, n_cols: cols.len(), data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Checks shapes and that both classes occur.
pub(crate) fn check_training_data(x: &Matrix, y: &[u8]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::InvalidInput(format!("{} rows but {} labels", x.n_rows(), y.len())));
    }
    if x.n_cols() == 0 {
        return Err(Error::InvalidInput("no feature columns".into()));
    }
    if !x.is_finite() {
        return Err(Error::InvalidInput("features must be finite".into()));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::InvalidInput("training labels contain a single class".into()));
    }
    Ok(())
}

pub(crate) fn check_predict(x: &Matrix, n_features: usize) -> Result<()> {
    if x.n_cols() != n_features {
        return Err(Error::InvalidInput(format!(
            "model expects {n_features} features, got {}",
            x.n_cols()
        )));
    }
    Ok(())
}

/// Any trained single classifier; the persisted form of a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Model {
    RandomForest(RandomForestModel),
    LogReg(LogRegModel),
    AdaBoost(AdaModel),
}

impl Model {
    /// Fraud scores in `[0, 1]`.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            Model::RandomForest(m) => m.predict_proba(x),
            Model::LogReg(m) => m.predict_proba(x),
            Model::AdaBoost(m) => m.predict_proba(x),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
pub(crate) mod testdata {
    use super::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two classes split by the line `x0 + x1 = 0`, with a margin.
    pub fn separable(n: usize, seed: u64) -> (Matrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        while rows.len() < n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            if (a + b).abs() < 0.1 {
                continue;
            }
            rows.push(vec![a, b]);
            y.push((a + b > 0.0) as u8);
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    /// Label is the XOR of the signs of two coordinates.
    pub fn xor(n: usize, seed: u64) -> (Matrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            rows.push(vec![a, b]);
            y.push(((a > 0.0) != (b > 0.0)) as u8);
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    pub fn accuracy(scores: &[f64], y: &[u8]) -> f64 {
        let hits = scores.iter().zip(y).filter(|(s, &l)| (**s > 0.5) == (l == 1)).count();
        hits as f64 / y.len() as f64
    }
}
