//! Ensembles over random forests specialised on minimum history lengths,
//! for transactions whose HMM features are only partly available.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{train_random_forest, Matrix, RandomForestModel, RfParams};
use crate::error::{Error, Result};
use crate::evalkit::pr_auc;
use crate::featurize::HmmFeatureSet;
use crate::seqcorpus::{Actor, Perspective};

/// Minimum history lengths (transactions so far, current included).
pub const HISTORY_LEVELS: [usize; 4] = [0, 3, 5, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryConstraint {
    pub tm_min: usize,
    pub ch_min: usize,
}

impl HistoryConstraint {
    /// The 16 combinations, terminal level outermost.
    pub fn all() -> Vec<Self> {
        HISTORY_LEVELS
            .iter()
            .flat_map(|&tm_min| HISTORY_LEVELS.iter().map(move |&ch_min| Self { tm_min, ch_min }))
            .collect()
    }

    pub fn is_satisfied(&self, tm_history: usize, ch_history: usize) -> bool {
        tm_history >= self.tm_min && ch_history >= self.ch_min
    }

    pub fn is_minimal(&self) -> bool {
        self.tm_min == 0 && self.ch_min == 0
    }
}

impl fmt::Display for HistoryConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.tm_min, self.ch_min)
    }
}

/// Rows of one period: non-HMM columns, labels, history lengths, and HMM
/// features from banks of different window sizes (all row-aligned).
#[derive(Debug, Clone, Copy)]
pub struct ConstraintData<'a> {
    pub base: &'a Matrix,
    pub y: &'a [u8],
    pub tm_history: &'a [usize],
    pub ch_history: &'a [usize],
    /// `(window, features)`; windows must cover every non-zero level used.
    pub banks: &'a [(usize, &'a [HmmFeatureSet])],
}

impl ConstraintData<'_> {
    fn n_rows(&self) -> usize {
        self.y.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.n_rows();
        let aligned = self.base.n_rows() == n
            && self.tm_history.len() == n
            && self.ch_history.len() == n
            && self.banks.iter().all(|(_, b)| b.len() == n);
        if !aligned {
            return Err(Error::InvalidInput("ensemble inputs are not row-aligned".into()));
        }
        Ok(())
    }

    fn bank(&self, window: usize) -> Result<&[HmmFeatureSet]> {
        self.banks
            .iter()
            .find(|(w, _)| *w == window)
            .map(|(_, b)| *b)
            .ok_or_else(|| Error::Config(format!("no HMM features for window {window}")))
    }

    fn rows_satisfying(&self, c: HistoryConstraint) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| c.is_satisfied(self.tm_history[i], self.ch_history[i]))
            .collect()
    }

    /// Base columns plus the card-holder HMM block from window `ch_min` and
    /// the terminal block from window `tm_min` (each only when non-zero).
    fn matrix(&self, c: HistoryConstraint, rows: &[usize]) -> Result<Matrix> {
        let mut blocks: Vec<(&[HmmFeatureSet], Vec<usize>)> = Vec::new();
        for (actor, level) in [(Actor::CardHolder, c.ch_min), (Actor::Terminal, c.tm_min)] {
            if level > 0 {
                let idx = Perspective::ALL.iter().filter(|p| p.actor == actor).map(|p| p.index()).collect();
                blocks.push((self.bank(level)?, idx));
            }
        }
        let width = self.base.n_cols() + blocks.iter().map(|(_, i)| i.len()).sum::<usize>();
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(self.base.row(r));
            for (bank, idx) in &blocks {
                data.extend(idx.iter().map(|&j| {
                    let v = bank[r].values[j];
                    if v.is_nan() {
                        0.0
                    } else {
                        v
                    }
                }));
            }
        }
        Matrix::from_vec(rows.len(), width, data)
    }
}

/// One forest per history constraint; `None` where the training subset was
/// degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintForests {
    pub constraints: Vec<HistoryConstraint>,
    pub forests: Vec<Option<RandomForestModel>>,
}

impl ConstraintForests {
    pub fn train(train: &ConstraintData, constraints: &[HistoryConstraint], params: &RfParams) -> Result<Self> {
        train.check()?;
        if !constraints.iter().any(HistoryConstraint::is_minimal) {
            return Err(Error::Config("constraints must include [0,0]".into()));
        }
        let mut forests = Vec::with_capacity(constraints.len());
        for &c in constraints {
            let rows = train.rows_satisfying(c);
            let pos = rows.iter().filter(|&&r| train.y[r] == 1).count();
            if pos == 0 || pos == rows.len() {
                if c.is_minimal() {
                    return Err(Error::InvalidInput("training labels contain a single class".into()));
                }
                log::warn!("constraint {c}: {} training rows, {pos} positive; forest dropped", rows.len());
                forests.push(None);
                continue;
            }
            let x = train.matrix(c, &rows)?;
            let y: Vec<u8> = rows.iter().map(|&r| train.y[r]).collect();
            forests.push(Some(train_random_forest(&x, &y, params)?));
        }
        Ok(Self { constraints: constraints.to_vec(), forests })
    }

    /// `out[c][i]`: prediction of forest `c` for row `i`, `None` when the row
    /// does not satisfy the constraint or the forest was dropped.
    pub fn predict(&self, data: &ConstraintData) -> Result<Vec<Vec<Option<f64>>>> {
        data.check()?;
        let mut out = Vec::with_capacity(self.constraints.len());
        for (&c, forest) in self.constraints.iter().zip(&self.forests) {
            let mut col = vec![None; data.n_rows()];
            if let Some(f) = forest {
                let rows = data.rows_satisfying(c);
                let scores = f.predict_proba(&data.matrix(c, &rows)?)?;
                for (r, s) in rows.into_iter().zip(scores) {
                    col[r] = Some(s);
                }
            }
            out.push(col);
        }
        Ok(out)
    }

    fn minimal(&self) -> usize {
        self.constraints.iter().position(HistoryConstraint::is_minimal).expect("checked at training")
    }
}

#[derive(Debug, Clone)]
pub struct WeightedPrModel {
    pub forests: Arc<ConstraintForests>,
    /// Validation PR-AUC of each forest on the rows it applies to.
    pub weights: Vec<f64>,
}

pub fn weighted_pr_ensemble(forests: Arc<ConstraintForests>, validation: &ConstraintData) -> Result<WeightedPrModel> {
    let preds = forests.predict(validation)?;
    let mut weights = Vec::with_capacity(preds.len());
    for (c, col) in forests.constraints.iter().zip(&preds) {
        let (s, y): (Vec<f64>, Vec<u8>) = col
            .iter()
            .zip(validation.y)
            .filter_map(|(p, &y)| p.map(|p| (p, y)))
            .unzip();
        let w = if s.is_empty() { Ok(0.0) } else { pr_auc(&s, &y) };
        weights.push(w.unwrap_or_else(|e| {
            log::warn!("constraint {c}: validation PR-AUC undefined ({e}); weight 0");
            0.0
        }));
    }
    Ok(WeightedPrModel { forests, weights })
}

impl WeightedPrModel {
    pub fn predict(&self, data: &ConstraintData) -> Result<Vec<f64>> {
        let preds = self.forests.predict(data)?;
        Ok(combine_weighted(&preds, &self.weights, self.forests.minimal()))
    }
}

/// Weighted mean of the available predictions; falls back to the minimal
/// constraint's forest when every applicable weight is zero.
fn combine_weighted(preds: &[Vec<Option<f64>>], weights: &[f64], fallback: usize) -> Vec<f64> {
    let n = preds.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for (col, &w) in preds.iter().zip(weights) {
                if let Some(p) = col[i] {
                    num += w * p;
                    den += w;
                }
            }
            if den > 0.0 {
                num / den
            } else {
                preds[fallback][i].unwrap_or(0.0)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct StackedModel {
    pub forests: Arc<ConstraintForests>,
    pub meta: RandomForestModel,
}

fn meta_features(preds: &[Vec<Option<f64>>]) -> Result<Matrix> {
    let n = preds.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(n * preds.len());
    for i in 0..n {
        data.extend(preds.iter().map(|col| col[i].unwrap_or(0.0)));
    }
    Matrix::from_vec(n, preds.len(), data)
}

/// Meta-forest trained on the validation period's base predictions (0 where
/// a constraint does not apply).
pub fn stacked_rf(forests: Arc<ConstraintForests>, validation: &ConstraintData, meta: &RfParams) -> Result<StackedModel> {
    let x = meta_features(&forests.predict(validation)?)?;
    let meta = train_random_forest(&x, validation.y, meta)?;
    Ok(StackedModel { forests, meta })
}

impl StackedModel {
    pub fn meta_features(&self, data: &ConstraintData) -> Result<Matrix> {
        meta_features(&self.forests.predict(data)?)
    }

    pub fn predict(&self, data: &ConstraintData) -> Result<Vec<f64>> {
        self.meta.predict_proba(&self.meta_features(data)?)
    }
}
