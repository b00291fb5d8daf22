use std::path::Path;

use super::{AdaParams, LogRegParams, Penalty, RfParams};
use crate::error::{Error, Result};

/// Parameter sets that can be listed as one row of a grid report.
pub trait GridParams {
    fn header() -> Vec<&'static str>;
    fn values(&self) -> Vec<String>;
}

impl GridParams for RfParams {
    fn header() -> Vec<&'static str> {
        vec!["n_trees", "n_features_per_split", "min_samples_leaf", "max_depth"]
    }

    fn values(&self) -> Vec<String> {
        vec![
            self.n_trees.to_string(),
            self.n_features_per_split.to_string(),
            self.min_samples_leaf.to_string(),
            self.max_depth.map_or("None".into(), |d| d.to_string()),
        ]
    }
}

impl GridParams for AdaParams {
    fn header() -> Vec<&'static str> {
        vec!["n_trees", "learning_rate", "stop_tolerance", "max_tree_depth"]
    }

    fn values(&self) -> Vec<String> {
        vec![
            self.n_trees.to_string(),
            self.learning_rate.to_string(),
            self.stop_tolerance.to_string(),
            self.max_tree_depth.to_string(),
        ]
    }
}

impl GridParams for LogRegParams {
    fn header() -> Vec<&'static str> {
        vec!["c", "penalty", "tolerance"]
    }

    fn values(&self) -> Vec<String> {
        let penalty = match self.penalty {
            Penalty::L1 => "l1",
            Penalty::L2 => "l2",
        };
        vec![self.c.to_string(), penalty.into(), self.tolerance.to_string()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell<P> {
    pub params: P,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult<P, M> {
    pub cells: Vec<GridCell<P>>,
    pub best_index: usize,
    pub best_model: M,
}

impl<P, M> GridResult<P, M> {
    pub fn best_params(&self) -> &P {
        &self.cells[self.best_index].params
    }

    pub fn best_score(&self) -> f64 {
        self.cells[self.best_index].score
    }
}

/// Trains and scores every cell in order and keeps the model of the highest
/// score; ties go to the earliest cell, NaN scores never win.
pub fn grid_search<P: Clone, M>(
    grid: &[P],
    mut train_and_score: impl FnMut(&P) -> Result<(M, f64)>,
) -> Result<GridResult<P, M>> {
    if grid.is_empty() {
        return Err(Error::Config("grid search over an empty grid".into()));
    }
    let mut cells = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, M)> = None;
    for (i, params) in grid.iter().enumerate() {
        let (model, score) = train_and_score(params)?;
        log::debug!("grid cell {i}: score {score}");
        let improves = match &best {
            None => true,
            Some((b, _)) => score > cells_score(&cells, *b),
        };
        cells.push(GridCell { params: params.clone(), score });
        if improves {
            best = Some((i, model));
        }
    }
    let (best_index, best_model) = best.expect("grid is non-empty");
    Ok(GridResult { cells, best_index, best_model })
}

fn cells_score<P>(cells: &[GridCell<P>], i: usize) -> f64 {
    let s = cells[i].score;
    if s.is_nan() {
        f64::NEG_INFINITY
    } else {
        s
    }
}

/// Trees × features per split × min leaf × depth, in that nesting order.
pub fn rf_default_grid(n_trees: usize, n_features: usize, seed: u64) -> Vec<RfParams> {
    let mut grid = Vec::new();
    for mtry in [1, 7, 13] {
        for min_leaf in [1, 20, 40] {
            for depth in [Some(4), None] {
                grid.push(RfParams {
                    n_trees,
                    n_features_per_split: mtry.min(n_features.max(1)),
                    min_samples_leaf: min_leaf,
                    max_depth: depth,
                    seed,
                });
            }
        }
    }
    grid
}

pub fn ada_default_grid(seed: u64) -> Vec<AdaParams> {
    let mut grid = Vec::new();
    for n_trees in [100, 400] {
        for learning_rate in [0.1, 1.0, 100.0] {
            for stop_tolerance in [10.0, 100.0] {
                for max_tree_depth in [1, 4] {
                    grid.push(AdaParams { n_trees, learning_rate, stop_tolerance, max_tree_depth, seed });
                }
            }
        }
    }
    grid
}

/// Tolerance grid values are read as multiples of `1e-6`.
pub fn logreg_default_grid() -> Vec<LogRegParams> {
    let mut grid = Vec::new();
    for c in [1.0, 10.0, 100.0] {
        for penalty in [Penalty::L1, Penalty::L2] {
            for tol in [10.0, 100.0] {
                grid.push(LogRegParams { c, penalty, tolerance: tol * 1e-6, max_iter: 1000 });
            }
        }
    }
    grid
}

/// One CSV row per cell: parameters, validation score, and a `best` flag.
pub fn write_grid_report<P: GridParams>(path: &Path, cells: &[GridCell<P>], best_index: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = vec!["cell"];
    header.extend(P::header());
    header.extend(["validation_pr_auc", "best"]);
    w.write_record(&header)?;
    for (i, c) in cells.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(c.params.values());
        rec.push(c.score.to_string());
        rec.push((i == best_index).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
