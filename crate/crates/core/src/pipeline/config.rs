use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::featurize::{FeatureSet, MissingStrategy};
use crate::ghmm::FitOptions;
use crate::learners::{AdaParams, LogRegParams, Penalty, RfParams};
use crate::syngen::GeneratorConfig;
use crate::txmodel::{parse_date, DatasetSplit, TimeRange};

/// Everything one experiment needs. Every field has a default, so an empty
/// file is a valid config (the full e-commerce preset run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Classifier seeds; one evaluation run per seed.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses one per core. Results do not depend on it.
    pub workers: usize,
    pub data: DataSource,
    pub split: SplitConfig,
    pub hmm: HmmConfig,
    pub features: FeatureConfig,
    pub classifier: ClassifierConfig,
    pub missing: MissingStudyConfig,
    pub sweep: SweepConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("experiment"),
            workers: 0,
            data: DataSource::default(),
            split: SplitConfig::default(),
            hmm: HmmConfig::default(),
            features: FeatureConfig::default(),
            classifier: ClassifierConfig::default(),
            missing: MissingStudyConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Ecommerce,
    FaceToFace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: PresetName,
    /// Multiplies the card and terminal populations.
    #[serde(default = "one")]
    pub scale: f64,
    /// Overrides the preset's generator seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn one() -> f64 {
    1.0
}

/// Where transactions come from: a built-in preset, a full generator
/// config, or a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Preset(Preset),
    Generator(GeneratorConfig),
    Path(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Preset(Preset { name: PresetName::Ecommerce, scale: 1.0, seed: None })
    }
}

impl DataSource {
    /// Generator settings, or `None` for file input.
    pub fn generator(&self) -> Option<GeneratorConfig> {
        match self {
            DataSource::Preset(p) => {
                let base = match p.name {
                    PresetName::Ecommerce => GeneratorConfig::ecommerce(),
                    PresetName::FaceToFace => GeneratorConfig::face_to_face(),
                };
                let mut g = base.scaled(p.scale);
                if let Some(s) = p.seed {
                    g.seed = s;
                }
                Some(g)
            }
            DataSource::Generator(g) => Some(g.clone()),
            DataSource::Path(_) => None,
        }
    }
}

/// Calendar split, dates as `YYYY-MM-DD`, all ranges inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_start: String,
    pub train_end: String,
    pub validation_start: String,
    pub validation_end: String,
    pub gap_days: i64,
    pub test_start: String,
    pub test_end: String,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_start: "2015-03-01".into(),
            train_end: "2015-04-26".into(),
            validation_start: "2015-04-27".into(),
            validation_end: "2015-04-30".into(),
            gap_days: 7,
            test_start: "2015-05-08".into(),
            test_end: "2015-05-31".into(),
        }
    }
}

impl SplitConfig {
    pub fn to_split(&self) -> Result<DatasetSplit> {
        let range = |a: &str, b: &str| Ok::<_, Error>(TimeRange::from_dates(parse_date(a)?, parse_date(b)?));
        let split = DatasetSplit {
            train: range(&self.train_start, &self.train_end)?,
            validation: range(&self.validation_start, &self.validation_end)?,
            gap_days: self.gap_days,
            test: range(&self.test_start, &self.test_end)?,
        };
        split.validate()?;
        Ok(split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmConfig {
    /// Sequence window sizes; one HMM bank per (states, window) cell.
    pub windows: Vec<usize>,
    pub states: Vec<usize>,
    /// Cell used for the feature-set comparison; defaults to the first
    /// entry of each list.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primary_window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub primary_states: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            windows: vec![3],
            states: vec![5],
            primary_window: None,
            primary_states: None,
            max_iter: fit.max_iter,
            tol: fit.tol,
            restarts: fit.restarts,
            seed: fit.seed,
        }
    }
}

impl HmmConfig {
    pub fn primary(&self) -> Cell {
        Cell {
            states: self.primary_states.unwrap_or_else(|| self.states.first().copied().unwrap_or(5)),
            window: self.primary_window.unwrap_or_else(|| self.windows.first().copied().unwrap_or(3)),
        }
    }

    pub fn fit_options(&self, states: usize) -> FitOptions {
        FitOptions {
            n_states: states,
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
            restarts: self.restarts,
        }
    }

    /// The states × windows grid, states outermost.
    pub fn sweep_cells(&self) -> Vec<Cell> {
        self.states
            .iter()
            .flat_map(|&states| self.windows.iter().map(move |&window| Cell { states, window }))
            .collect()
    }
}

/// One HMM hyperparameter combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub states: usize,
    pub window: usize,
}

impl Cell {
    pub fn slug(&self) -> String {
        format!("k{}_w{}", self.states, self.window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Feature sets to evaluate.
    pub sets: Vec<FeatureSet>,
    /// Evaluate each set with and without the HMM block and report the
    /// increase. When false the sets are evaluated as written.
    pub compare_hmm: bool,
    pub strategy: MissingStrategy,
    /// Write feature matrices of the primary cell as CSV.
    pub write_matrices: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sets: vec![FeatureSet::RAW, FeatureSet::RAW_AGG_CH, FeatureSet::RAW_ALL_AGG],
            compare_hmm: true,
            strategy: MissingStrategy::Default0,
            write_matrices: true,
        }
    }
}

impl FeatureConfig {
    /// Every set that gets its own evaluation, in report order.
    pub fn evaluated_sets(&self) -> Vec<FeatureSet> {
        if self.compare_hmm {
            self.sets.iter().flat_map(|s| [s.without_hmm(), s.with_hmm()]).collect()
        } else {
            self.sets.clone()
        }
    }
}

/// Classifier family and its hyperparameter grid. Each list is one grid
/// axis; the grid is their cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ClassifierConfig {
    RandomForest(RfGrid),
    LogReg(LogRegGrid),
    AdaBoost(AdaGrid),
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::RandomForest(RfGrid::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfGrid {
    pub n_trees: Vec<usize>,
    pub n_features_per_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    /// 0 means unlimited depth.
    pub max_depth: Vec<usize>,
}

impl Default for RfGrid {
    fn default() -> Self {
        Self {
            n_trees: vec![300],
            n_features_per_split: vec![1, 7, 13],
            min_samples_leaf: vec![1, 20, 40],
            max_depth: vec![4, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegGrid {
    pub c: Vec<f64>,
    pub penalty: Vec<Penalty>,
    /// Stopping tolerance on the proximal-gradient step norm.
    pub tolerance: Vec<f64>,
    pub max_iter: usize,
}

impl Default for LogRegGrid {
    fn default() -> Self {
        Self {
            c: vec![1.0, 10.0, 100.0],
            penalty: vec![Penalty::L1, Penalty::L2],
            tolerance: vec![1e-5, 1e-4],
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaGrid {
    pub n_trees: Vec<usize>,
    pub learning_rate: Vec<f64>,
    /// Multiples of machine epsilon.
    pub stop_tolerance: Vec<f64>,
    pub max_tree_depth: Vec<usize>,
}

impl Default for AdaGrid {
    fn default() -> Self {
        Self {
            n_trees: vec![100, 400],
            learning_rate: vec![0.1, 1.0, 100.0],
            stop_tolerance: vec![10.0, 100.0],
            max_tree_depth: vec![1, 4],
        }
    }
}

/// Hyperparameters of one trained classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelParams {
    RandomForest(RfParams),
    LogReg(LogRegParams),
    AdaBoost(AdaParams),
}

impl ModelParams {
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            ModelParams::RandomForest(p) => ModelParams::RandomForest(RfParams { seed, ..p }),
            ModelParams::AdaBoost(p) => ModelParams::AdaBoost(AdaParams { seed, ..p }),
            ModelParams::LogReg(p) => ModelParams::LogReg(p),
        }
    }
}

impl ClassifierConfig {
    pub fn is_random_forest(&self) -> bool {
        matches!(self, ClassifierConfig::RandomForest(_))
    }

    /// The grid in nesting order (first list outermost). Features per split
    /// are clamped to the matrix width; duplicates after clamping are kept.
    pub fn expand(&self, n_features: usize, seed: u64) -> Vec<ModelParams> {
        let mut out = Vec::new();
        match self {
            ClassifierConfig::RandomForest(g) => {
                for &n_trees in &g.n_trees {
                    for &mtry in &g.n_features_per_split {
                        for &leaf in &g.min_samples_leaf {
                            for &depth in &g.max_depth {
                                out.push(ModelParams::RandomForest(RfParams {
                                    n_trees,
                                    n_features_per_split: mtry.min(n_features.max(1)),
                                    min_samples_leaf: leaf,
                                    max_depth: (depth > 0).then_some(depth),
                                    seed,
                                }));
                            }
                        }
                    }
                }
            }
            ClassifierConfig::LogReg(g) => {
                for &c in &g.c {
                    for &penalty in &g.penalty {
                        for &tolerance in &g.tolerance {
                            out.push(ModelParams::LogReg(LogRegParams { c, penalty, tolerance, max_iter: g.max_iter }));
                        }
                    }
                }
            }
            ClassifierConfig::AdaBoost(g) => {
                for &n_trees in &g.n_trees {
                    for &learning_rate in &g.learning_rate {
                        for &stop_tolerance in &g.stop_tolerance {
                            for &max_tree_depth in &g.max_tree_depth {
                                out.push(ModelParams::AdaBoost(AdaParams {
                                    n_trees,
                                    learning_rate,
                                    stop_tolerance,
                                    max_tree_depth,
                                    seed,
                                }));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Comparison of missing-value strategies on one base feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissingStudyConfig {
    pub enabled: bool,
    /// Non-HMM columns shared by every strategy.
    pub base: FeatureSet,
}

impl Default for MissingStudyConfig {
    fn default() -> Self {
        Self { enabled: true, base: FeatureSet::RAW }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Feature set scored in every (states, window) cell; it is tuned once
    /// on the primary cell.
    pub feature_set: FeatureSet,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { feature_set: FeatureSet::RAW.with_hmm() }
    }
}

/// Window sizes the history-constrained ensembles draw features from.
pub const ENSEMBLE_WINDOWS: [usize; 3] = [3, 5, 7];
const ALLOWED: [usize; 3] = [3, 5, 7];

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// sha256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn needs_ensembles(&self) -> bool {
        self.missing.enabled
            || matches!(self.features.strategy, MissingStrategy::WeightedPr | MissingStrategy::StackedRf)
    }

    pub fn runs_sweep(&self) -> bool {
        self.hmm.sweep_cells().len() >= 2
    }

    /// Every HMM cell that must be trained.
    pub fn hmm_cells(&self) -> Vec<Cell> {
        let mut cells: BTreeSet<Cell> = self.hmm.sweep_cells().into_iter().collect();
        let primary = self.hmm.primary();
        cells.insert(primary);
        if self.needs_ensembles() {
            for window in ENSEMBLE_WINDOWS {
                cells.insert(Cell { states: primary.states, window });
            }
        }
        cells.into_iter().collect()
    }

    /// Sets that are grid-searched in the train stage, deduplicated in
    /// first-use order.
    pub fn tuned_sets(&self) -> Vec<FeatureSet> {
        let mut sets = self.features.evaluated_sets();
        if self.missing.enabled {
            sets.extend([self.missing.base.without_hmm(), self.missing.base.with_hmm()]);
        }
        if self.runs_sweep() {
            sets.push(self.sweep.feature_set);
        }
        let mut seen = Vec::new();
        for s in sets {
            if !seen.contains(&s) {
                seen.push(s);
            }
        }
        seen
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        for (name, list) in [("hmm.windows", &self.hmm.windows), ("hmm.states", &self.hmm.states)] {
            if list.is_empty() {
                return bad(format!("{name} must not be empty"));
            }
            if let Some(v) = list.iter().find(|v| !ALLOWED.contains(v)) {
                return bad(format!("{name} entry {v} is not one of 3, 5, 7"));
            }
        }
        let primary = self.hmm.primary();
        if !self.hmm.windows.contains(&primary.window) || !self.hmm.states.contains(&primary.states) {
            return bad("the primary HMM cell must be part of hmm.windows × hmm.states".into());
        }
        if self.features.sets.is_empty() {
            return bad("features.sets must not be empty".into());
        }
        if self.features.compare_hmm && self.features.sets.iter().any(|s| s.hmm) {
            return bad("with compare_hmm, list feature sets without `+HMM`".into());
        }
        if self.needs_ensembles() && !self.classifier.is_random_forest() {
            return bad("the ensemble strategies and the missing-value study need family = random_forest".into());
        }
        if self.missing.enabled && self.missing.base.hmm {
            return bad("missing.base must not include `+HMM`".into());
        }
        if !self.sweep.feature_set.hmm {
            return bad("sweep.feature_set must include `+HMM`".into());
        }
        if self.classifier.expand(1, 0).is_empty() {
            return bad("classifier grid is empty".into());
        }
        for p in self.classifier.expand(1, 0) {
            if let ModelParams::RandomForest(rf) = p {
                rf.validate()?;
            }
        }
        self.split.to_split()?;
        if let Some(g) = self.data.generator() {
            g.validate()?;
        }
        if let DataSource::Path(p) = &self.data {
            if !p.is_file() {
                return bad(format!("data file {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let cfg = PipelineConfig::from_toml("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.classifier.expand(22, 0).len(), 18);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.hmm.windows = vec![3, 5, 7];
        cfg.hmm.primary_states = Some(5);
        cfg.classifier = ClassifierConfig::AdaBoost(AdaGrid::default());
        cfg.missing.enabled = false;
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn sections_parse() {
        let cfg = PipelineConfig::from_toml(
            r#"
            seeds = [4]
            [data.preset]
            name = "face_to_face"
            scale = 0.1
            [features]
            sets = ["raw+aggCH"]
            strategy = "exclude"
            [classifier]
            family = "random_forest"
            n_trees = [10]
            n_features_per_split = [3]
            min_samples_leaf = [1]
            max_depth = [0]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.data.generator().unwrap().n_cards, 530);
        let grid = cfg.classifier.expand(10, 9);
        assert_eq!(grid.len(), 1);
        assert!(matches!(grid[0], ModelParams::RandomForest(RfParams { max_depth: None, seed: 9, .. })));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for text in [
            "seeds = []",
            "[hmm]\nwindows = [4]",
            "[features]\nsets = [\"raw+HMM\"]",
            "[classifier]\nfamily = \"log_reg\"",
            "bogus = 1",
            "[data]\npath = \"/nonexistent/file.csv\"",
            "[split]\ntest_start = \"2015-05-02\"",
        ] {
            assert!(PipelineConfig::from_toml(text).is_err(), "{text}");
        }
        let ok = "[classifier]\nfamily = \"log_reg\"\n[missing]\nenabled = false";
        assert!(PipelineConfig::from_toml(ok).is_ok());
    }

    #[test]
    fn cells_include_ensemble_windows() {
        let cfg = PipelineConfig::default();
        let cells: Vec<String> = cfg.hmm_cells().iter().map(Cell::slug).collect();
        assert_eq!(cells, ["k5_w3", "k5_w5", "k5_w7"]);
        let tuned: Vec<String> = cfg.tuned_sets().iter().map(|s| s.to_string()).collect();
        assert_eq!(tuned, ["raw", "raw+HMM", "raw+aggCH", "raw+aggCH+HMM", "raw+allagg", "raw+allagg+HMM"]);
    }
}
