//! Config-driven experiment: generate, split, train HMMs, featurize, tune,
//! evaluate, sweep and report. Every stage reads its inputs from the output
//! directory and writes its results there, so a stage can be re-run on its
//! own once the stages before it have produced their files.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::*;

use crate::error::{Error, Result};
use crate::evalkit::{comparison_table, pr_curve, render_text, PrCurve, RunSummary, SweepMatrix};
use crate::featurize::{
    assemble, compute_aggregates, compute_hmm_features_all, AggregatedFeatures, Blocks, FeatureMatrix, FeatureMeta,
    FeatureSet, HmmBank, HmmFeatureSet, MissingStrategy, RawEncoder,
};
use crate::ghmm::fit;
use crate::learners::{
    grid_search, stacked_rf, train_adaboost, train_logreg, train_random_forest, weighted_pr_ensemble, write_grid_report,
    ConstraintData, ConstraintForests, GridCell, HistoryConstraint, Matrix, Model, RfParams,
};
use crate::seqcorpus::{build_corpora, group_by_actor, Actor, HistoryIndex};
use crate::syngen::generate;
use crate::txmodel::{
    load_transactions, partition, save_transactions, sort_transactions, Partition, Subset, Transaction,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Generate,
    Split,
    TrainHmms,
    Featurize,
    Train,
    Evaluate,
    Sweep,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Generate,
        Stage::Split,
        Stage::TrainHmms,
        Stage::Featurize,
        Stage::Train,
        Stage::Evaluate,
        Stage::Sweep,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Split => "split",
            Stage::TrainHmms => "train-hmms",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Sweep => "sweep",
            Stage::Report => "report",
        }
    }
}

/// Stable artifact paths under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn transactions(&self) -> PathBuf {
        self.root.join("data").join("transactions.csv")
    }

    pub fn split_file(&self, s: Subset) -> PathBuf {
        self.root.join("split").join(format!("{}.csv", s.name()))
    }

    pub fn hmm_dir(&self, cell: Cell) -> PathBuf {
        self.root.join("hmm").join(cell.slug())
    }

    pub fn features_dir(&self, cell: Cell, set: FeatureSet) -> PathBuf {
        self.root.join("features").join(cell.slug()).join(set_slug(set))
    }

    pub fn model_dir(&self, set: FeatureSet) -> PathBuf {
        self.root.join("models").join(set_slug(set))
    }

    pub fn eval_dir(&self, name: &str) -> PathBuf {
        self.root.join("eval").join(name)
    }

    pub fn sweep_dir(&self, cell: Cell) -> PathBuf {
        self.root.join("sweep").join(cell.slug())
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// File-name form of a feature set: `raw+aggCH+HMM` → `raw_aggCH_HMM`.
pub fn set_slug(set: FeatureSet) -> String {
    set.to_string().replace('+', "_")
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        mkdir(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        mkdir(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Run record: the config, its hash, all seeds, and the stages completed
/// against this config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub package_version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub hmm_fit_seed: u64,
    pub generator_seed: Option<u64>,
    pub stages: Vec<String>,
    pub config: PipelineConfig,
}

fn record_stage(cfg: &PipelineConfig, layout: &Layout, stage: Stage) -> Result<()> {
    let hash = cfg.hash()?;
    let path = layout.manifest();
    let mut stages = match read_json::<Manifest>(&path) {
        Ok(m) if m.config_sha256 == hash => m.stages,
        _ => Vec::new(),
    };
    if !stages.iter().any(|s| s == stage.name()) {
        stages.push(stage.name().to_string());
    }
    let manifest = Manifest {
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: hash,
        seeds: cfg.seeds.clone(),
        hmm_fit_seed: cfg.hmm.seed,
        generator_seed: cfg.data.generator().map(|g| g.seed),
        stages,
        config: cfg.clone(),
    };
    write_json(&path, &manifest)?;
    write_text(&layout.root.join("config.toml"), &cfg.to_toml()?)
}

/// Runs one stage inside a worker pool of `cfg.workers` threads. Failures
/// carry the stage name; files written before the failure are kept.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let started = Instant::now();
    log::info!("stage {} started", stage.name());
    let body = || -> Result<()> {
        cfg.validate()?;
        mkdir(&layout.root)?;
        match stage {
            Stage::Generate => stage_generate(cfg, &layout),
            Stage::Split => stage_split(cfg, &layout),
            Stage::TrainHmms => stage_train_hmms(cfg, &layout),
            Stage::Featurize => stage_featurize(cfg, &layout),
            Stage::Train => stage_train(cfg, &layout),
            Stage::Evaluate => stage_evaluate(cfg, &layout),
            Stage::Sweep => stage_sweep(cfg, &layout),
            Stage::Report => stage_report(cfg, &layout),
        }?;
        record_stage(cfg, &layout, stage)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")));
    let result = pool.and_then(|p| p.install(body));
    log::info!("stage {} finished in {:.1?}", stage.name(), started.elapsed());
    result.map_err(|e| e.in_stage(stage.name()))
}

/// All stages in order; the sweep runs only when the config lists at least
/// two HMM cells. Returns the output directory.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PathBuf> {
    for stage in Stage::ALL {
        if stage == Stage::Sweep && !cfg.runs_sweep() {
            continue;
        }
        run_stage(cfg, stage)?;
    }
    Ok(cfg.out_dir.clone())
}

fn stage_generate(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut txs = match (&cfg.data, cfg.data.generator()) {
        (_, Some(g)) => generate(&g)?,
        (DataSource::Path(p), None) => load_transactions(p)?,
        _ => unreachable!("every non-file source has a generator"),
    };
    sort_transactions(&mut txs);
    mkdir(&layout.root.join("data"))?;
    save_transactions(layout.transactions(), &txs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SubsetSummary {
    subset: String,
    first_timestamp: i64,
    last_timestamp: i64,
    n_transactions: usize,
    n_frauds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitSummary {
    subsets: Vec<SubsetSummary>,
    dropped: usize,
    warnings: Vec<String>,
}

fn stage_split(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut txs = load_transactions(layout.transactions())?;
    sort_transactions(&mut txs);
    let split = cfg.split.to_split()?;
    let part = partition(&txs, &split)?;
    mkdir(&layout.root.join("split"))?;
    let mut subsets = Vec::new();
    for s in Subset::ALL {
        let rows: Vec<Transaction> = part.get(s).iter().map(|&i| txs[i].clone()).collect();
        save_transactions(layout.split_file(s), &rows)?;
        let range = match s {
            Subset::Train => split.train,
            Subset::Validation => split.validation,
            Subset::Gap => split.gap(),
            Subset::Test => split.test,
        };
        subsets.push(SubsetSummary {
            subset: s.name().into(),
            first_timestamp: range.start,
            last_timestamp: range.end,
            n_transactions: rows.len(),
            n_frauds: rows.iter().filter(|t| t.is_fraud()).count(),
        });
    }
    write_json(
        &layout.root.join("split").join("summary.json"),
        &SplitSummary { subsets, dropped: part.dropped, warnings: part.warnings },
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitSummary {
    perspective: String,
    corpus_sequences: usize,
    corpus_observations: usize,
    n_iterations: usize,
    converged: bool,
    final_loglik: f64,
    max_decrease: f64,
}

fn stage_train_hmms(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let train = load_transactions(layout.split_file(Subset::Train))?;
    let cards = group_by_actor(&train, Actor::CardHolder);
    let terminals = group_by_actor(&train, Actor::Terminal);
    for cell in cfg.hmm_cells() {
        let corpora = build_corpora(&cards, &terminals, cell.window)?;
        let opts = cfg.hmm.fit_options(cell.states);
        let fitted = corpora
            .par_iter()
            .map(|c| fit(c, &opts, Some(cell.window)).map(|(m, r)| (c, m, r)))
            .collect::<Result<Vec<_>>>()?;
        let summaries: Vec<FitSummary> = fitted
            .iter()
            .map(|(c, _, r)| FitSummary {
                perspective: c.perspective.slug(),
                corpus_sequences: c.sequences.len(),
                corpus_observations: c.n_observations(),
                n_iterations: r.n_iterations,
                converged: r.converged,
                final_loglik: r.final_loglik(),
                max_decrease: r.max_decrease(),
            })
            .collect();
        let bank = HmmBank::new(cell.window, fitted.into_iter().map(|(_, m, _)| m).collect())?;
        let dir = layout.hmm_dir(cell);
        mkdir(&dir)?;
        bank.save_dir(&dir)?;
        write_json(&dir.join("fit_report.json"), &summaries)?;
        log::info!("trained HMM bank {}", cell.slug());
    }
    Ok(())
}

/// Everything derived from the split files that the learning stages share.
struct Data {
    txs: Vec<Transaction>,
    part: Partition,
    index: HistoryIndex,
    encoder: RawEncoder,
    aggregates: Vec<AggregatedFeatures>,
    ch_history: Vec<usize>,
    tm_history: Vec<usize>,
    banks: BTreeMap<Cell, (HmmBank, Vec<HmmFeatureSet>)>,
}

impl Data {
    /// Reassembles the full history from the four split files. Validation
    /// and gap transactions only ever feed test-time history.
    fn load(cfg: &PipelineConfig, layout: &Layout) -> Result<Self> {
        let mut txs = Vec::new();
        for s in Subset::ALL {
            txs.extend(load_transactions(layout.split_file(s))?);
        }
        sort_transactions(&mut txs);
        let part = partition(&txs, &cfg.split.to_split()?)?;
        let index = HistoryIndex::build(&txs)?;
        let aggregates = compute_aggregates(&txs, &index)?;
        let encoder = RawEncoder::fit(&txs, &part.train);
        let ch_history = (0..txs.len()).map(|i| index.history_len(i, Actor::CardHolder)).collect();
        let tm_history = (0..txs.len()).map(|i| index.history_len(i, Actor::Terminal)).collect();
        Ok(Self { txs, part, index, encoder, aggregates, ch_history, tm_history, banks: BTreeMap::new() })
    }

    fn load_cells(&mut self, layout: &Layout, cells: &[Cell]) -> Result<()> {
        for &cell in cells {
            if self.banks.contains_key(&cell) {
                continue;
            }
            let bank = HmmBank::load_dir(&layout.hmm_dir(cell), cell.window)?;
            if let Some(m) = bank.models().iter().find(|m| m.n_states() != cell.states) {
                return Err(Error::Config(format!(
                    "{} holds a {}-state model, expected {}",
                    layout.hmm_dir(cell).display(),
                    m.n_states(),
                    cell.states
                )));
            }
            let features = compute_hmm_features_all(&self.index, &bank)?;
            self.banks.insert(cell, (bank, features));
        }
        Ok(())
    }

    fn hmm(&self, cell: Cell) -> &[HmmFeatureSet] {
        &self.banks[&cell].1
    }

    fn matrix(&self, subset: Subset, set: FeatureSet, strategy: MissingStrategy, cell: Cell) -> Result<FeatureMatrix> {
        let blocks = Blocks {
            txs: &self.txs,
            encoder: &self.encoder,
            aggregates: Some(&self.aggregates),
            hmm: self.banks.get(&cell).map(|(_, f)| f.as_slice()),
        };
        assemble(self.part.get(subset), set, &blocks, strategy)
    }
}

/// Matrix layout used for a strategy: the ensembles train their forests on
/// default0-style matrices.
fn layout_of(strategy: MissingStrategy) -> MissingStrategy {
    match strategy {
        MissingStrategy::Exclude => MissingStrategy::Exclude,
        _ => MissingStrategy::Default0,
    }
}

fn stage_featurize(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut data = Data::load(cfg, layout)?;
    let cell = cfg.hmm.primary();
    data.load_cells(layout, &[cell])?;
    let strategy = layout_of(cfg.features.strategy);
    let bank = &data.banks[&cell].0;
    for set in cfg.features.evaluated_sets() {
        let dir = layout.features_dir(cell, set);
        mkdir(&dir)?;
        for subset in [Subset::Train, Subset::Validation, Subset::Test] {
            let m = data.matrix(subset, set, strategy, cell)?;
            if cfg.features.write_matrices {
                m.write_csv(&dir.join(format!("{}.csv", subset.name())))?;
            }
            let meta = FeatureMeta::new(&m, strategy, &data.encoder, set.hmm.then_some((bank, cell.states)))?;
            meta.save(&dir.join(format!("{}.meta.json", subset.name())))?;
        }
    }
    Ok(())
}

/// Trains one classifier of any family.
pub fn fit_model(params: &ModelParams, x: &Matrix, y: &[u8]) -> Result<Model> {
    Ok(match params {
        ModelParams::RandomForest(p) => Model::RandomForest(train_random_forest(x, y, p)?),
        ModelParams::LogReg(p) => Model::LogReg(train_logreg(x, y, p)?),
        ModelParams::AdaBoost(p) => Model::AdaBoost(train_adaboost(x, y, p)?),
    })
}

/// Outcome of the grid search for one feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedModel {
    pub feature_set: FeatureSet,
    pub cell: Cell,
    pub params: ModelParams,
    pub validation_pr_auc: f64,
    pub grid_cells: usize,
}

fn tuned_path(layout: &Layout, set: FeatureSet) -> PathBuf {
    layout.model_dir(set).join("best.json")
}

fn load_tuned(layout: &Layout, set: FeatureSet) -> Result<ModelParams> {
    Ok(read_json::<TunedModel>(&tuned_path(layout, set))?.params)
}

fn write_grid(path: &Path, cells: &[GridCell<ModelParams>], best: usize) -> Result<()> {
    macro_rules! typed {
        ($variant:ident) => {{
            let typed: Vec<_> = cells
                .iter()
                .map(|c| match c.params {
                    ModelParams::$variant(p) => GridCell { params: p, score: c.score },
                    _ => unreachable!("a grid holds one family"),
                })
                .collect();
            write_grid_report(path, &typed, best)
        }};
    }
    match cells[0].params {
        ModelParams::RandomForest(_) => typed!(RandomForest),
        ModelParams::LogReg(_) => typed!(LogReg),
        ModelParams::AdaBoost(_) => typed!(AdaBoost),
    }
}

/// Grid search on the first seed: train on the training period, score
/// PR-AUC on validation. Every later seed retrains the winning cell.
fn stage_train(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut data = Data::load(cfg, layout)?;
    let cell = cfg.hmm.primary();
    data.load_cells(layout, &[cell])?;
    for set in cfg.tuned_sets() {
        let train = data.matrix(Subset::Train, set, MissingStrategy::Default0, cell)?;
        let val = data.matrix(Subset::Validation, set, MissingStrategy::Default0, cell)?;
        let grid = cfg.classifier.expand(train.x.n_cols(), cfg.seeds[0]);
        let scorable = val.y.contains(&1);
        if !scorable {
            log::warn!("{set}: validation period has no frauds; keeping the first grid cell");
        }
        let result = grid_search(&grid, |p| {
            if !scorable {
                return Ok(((), f64::NAN));
            }
            let model = fit_model(p, &train.x, &train.y)?;
            Ok(((), pr_curve(&model.predict_proba(&val.x)?, &val.y)?.auc))
        })?;
        let dir = layout.model_dir(set);
        mkdir(&dir)?;
        write_grid(&dir.join("grid.csv"), &result.cells, result.best_index)?;
        write_json(
            &tuned_path(layout, set),
            &TunedModel {
                feature_set: set,
                cell,
                params: *result.best_params(),
                validation_pr_auc: result.best_score(),
                grid_cells: grid.len(),
            },
        )?;
        log::info!("{set}: best validation PR-AUC {:.4}", result.best_score());
    }
    Ok(())
}

/// Test-set results of one configuration over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub name: String,
    pub feature_set: FeatureSet,
    pub strategy: MissingStrategy,
    pub cell: Cell,
    pub seeds: Vec<u64>,
    pub aucs: Vec<f64>,
    /// Test transactions scored.
    pub n_rows: usize,
    pub n_frauds: usize,
    /// Test transactions in the split.
    pub n_test: usize,
}

impl EvalRecord {
    pub fn summary(&self) -> Result<RunSummary> {
        RunSummary::from_aucs(self.name.clone(), self.aucs.clone())
    }

    pub fn coverage(&self) -> f64 {
        self.n_rows as f64 / self.n_test as f64
    }
}

fn save_record(dir: &Path, record: &EvalRecord, curves: &[PrCurve]) -> Result<()> {
    mkdir(dir)?;
    for (seed, curve) in record.seeds.iter().zip(curves) {
        curve.write_csv(&dir.join(format!("pr_seed{seed}.csv")))?;
    }
    write_json(&dir.join("runs.json"), record)
}

/// Trains one model per seed on the training period and scores the test
/// period.
fn eval_single(
    data: &Data,
    name: &str,
    set: FeatureSet,
    strategy: MissingStrategy,
    cell: Cell,
    params: ModelParams,
    seeds: &[u64],
) -> Result<(EvalRecord, Vec<PrCurve>)> {
    let train = data.matrix(Subset::Train, set, strategy, cell)?;
    let test = data.matrix(Subset::Test, set, strategy, cell)?;
    let curves = seeds
        .par_iter()
        .map(|&s| {
            let model = fit_model(&params.with_seed(s), &train.x, &train.y)?;
            pr_curve(&model.predict_proba(&test.x)?, &test.y)
        })
        .collect::<Result<Vec<_>>>()?;
    let record = EvalRecord {
        name: name.to_string(),
        feature_set: set,
        strategy,
        cell,
        seeds: seeds.to_vec(),
        aucs: curves.iter().map(|c| c.auc).collect(),
        n_rows: test.n_rows(),
        n_frauds: test.y.iter().filter(|&&v| v == 1).count(),
        n_test: data.part.test.len(),
    };
    Ok((record, curves))
}

/// Row-aligned inputs of the history-constrained ensembles for one period.
struct EnsembleRows {
    base: Matrix,
    y: Vec<u8>,
    tm: Vec<usize>,
    ch: Vec<usize>,
    banks: Vec<(usize, Vec<HmmFeatureSet>)>,
}

impl EnsembleRows {
    fn build(data: &Data, subset: Subset, base: FeatureSet, states: usize) -> Result<Self> {
        let rows = data.part.get(subset);
        let m = data.matrix(subset, base.without_hmm(), MissingStrategy::Default0, Cell { states, window: 3 })?;
        let banks = ENSEMBLE_WINDOWS
            .iter()
            .map(|&window| {
                let f = data.hmm(Cell { states, window });
                (window, rows.iter().map(|&r| f[r]).collect())
            })
            .collect();
        Ok(Self {
            base: m.x,
            y: m.y,
            tm: rows.iter().map(|&r| data.tm_history[r]).collect(),
            ch: rows.iter().map(|&r| data.ch_history[r]).collect(),
            banks,
        })
    }

    fn with<T>(&self, f: impl FnOnce(&ConstraintData) -> T) -> T {
        let banks: Vec<(usize, &[HmmFeatureSet])> = self.banks.iter().map(|(w, b)| (*w, b.as_slice())).collect();
        f(&ConstraintData { base: &self.base, y: &self.y, tm_history: &self.tm, ch_history: &self.ch, banks: &banks })
    }
}

/// Weighted-PR and stacked-RF ensembles sharing one set of 16 forests per
/// seed. Returns the records in that order.
fn eval_ensembles(
    data: &Data,
    base: FeatureSet,
    states: usize,
    params: RfParams,
    seeds: &[u64],
) -> Result<[(EvalRecord, Vec<PrCurve>); 2]> {
    let train = EnsembleRows::build(data, Subset::Train, base, states)?;
    let val = EnsembleRows::build(data, Subset::Validation, base, states)?;
    let test = EnsembleRows::build(data, Subset::Test, base, states)?;
    let constraints = HistoryConstraint::all();
    let mut weighted = Vec::new();
    let mut stacked = Vec::new();
    for &seed in seeds {
        let p = RfParams { seed, ..params };
        let forests = Arc::new(train.with(|d| ConstraintForests::train(d, &constraints, &p))?);
        let w = val.with(|d| weighted_pr_ensemble(forests.clone(), d))?;
        let s = val.with(|d| stacked_rf(forests.clone(), d, &p))?;
        weighted.push(pr_curve(&test.with(|d| w.predict(d))?, &test.y)?);
        stacked.push(pr_curve(&test.with(|d| s.predict(d))?, &test.y)?);
    }
    let record = |strategy: MissingStrategy, curves: &[PrCurve]| EvalRecord {
        name: strategy.to_string(),
        feature_set: base.with_hmm(),
        strategy,
        cell: Cell { states, window: 3 },
        seeds: seeds.to_vec(),
        aucs: curves.iter().map(|c| c.auc).collect(),
        n_rows: test.y.len(),
        n_frauds: test.y.iter().filter(|&&v| v == 1).count(),
        n_test: data.part.test.len(),
    };
    Ok([
        (record(MissingStrategy::WeightedPr, &weighted), weighted),
        (record(MissingStrategy::StackedRf, &stacked), stacked),
    ])
}

fn rf_params(p: ModelParams) -> Result<RfParams> {
    match p {
        ModelParams::RandomForest(rf) => Ok(rf),
        _ => Err(Error::Config("ensembles need random forest parameters".into())),
    }
}

/// Test transactions with at least `min_history` transactions on both the
/// card and the terminal (the current one included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryCount {
    pub min_history: usize,
    pub n_transactions: usize,
    pub n_frauds: usize,
}

fn history_counts(data: &Data, levels: &[usize]) -> Vec<HistoryCount> {
    levels
        .iter()
        .map(|&h| {
            let rows: Vec<usize> = data
                .part
                .test
                .iter()
                .copied()
                .filter(|&r| data.ch_history[r] >= h && data.tm_history[r] >= h)
                .collect();
            HistoryCount {
                min_history: h,
                n_transactions: rows.len(),
                n_frauds: rows.iter().filter(|&&r| data.txs[r].is_fraud()).count(),
            }
        })
        .collect()
}

/// Names of the missing-value study rows, in report order.
pub const MISSING_ROWS: [&str; 5] = ["raw", "default0", "weighted_pr", "stacked_rf", "exclude"];

fn stage_evaluate(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let mut data = Data::load(cfg, layout)?;
    let primary = cfg.hmm.primary();
    let mut cells = vec![primary];
    if cfg.needs_ensembles() {
        cells.extend(ENSEMBLE_WINDOWS.iter().map(|&window| Cell { states: primary.states, window }));
    }
    data.load_cells(layout, &cells)?;
    let seeds = &cfg.seeds;
    // Default0 single-model runs, shared between the comparison and the
    // missing-value study.
    let mut single: BTreeMap<String, (EvalRecord, Vec<PrCurve>)> = BTreeMap::new();
    let mut single_run = |set: FeatureSet, strategy: MissingStrategy| -> Result<(EvalRecord, Vec<PrCurve>)> {
        let key = format!("{set}/{strategy}");
        if let Some(r) = single.get(&key) {
            return Ok(r.clone());
        }
        let r = eval_single(&data, &set.to_string(), set, strategy, primary, load_tuned(layout, set)?, seeds)?;
        single.insert(key, r.clone());
        Ok(r)
    };

    let strategy = cfg.features.strategy;
    let mut ensembles_cache: Option<[(EvalRecord, Vec<PrCurve>); 2]> = None;
    for set in cfg.features.evaluated_sets() {
        let (mut record, curves) = match strategy {
            MissingStrategy::WeightedPr | MissingStrategy::StackedRf if set.hmm => {
                let params = rf_params(load_tuned(layout, set)?)?;
                let both = eval_ensembles(&data, set, primary.states, params, seeds)?;
                let pick = both[if strategy == MissingStrategy::WeightedPr { 0 } else { 1 }].clone();
                if set == cfg.missing.base.with_hmm() {
                    ensembles_cache = Some(both);
                }
                pick
            }
            MissingStrategy::Exclude => single_run(set, MissingStrategy::Exclude)?,
            _ => single_run(set, MissingStrategy::Default0)?,
        };
        record.name = set.to_string();
        save_record(&layout.eval_dir("sets").join(set_slug(set)), &record, &curves)?;
        log::info!("{set}: test PR-AUC {}", record.summary()?.display());
    }

    if cfg.missing.enabled {
        let base = cfg.missing.base;
        let dir = layout.eval_dir("missing");
        let raw = single_run(base, MissingStrategy::Default0)?;
        let default0 = single_run(base.with_hmm(), MissingStrategy::Default0)?;
        let exclude = single_run(base.with_hmm(), MissingStrategy::Exclude)?;
        let params = rf_params(load_tuned(layout, base.with_hmm())?)?;
        let ensembles = match ensembles_cache.take() {
            Some(e) => e,
            None => eval_ensembles(&data, base, primary.states, params, seeds)?,
        };
        let [weighted, stacked] = ensembles;
        for (name, (mut record, curves)) in MISSING_ROWS.iter().zip([raw, default0, weighted, stacked, exclude]) {
            record.name = name.to_string();
            save_record(&dir.join(name), &record, &curves)?;
            log::info!("missing-value study {name}: {} on {} rows", record.summary()?.display(), record.n_rows);
        }
        let mut levels = vec![0];
        levels.extend(ENSEMBLE_WINDOWS);
        write_json(&dir.join("history_counts.json"), &history_counts(&data, &levels))?;
    }
    Ok(())
}

/// Builds the states × windows matrix by calling `evaluate` once per cell,
/// states outermost.
pub fn sweep_matrix(
    states: &[usize],
    windows: &[usize],
    mut evaluate: impl FnMut(Cell) -> Result<RunSummary>,
) -> Result<SweepMatrix> {
    let mut cells = Vec::with_capacity(states.len());
    for &k in states {
        let mut row = Vec::with_capacity(windows.len());
        for &w in windows {
            row.push(evaluate(Cell { states: k, window: w })?);
        }
        cells.push(row);
    }
    SweepMatrix::new(states.to_vec(), windows.to_vec(), cells)
}

fn stage_sweep(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    if !cfg.runs_sweep() {
        return Err(Error::Config("the sweep needs at least two (states, window) cells".into()));
    }
    let mut data = Data::load(cfg, layout)?;
    let set = cfg.sweep.feature_set;
    let params = load_tuned(layout, set)?;
    sweep_matrix(&cfg.hmm.states, &cfg.hmm.windows, |cell| {
        data.load_cells(layout, &[cell])?;
        let (record, curves) =
            eval_single(&data, &cell.slug(), set, MissingStrategy::Default0, cell, params, &cfg.seeds)?;
        data.banks.remove(&cell);
        save_record(&layout.sweep_dir(cell), &record, &curves)?;
        log::info!("sweep {}: {}", cell.slug(), record.summary()?.display());
        record.summary()
    })?;
    Ok(())
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn results_csv(records: &[EvalRecord]) -> Result<String> {
    let mut s = String::from("name,feature_set,strategy,hmm_cell,n_rows,n_frauds,n_test,mean_pr_auc,std_pr_auc,runs\n");
    for r in records {
        let sum = r.summary()?;
        let runs: Vec<String> = r.aucs.iter().map(|&a| fmt6(a)).collect();
        s += &format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.name,
            r.feature_set,
            r.strategy,
            r.cell.slug(),
            r.n_rows,
            r.n_frauds,
            r.n_test,
            fmt6(sum.mean_auc),
            fmt6(sum.std_auc),
            runs.join(";")
        );
    }
    Ok(s)
}

fn missing_table(records: &[EvalRecord]) -> Result<(String, String)> {
    let mut csv = String::from("strategy,feature_set,n_rows,n_test,coverage,n_frauds,mean_pr_auc,std_pr_auc\n");
    let mut body = Vec::new();
    for r in records {
        let sum = r.summary()?;
        csv += &format!(
            "{},{},{},{},{},{},{},{}\n",
            r.name,
            r.feature_set,
            r.n_rows,
            r.n_test,
            fmt6(r.coverage()),
            r.n_frauds,
            fmt6(sum.mean_auc),
            fmt6(sum.std_auc)
        );
        body.push(vec![
            r.name.clone(),
            r.feature_set.to_string(),
            format!("{}/{}", r.n_rows, r.n_test),
            format!("{:.1}%", 100.0 * r.coverage()),
            sum.display(),
        ]);
    }
    let header: Vec<String> =
        ["strategy", "features", "test rows", "coverage", "PR-AUC"].iter().map(|s| s.to_string()).collect();
    let mut text = render_text(&header, &body);
    let whole: Vec<&EvalRecord> = records.iter().filter(|r| r.n_rows == r.n_test).collect();
    if let Some(best) = whole.iter().max_by(|a, b| mean(a).total_cmp(&mean(b))) {
        text += &format!("best on the whole test set: {}\n", best.name);
    }
    Ok((csv, text))
}

fn mean(r: &EvalRecord) -> f64 {
    r.aucs.iter().sum::<f64>() / r.aucs.len() as f64
}

fn history_table(counts: &[HistoryCount]) -> (String, String) {
    let total = counts.iter().find(|c| c.min_history == 0).map_or(0, |c| c.n_transactions);
    let mut csv = String::from("subset,n_transactions,n_frauds,share\n");
    let mut body = Vec::new();
    for c in counts {
        let name = if c.min_history == 0 { "All".to_string() } else { format!("History>={}", c.min_history) };
        let share = c.n_transactions as f64 / total.max(1) as f64;
        csv += &format!("{name},{},{},{}\n", c.n_transactions, c.n_frauds, fmt6(share));
        body.push(vec![name, c.n_transactions.to_string(), c.n_frauds.to_string(), format!("{:.1}%", 100.0 * share)]);
    }
    let header: Vec<String> = ["test subset", "transactions", "frauds", "share"].iter().map(|s| s.to_string()).collect();
    (csv, render_text(&header, &body))
}

fn stage_report(cfg: &PipelineConfig, layout: &Layout) -> Result<()> {
    let out = layout.reports();
    mkdir(&out)?;
    let load = |dir: PathBuf| read_json::<EvalRecord>(&dir.join("runs.json"));
    let records = cfg
        .features
        .evaluated_sets()
        .into_iter()
        .map(|s| load(layout.eval_dir("sets").join(set_slug(s))))
        .collect::<Result<Vec<_>>>()?;
    write_text(&out.join("results.csv"), &results_csv(&records)?)?;
    if cfg.features.compare_hmm {
        let pairs = records
            .chunks(2)
            .map(|p| Ok((p[0].summary()?, p[1].summary()?)))
            .collect::<Result<Vec<_>>>()?;
        let table = comparison_table(pairs);
        write_text(&out.join("comparison.csv"), &table.to_csv())?;
        write_text(&out.join("comparison.txt"), &table.to_text())?;
    }
    if cfg.missing.enabled {
        let dir = layout.eval_dir("missing");
        let rows = MISSING_ROWS.iter().map(|n| load(dir.join(n))).collect::<Result<Vec<_>>>()?;
        let (csv, text) = missing_table(&rows)?;
        write_text(&out.join("missing_values.csv"), &csv)?;
        write_text(&out.join("missing_values.txt"), &text)?;
        let (csv, text) = history_table(&read_json::<Vec<HistoryCount>>(&dir.join("history_counts.json"))?);
        write_text(&out.join("history_counts.csv"), &csv)?;
        write_text(&out.join("history_counts.txt"), &text)?;
    }
    if cfg.runs_sweep() {
        let matrix = sweep_matrix(&cfg.hmm.states, &cfg.hmm.windows, |cell| load(layout.sweep_dir(cell))?.summary())?;
        write_text(&out.join("sweep.csv"), &matrix.to_csv())?;
        write_text(&out.join("sweep.txt"), &matrix.to_text())?;
    }
    Ok(())
}

/// Loads every per-set evaluation record of a finished run.
pub fn load_results(cfg: &PipelineConfig) -> Result<Vec<EvalRecord>> {
    let layout = Layout::new(&cfg.out_dir);
    cfg.features
        .evaluated_sets()
        .into_iter()
        .map(|s| read_json(&layout.eval_dir("sets").join(set_slug(s)).join("runs.json")))
        .collect()
}

/// Loads the missing-value study records in [`MISSING_ROWS`] order.
pub fn load_missing_study(cfg: &PipelineConfig) -> Result<Vec<EvalRecord>> {
    let layout = Layout::new(&cfg.out_dir);
    MISSING_ROWS.iter().map(|n| read_json(&layout.eval_dir("missing").join(n).join("runs.json"))).collect()
}

/// Loads the history coverage counts of the missing-value study.
pub fn load_history_counts(cfg: &PipelineConfig) -> Result<Vec<HistoryCount>> {
    read_json(&Layout::new(&cfg.out_dir).eval_dir("missing").join("history_counts.json"))
}

/// Rebuilds the sweep matrix from the per-cell records.
pub fn load_sweep(cfg: &PipelineConfig) -> Result<SweepMatrix> {
    let layout = Layout::new(&cfg.out_dir);
    sweep_matrix(&cfg.hmm.states, &cfg.hmm.windows, |cell| {
        read_json::<EvalRecord>(&layout.sweep_dir(cell).join("runs.json"))?.summary()
    })
}
