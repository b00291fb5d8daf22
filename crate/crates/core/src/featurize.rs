//! Per-transaction features: HMM likelihoods of trailing windows, 24-hour
//! aggregates and label-encoded raw columns, assembled into matrices.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ghmm::{log_forward, GaussianHmm};
use crate::learners::Matrix;
use crate::seqcorpus::{Actor, HistoryIndex, Perspective, Signal};
use crate::txmodel::{Transaction, SECONDS_PER_DAY};

pub const N_HMM: usize = 8;
pub const RAW_COLUMNS: [&str; 6] = ["amount", "hour", "dow", "country", "mcc", "channel"];
pub const AGG_CH_COLUMNS: [&str; 4] = ["aggch1", "aggch2", "aggch3", "aggch4"];
pub const AGG_TM_COLUMNS: [&str; 4] = ["aggtm1", "aggtm2", "aggtm3", "aggtm4"];

/// The eight trained models of one `(K, w)` cell, in perspective order.
#[derive(Debug, Clone)]
pub struct HmmBank {
    pub window: usize,
    models: Vec<GaussianHmm>,
}

impl HmmBank {
    pub fn new(window: usize, models: Vec<GaussianHmm>) -> Result<Self> {
        if window < 2 {
            return Err(Error::Config(format!("window must be at least 2, got {window}")));
        }
        if models.len() != N_HMM {
            return Err(Error::Config(format!("expected {N_HMM} models, got {}", models.len())));
        }
        for (p, m) in Perspective::ALL.iter().zip(&models) {
            if let Some(meta) = m.training() {
                if meta.window.is_some_and(|w| w != window) {
                    return Err(Error::Config(format!("model {p} was trained with window {:?}, bank uses {window}", meta.window)));
                }
            }
        }
        Ok(Self { window, models })
    }

    pub fn model(&self, p: Perspective) -> &GaussianHmm {
        &self.models[p.index()]
    }

    pub fn models(&self) -> &[GaussianHmm] {
        &self.models
    }

    /// Writes `{slug}.json` for every perspective into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for p in Perspective::ALL {
            self.model(p).save(dir.join(format!("{}.json", p.slug())))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path, window: usize) -> Result<Self> {
        let models = Perspective::ALL
            .iter()
            .map(|p| GaussianHmm::load(dir.join(format!("{}.json", p.slug()))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(window, models)
    }

    /// SHA-256 of every model's serialised form, keyed by perspective slug.
    pub fn hashes(&self) -> Result<BTreeMap<String, String>> {
        Perspective::ALL
            .iter()
            .map(|&p| {
                let digest = Sha256::digest(self.model(p).to_json()?.as_bytes());
                Ok((p.slug(), hex::encode(digest)))
            })
            .collect()
    }
}

/// HMM log-likelihood features of one transaction; `NaN` marks a missing one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmFeatureSet {
    pub values: [f64; N_HMM],
}

impl HmmFeatureSet {
    pub const MISSING: f64 = f64::NAN;

    pub fn all_missing() -> Self {
        Self { values: [Self::MISSING; N_HMM] }
    }

    pub fn present(&self, i: usize) -> bool {
        !self.values[i].is_nan()
    }

    pub fn n_present(&self) -> usize {
        (0..N_HMM).filter(|&i| self.present(i)).count()
    }

    pub fn get(&self, p: Perspective) -> Option<f64> {
        let v = self.values[p.index()];
        (!v.is_nan()).then_some(v)
    }
}

/// Missing entries become exactly `0.0`.
pub fn apply_default0(fs: &HmmFeatureSet) -> [f64; N_HMM] {
    fs.values.map(|v| if v.is_nan() { 0.0 } else { v })
}

fn check_transform(index: &HistoryIndex, bank: &HmmBank) -> Result<()> {
    for (p, m) in Perspective::ALL.iter().zip(bank.models()) {
        if m.transform() != index.transform() {
            return Err(Error::Config(format!(
                "model {p} uses transform {:?} but the history index uses {:?}",
                m.transform(),
                index.transform()
            )));
        }
    }
    Ok(())
}

fn hmm_features_unchecked(index: &HistoryIndex, tx: usize, bank: &HmmBank, buf: &mut Vec<f64>) -> HmmFeatureSet {
    let mut fs = HmmFeatureSet::all_missing();
    for actor in [Actor::CardHolder, Actor::Terminal] {
        for signal in [Signal::Amount, Signal::TimeDelta] {
            if !index.window_into(tx, actor, bank.window, signal, buf) {
                continue;
            }
            for p in Perspective::ALL.iter().filter(|p| p.actor == actor && p.signal == signal) {
                let ll = log_forward(bank.model(*p), buf).map(|f| f.loglik).unwrap_or(f64::NEG_INFINITY);
                // A vanished forward mass is still an observed (very unlikely) window.
                fs.values[p.index()] = ll.max(f64::MIN);
            }
        }
    }
    fs
}

/// Scores the trailing windows ending at transaction `tx` (an index into the
/// history) under each of the eight models.
pub fn compute_hmm_features(index: &HistoryIndex, tx: usize, bank: &HmmBank) -> Result<HmmFeatureSet> {
    check_transform(index, bank)?;
    Ok(hmm_features_unchecked(index, tx, bank, &mut Vec::new()))
}

/// [`compute_hmm_features`] for every transaction of the index, in order.
pub fn compute_hmm_features_all(index: &HistoryIndex, bank: &HmmBank) -> Result<Vec<HmmFeatureSet>> {
    check_transform(index, bank)?;
    Ok((0..index.len())
        .into_par_iter()
        .map_init(Vec::new, |buf, tx| hmm_features_unchecked(index, tx, bank, buf))
        .collect())
}

/// 24-hour card-holder and terminal aggregates (counts stored as reals).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AggregatedFeatures {
    pub ch: [f64; 4],
    pub tm: [f64; 4],
}

/// Aggregates over the window `(t - 24h, t]` of each transaction's card and
/// terminal. Same-timestamp transactions are all inside the window. Country
/// filters use the current transaction's country; the card-type filter uses
/// its channel. `txs` must be the transactions the index was built from.
pub fn compute_aggregates(txs: &[Transaction], index: &HistoryIndex) -> Result<Vec<AggregatedFeatures>> {
    if txs.len() != index.len() {
        return Err(Error::InvalidInput("transactions and history index differ in length".into()));
    }
    let mut out = vec![AggregatedFeatures::default(); txs.len()];
    for actor in [Actor::CardHolder, Actor::Terminal] {
        let history = index.actors(actor);
        for tx in 0..txs.len() {
            if history.position(tx) != 0 {
                continue;
            }
            aggregate_actor(txs, history.members_of(tx), actor, &mut out);
        }
    }
    Ok(out)
}

fn aggregate_actor(txs: &[Transaction], members: &[u32], actor: Actor, out: &mut [AggregatedFeatures]) {
    let mut lo = 0;
    let mut hi = 0;
    for &cur in members {
        let cur = cur as usize;
        let t = txs[cur].timestamp;
        while txs[members[lo] as usize].timestamp <= t - SECONDS_PER_DAY {
            lo += 1;
        }
        while hi < members.len() && txs[members[hi] as usize].timestamp <= t {
            hi += 1;
        }
        let mut agg = [0.0; 4];
        for &m in &members[lo..hi] {
            let other = &txs[m as usize];
            let matches = match actor {
                Actor::CardHolder => other.country == txs[cur].country,
                Actor::Terminal => other.channel == txs[cur].channel,
            };
            agg[0] += 1.0;
            agg[1] += other.amount;
            if matches {
                agg[2] += 1.0;
                agg[3] += other.amount;
            }
        }
        match actor {
            Actor::CardHolder => out[cur].ch = agg,
            Actor::Terminal => out[cur].tm = agg,
        }
    }
}

/// Label encoder: codes `1..` by first appearance during fitting, `0` for
/// anything unseen.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryEncoder {
    pub categories: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl CategoryEncoder {
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut enc = Self::default();
        for v in values {
            if !enc.lookup.contains_key(v) {
                enc.categories.push(v.to_string());
                enc.lookup.insert(v.to_string(), enc.categories.len());
            }
        }
        enc
    }

    pub fn from_categories(categories: Vec<String>) -> Self {
        Self::fit(categories.iter().map(String::as_str))
    }

    pub fn encode(&self, v: &str) -> f64 {
        self.lookup.get(v).copied().unwrap_or(0) as f64
    }
}

/// Encoders for the three categorical raw columns, frozen on training rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawEncoder {
    pub country: CategoryEncoder,
    pub mcc: CategoryEncoder,
    pub channel: CategoryEncoder,
}

impl RawEncoder {
    pub fn fit(txs: &[Transaction], rows: &[usize]) -> Self {
        Self {
            country: CategoryEncoder::fit(rows.iter().map(|&i| txs[i].country.as_str())),
            mcc: CategoryEncoder::fit(rows.iter().map(|&i| txs[i].mcc.as_str())),
            channel: CategoryEncoder::fit(rows.iter().map(|&i| txs[i].channel.code())),
        }
    }

    /// Restores lookup tables after deserialisation.
    pub fn rebuilt(self) -> Self {
        Self {
            country: CategoryEncoder::from_categories(self.country.categories),
            mcc: CategoryEncoder::from_categories(self.mcc.categories),
            channel: CategoryEncoder::from_categories(self.channel.categories),
        }
    }

    pub fn encode(&self, tx: &Transaction) -> [f64; 6] {
        [
            tx.amount,
            tx.hour() as f64,
            tx.day_of_week() as f64,
            self.country.encode(&tx.country),
            self.mcc.encode(&tx.mcc),
            self.channel.encode(tx.channel.code()),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggBlock {
    None,
    CardHolder,
    All,
}

/// Which column blocks a matrix carries: raw always, then aggregates, then HMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureSet {
    pub agg: AggBlock,
    pub hmm: bool,
}

impl FeatureSet {
    pub const RAW: Self = Self { agg: AggBlock::None, hmm: false };
    pub const RAW_AGG_CH: Self = Self { agg: AggBlock::CardHolder, hmm: false };
    pub const RAW_ALL_AGG: Self = Self { agg: AggBlock::All, hmm: false };

    pub fn with_hmm(self) -> Self {
        Self { hmm: true, ..self }
    }

    pub fn without_hmm(self) -> Self {
        Self { hmm: false, ..self }
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = RAW_COLUMNS.iter().map(|s| s.to_string()).collect();
        if matches!(self.agg, AggBlock::CardHolder | AggBlock::All) {
            cols.extend(AGG_CH_COLUMNS.iter().map(|s| s.to_string()));
        }
        if self.agg == AggBlock::All {
            cols.extend(AGG_TM_COLUMNS.iter().map(|s| s.to_string()));
        }
        if self.hmm {
            cols.extend(Perspective::ALL.iter().map(|p| p.feature_name()));
        }
        cols
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.agg {
            AggBlock::None => "raw",
            AggBlock::CardHolder => "raw+aggCH",
            AggBlock::All => "raw+allagg",
        })?;
        if self.hmm {
            f.write_str("+HMM")?;
        }
        Ok(())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (base, hmm) = match s.strip_suffix("+HMM") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let agg = match base {
            "raw" => AggBlock::None,
            "raw+aggCH" => AggBlock::CardHolder,
            "raw+allagg" => AggBlock::All,
            _ => return Err(Error::Config(format!("unknown feature set `{s}`"))),
        };
        Ok(Self { agg, hmm })
    }
}

impl Serialize for FeatureSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How transactions with incomplete HMM features enter a single matrix.
/// The two ensemble strategies are built in `learners`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingStrategy {
    Default0,
    WeightedPr,
    StackedRf,
    Exclude,
}

impl fmt::Display for MissingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Default0 => "default0",
            Self::WeightedPr => "weighted_pr",
            Self::StackedRf => "stacked_rf",
            Self::Exclude => "exclude",
        })
    }
}

impl FromStr for MissingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default0" => Ok(Self::Default0),
            "weighted_pr" => Ok(Self::WeightedPr),
            "stacked_rf" => Ok(Self::StackedRf),
            "exclude" => Ok(Self::Exclude),
            _ => Err(Error::Config(format!("unknown missing-value strategy `{s}`"))),
        }
    }
}

/// Precomputed per-transaction blocks for one history index.
#[derive(Debug, Clone, Copy)]
pub struct Blocks<'a> {
    pub txs: &'a [Transaction],
    pub encoder: &'a RawEncoder,
    pub aggregates: Option<&'a [AggregatedFeatures]>,
    pub hmm: Option<&'a [HmmFeatureSet]>,
}

#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub feature_set: FeatureSet,
    pub columns: Vec<String>,
    pub x: Matrix,
    pub y: Vec<u8>,
    pub tx_ids: Vec<u64>,
    /// Positions of the rows in the transaction slice.
    pub rows: Vec<usize>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// CSV with header `tx_id,<columns>,label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(e))?;
        let mut header = vec!["tx_id".to_string()];
        header.extend(self.columns.iter().cloned());
        header.push("label".into());
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            rec.clear();
            rec.push(self.tx_ids[r].to_string());
            rec.extend(self.x.row(r).iter().map(|v| v.to_string()));
            rec.push(self.y[r].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Builds the matrix for `rows` (indices into `blocks.txs`). Under
/// [`MissingStrategy::Exclude`] rows with any missing HMM feature are
/// dropped; otherwise missing HMM entries are set to 0.
pub fn assemble(rows: &[usize], feature_set: FeatureSet, blocks: &Blocks, strategy: MissingStrategy) -> Result<FeatureMatrix> {
    if feature_set.agg != AggBlock::None && blocks.aggregates.is_none() {
        return Err(Error::Config(format!("{feature_set} needs aggregate features")));
    }
    let needs_hmm = feature_set.hmm || strategy == MissingStrategy::Exclude;
    if needs_hmm && blocks.hmm.is_none() {
        return Err(Error::Config(format!("{feature_set} ({strategy}) needs HMM features")));
    }
    if matches!(strategy, MissingStrategy::WeightedPr | MissingStrategy::StackedRf) {
        return Err(Error::Config(format!("{strategy} is an ensemble strategy, not a matrix layout")));
    }
    let kept: Vec<usize> = match strategy {
        MissingStrategy::Exclude => {
            let hmm = blocks.hmm.expect("checked above");
            rows.iter().copied().filter(|&r| hmm[r].n_present() == N_HMM).collect()
        }
        _ => rows.to_vec(),
    };
    let columns = feature_set.columns();
    let mut data = Vec::with_capacity(kept.len() * columns.len());
    for &r in &kept {
        data.extend(blocks.encoder.encode(&blocks.txs[r]));
        if let Some(agg) = blocks.aggregates.filter(|_| feature_set.agg != AggBlock::None) {
            data.extend(agg[r].ch);
            if feature_set.agg == AggBlock::All {
                data.extend(agg[r].tm);
            }
        }
        if feature_set.hmm {
            data.extend(apply_default0(&blocks.hmm.expect("checked above")[r]));
        }
    }
    Ok(FeatureMatrix {
        feature_set,
        x: Matrix::from_vec(kept.len(), columns.len(), data)?,
        columns,
        y: kept.iter().map(|&r| blocks.txs[r].is_fraud() as u8).collect(),
        tx_ids: kept.iter().map(|&r| blocks.txs[r].tx_id).collect(),
        rows: kept,
    })
}

/// Sidecar describing how a feature CSV was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub feature_set: FeatureSet,
    pub strategy: MissingStrategy,
    pub window: Option<usize>,
    pub n_states: Option<usize>,
    pub n_rows: usize,
    pub columns: Vec<String>,
    pub model_hashes: BTreeMap<String, String>,
    pub encoder: RawEncoder,
    pub aggregate_window: String,
    pub card_type_source: String,
}

impl FeatureMeta {
    pub fn new(m: &FeatureMatrix, strategy: MissingStrategy, encoder: &RawEncoder, bank: Option<(&HmmBank, usize)>) -> Result<Self> {
        Ok(Self {
            feature_set: m.feature_set,
            strategy,
            window: bank.map(|(b, _)| b.window),
            n_states: bank.map(|(_, k)| k),
            n_rows: m.n_rows(),
            columns: m.columns.clone(),
            model_hashes: match bank {
                Some((b, _)) => b.hashes()?,
                None => BTreeMap::new(),
            },
            encoder: encoder.clone(),
            aggregate_window: "(t-86400s, t]".into(),
            card_type_source: "channel".into(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}
