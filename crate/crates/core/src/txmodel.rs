//! Transaction records, CSV ingestion and the temporal train / validation /
//! gap / test partition.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowError};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Column order of the transaction CSV contract.
pub const CSV_HEADER: [&str; 9] = [
    "tx_id",
    "card_id",
    "terminal_id",
    "timestamp",
    "amount",
    "country",
    "mcc",
    "channel",
    "label",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "EC")]
    Ecommerce,
    #[serde(rename = "F2F")]
    FaceToFace,
}

impl Channel {
    pub fn code(self) -> &'static str {
        match self {
            Channel::Ecommerce => "EC",
            Channel::FaceToFace => "F2F",
        }
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "EC" => Ok(Channel::Ecommerce),
            "F2F" => Ok(Channel::FaceToFace),
            other => Err(format!("unknown channel `{other}` (expected EC or F2F)")),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Genuine,
    Fraud,
}

impl Label {
    pub fn is_fraud(self) -> bool {
        self == Label::Fraud
    }

    fn code(self) -> u8 {
        match self {
            Label::Genuine => 0,
            Label::Fraud => 1,
        }
    }
}

/// A single payment event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: u64,
    pub card_id: String,
    pub terminal_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub amount: f64,
    pub country: String,
    pub mcc: String,
    pub channel: Channel,
    pub label: Label,
}

impl Transaction {
    pub fn is_fraud(&self) -> bool {
        self.label.is_fraud()
    }

    /// Hour of day in UTC, 0..=23.
    pub fn hour(&self) -> u32 {
        self.timestamp.rem_euclid(SECONDS_PER_DAY) as u32 / 3600
    }

    /// Day of week with Monday = 0.
    pub fn day_of_week(&self) -> u32 {
        // 1970-01-01 was a Thursday.
        (self.timestamp.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as u32
    }
}

/// Canonical ordering: ascending timestamp, ties by ascending `tx_id`.
pub fn sort_transactions(txs: &mut [Transaction]) {
    txs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.tx_id.cmp(&b.tx_id)));
}

pub fn load_transactions(path: impl AsRef<Path>) -> Result<Vec<Transaction>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_transactions(file)
}

/// Parses the CSV contract from any reader. Every malformed row is reported;
/// the result is sorted by `(timestamp, tx_id)`.
pub fn read_transactions<R: Read>(reader: R) -> Result<Vec<Transaction>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 9];
    for (slot, name) in col.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))?;
    }

    let mut txs = Vec::new();
    let mut bad = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                bad.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(col[i]).unwrap_or("").trim();
        match parse_row(field) {
            Ok(tx) => {
                if !seen.insert(tx.tx_id) {
                    bad.push(RowError {
                        line,
                        message: format!("duplicate tx_id {}", tx.tx_id),
                    });
                } else {
                    txs.push(tx);
                }
            }
            Err(message) => bad.push(RowError { line, message }),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Rows(bad));
    }
    sort_transactions(&mut txs);
    Ok(txs)
}

fn parse_row<'a>(field: impl Fn(usize) -> &'a str) -> std::result::Result<Transaction, String> {
    let tx_id = field(0)
        .parse::<u64>()
        .map_err(|_| format!("unparseable tx_id `{}`", field(0)))?;
    let card_id = field(1).to_string();
    let terminal_id = field(2).to_string();
    if card_id.is_empty() {
        return Err("empty card_id".into());
    }
    if terminal_id.is_empty() {
        return Err("empty terminal_id".into());
    }
    let timestamp = field(3)
        .parse::<i64>()
        .map_err(|_| format!("unparseable timestamp `{}`", field(3)))?;
    let amount = field(4)
        .parse::<f64>()
        .map_err(|_| format!("unparseable amount `{}`", field(4)))?;
    if !(amount.is_finite() && amount > 0.0) {
        return Err(format!("amount must be strictly positive, got {amount}"));
    }
    let channel = field(7).parse::<Channel>()?;
    let label = match field(8) {
        "0" => Label::Genuine,
        "1" => Label::Fraud,
        other => return Err(format!("label must be 0 or 1, got `{other}`")),
    };
    Ok(Transaction {
        tx_id,
        card_id,
        terminal_id,
        timestamp,
        amount,
        country: field(5).to_string(),
        mcc: field(6).to_string(),
        channel,
        label,
    })
}

pub fn save_transactions(path: impl AsRef<Path>, txs: &[Transaction]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_transactions(file, txs)
}

pub fn write_transactions<W: Write>(writer: W, txs: &[Transaction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for tx in txs {
        w.write_record([
            tx.tx_id.to_string().as_str(),
            &tx.card_id,
            &tx.terminal_id,
            &tx.timestamp.to_string(),
            &tx.amount.to_string(),
            &tx.country,
            &tx.mcc,
            tx.channel.code(),
            &tx.label.code().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Inclusive `[start, end]` timestamp range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn new(start: i64, end: i64) -> Self {
        Self { start, end }
    }

    /// Whole calendar days `[first 00:00:00, last 23:59:59]` UTC.
    pub fn from_dates(first: NaiveDate, last: NaiveDate) -> Self {
        Self {
            start: midnight(first),
            end: midnight(last) + SECONDS_PER_DAY - 1,
        }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t <= self.end
    }
}

pub fn midnight(date: NaiveDate) -> i64 {
    date.and_time(NaiveTime::MIN).and_utc().timestamp()
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(s.trim(), "%d.%m.%Y"))
        .map_err(|_| Error::Config(format!("unparseable date `{s}` (use YYYY-MM-DD)")))
}

/// Temporal split. The gap is everything strictly between the end of
/// validation and the start of test; it feeds feature history only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: TimeRange,
    pub validation: TimeRange,
    pub gap_days: i64,
    pub test: TimeRange,
}

impl DatasetSplit {
    /// The 2015 calendar split: train 01.03–26.04, validation 27.04–30.04,
    /// 7-day gap 01.05–07.05, test 08.05–31.05.
    pub fn calendar_2015() -> Self {
        let d = |m, day| NaiveDate::from_ymd_opt(2015, m, day).expect("valid date");
        Self {
            train: TimeRange::from_dates(d(3, 1), d(4, 26)),
            validation: TimeRange::from_dates(d(4, 27), d(4, 30)),
            gap_days: 7,
            test: TimeRange::from_dates(d(5, 8), d(5, 31)),
        }
    }

    pub fn gap(&self) -> TimeRange {
        TimeRange::new(self.validation.end + 1, self.test.start - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("train", self.train),
            ("validation", self.validation),
            ("test", self.test),
        ];
        for (name, r) in ranges {
            if r.start > r.end {
                return Err(Error::Config(format!("{name} range ends before it starts")));
            }
        }
        if self.train.end >= self.validation.start {
            return Err(Error::Config("validation must start after train ends".into()));
        }
        if self.validation.end >= self.test.start {
            return Err(Error::Config("test must start after validation ends".into()));
        }
        if self.gap_days < 0 {
            return Err(Error::Config("gap_days must be non-negative".into()));
        }
        let gap_seconds = self.test.start - self.validation.end - 1;
        if gap_seconds < self.gap_days * SECONDS_PER_DAY {
            return Err(Error::Config(format!(
                "test starts {gap_seconds}s after validation, shorter than the {}-day gap",
                self.gap_days
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subset {
    Train,
    Validation,
    Gap,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 4] = [Subset::Train, Subset::Validation, Subset::Gap, Subset::Test];

    pub fn name(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Validation => "validation",
            Subset::Gap => "gap",
            Subset::Test => "test",
        }
    }
}

/// Indices into the partitioned slice, per subset.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub gap: Vec<usize>,
    pub test: Vec<usize>,
    /// Transactions that fell outside all four ranges.
    pub dropped: usize,
    pub warnings: Vec<String>,
}

impl Partition {
    pub fn get(&self, subset: Subset) -> &[usize] {
        match subset {
            Subset::Train => &self.train,
            Subset::Validation => &self.validation,
            Subset::Gap => &self.gap,
            Subset::Test => &self.test,
        }
    }

    /// Subset label of every input transaction (`None` when dropped).
    pub fn assignment(&self, n: usize) -> Vec<Option<Subset>> {
        let mut out = vec![None; n];
        for s in Subset::ALL {
            for &i in self.get(s) {
                out[i] = Some(s);
            }
        }
        out
    }
}

/// Assigns every transaction to exactly one subset by timestamp.
pub fn partition(txs: &[Transaction], split: &DatasetSplit) -> Result<Partition> {
    split.validate()?;
    let gap = split.gap();
    let mut p = Partition::default();
    for (i, tx) in txs.iter().enumerate() {
        let t = tx.timestamp;
        if split.train.contains(t) {
            p.train.push(i);
        } else if split.validation.contains(t) {
            p.validation.push(i);
        } else if gap.contains(t) {
            p.gap.push(i);
        } else if split.test.contains(t) {
            p.test.push(i);
        } else {
            p.dropped += 1;
        }
    }
    for s in Subset::ALL {
        if p.get(s).is_empty() {
            let msg = format!("{} subset is empty", s.name());
            log::warn!("{msg}");
            p.warnings.push(msg);
        }
    }
    if p.dropped > 0 {
        log::info!("{} transactions outside the split ranges were dropped", p.dropped);
    }
    Ok(p)
}
