//! Perspective corpora and per-actor transaction history.
//!
//! A perspective fixes three binary choices: whether the actor's history is
//! genuine or compromised, whether the actor is the card-holder or the
//! terminal, and whether the observed signal is the amount or the time
//! elapsed since the actor's previous transaction.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::txmodel::{Label, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    Genuine,
    Compromised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Actor {
    CardHolder,
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Signal {
    Amount,
    TimeDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Perspective {
    pub status: Status,
    pub actor: Actor,
    pub signal: Signal,
}

const fn p(status: Status, actor: Actor, signal: Signal) -> Perspective {
    Perspective { status, actor, signal }
}

impl Perspective {
    /// All eight perspectives in feature order `hmm1..hmm8`:
    /// genuine CH amount, genuine CH time-delta, genuine TM amount,
    /// genuine TM time-delta, then the same four for compromised histories.
    pub const ALL: [Perspective; 8] = {
        use Actor::*;
        use Signal::*;
        use Status::*;
        [
            p(Genuine, CardHolder, Amount),
            p(Genuine, CardHolder, TimeDelta),
            p(Genuine, Terminal, Amount),
            p(Genuine, Terminal, TimeDelta),
            p(Compromised, CardHolder, Amount),
            p(Compromised, CardHolder, TimeDelta),
            p(Compromised, Terminal, Amount),
            p(Compromised, Terminal, TimeDelta),
        ]
    };

    /// Position in [`Perspective::ALL`].
    pub fn index(self) -> usize {
        let s = match self.status {
            Status::Genuine => 0,
            Status::Compromised => 4,
        };
        let a = match self.actor {
            Actor::CardHolder => 0,
            Actor::Terminal => 2,
        };
        let g = match self.signal {
            Signal::Amount => 0,
            Signal::TimeDelta => 1,
        };
        s + a + g
    }

    /// Stable identifier, e.g. `ch_amount_genuine`.
    pub fn slug(self) -> String {
        let actor = match self.actor {
            Actor::CardHolder => "ch",
            Actor::Terminal => "tm",
        };
        let signal = match self.signal {
            Signal::Amount => "amount",
            Signal::TimeDelta => "tdelta",
        };
        let status = match self.status {
            Status::Genuine => "genuine",
            Status::Compromised => "compromised",
        };
        format!("{actor}_{signal}_{status}")
    }

    pub fn from_slug(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.slug() == s)
    }

    /// Feature column name, `hmm1` .. `hmm8`.
    pub fn feature_name(self) -> String {
        format!("hmm{}", self.index() + 1)
    }
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.slug())
    }
}

/// Monotone map applied to raw amounts and time-deltas (seconds) before they
/// reach an HMM. Stored alongside every trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum SignalTransform {
    #[default]
    Log1p,
    Identity,
}

impl SignalTransform {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            SignalTransform::Log1p => x.ln_1p(),
            SignalTransform::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub tx_id: u64,
    pub timestamp: i64,
    pub amount: f64,
    pub label: Label,
}

/// Time-ordered transactions of one card-holder or terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorSequence {
    pub actor_id: String,
    pub observations: Vec<Observation>,
    pub status: Status,
}

impl ActorSequence {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

pub fn actor_id(tx: &Transaction, actor: Actor) -> &str {
    match actor {
        Actor::CardHolder => &tx.card_id,
        Actor::Terminal => &tx.terminal_id,
    }
}

/// One sequence per distinct actor, ordered by actor id. An actor is
/// compromised when any of its transactions is fraudulent.
pub fn group_by_actor(txs: &[Transaction], actor: Actor) -> Vec<ActorSequence> {
    let mut groups: BTreeMap<&str, Vec<Observation>> = BTreeMap::new();
    for tx in txs {
        groups.entry(actor_id(tx, actor)).or_default().push(Observation {
            tx_id: tx.tx_id,
            timestamp: tx.timestamp,
            amount: tx.amount,
            label: tx.label,
        });
    }
    groups
        .into_iter()
        .map(|(id, mut observations)| {
            observations.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then(a.tx_id.cmp(&b.tx_id)));
            let status = if observations.iter().any(|o| o.label.is_fraud()) {
                Status::Compromised
            } else {
                Status::Genuine
            };
            ActorSequence {
                actor_id: id.to_string(),
                observations,
                status,
            }
        })
        .collect()
}

/// Transformed signal of a sequence: one value per transaction for amounts,
/// one per consecutive pair for time-deltas.
pub fn extract_signal(seq: &ActorSequence, signal: Signal) -> Vec<f64> {
    extract_signal_with(seq, signal, SignalTransform::Log1p)
}

pub fn extract_signal_with(seq: &ActorSequence, signal: Signal, transform: SignalTransform) -> Vec<f64> {
    let obs = &seq.observations;
    match signal {
        Signal::Amount => obs.iter().map(|o| transform.apply(o.amount)).collect(),
        Signal::TimeDelta => obs
            .windows(2)
            .map(|w| transform.apply((w[1].timestamp - w[0].timestamp) as f64))
            .collect(),
    }
}

/// Training sequences for one perspective.
#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveCorpus {
    pub perspective: Perspective,
    pub sequences: Vec<Vec<f64>>,
}

impl PerspectiveCorpus {
    pub fn n_observations(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn pooled(&self) -> impl Iterator<Item = f64> + '_ {
        self.sequences.iter().flatten().copied()
    }

    /// One sequence per line, values separated by single spaces.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for seq in &self.sequences {
            let line: Vec<String> = seq.iter().map(f64::to_string).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(perspective: Perspective, r: R) -> Result<Self> {
        let mut sequences = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<corpus>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let seq = line
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::InvalidInput(format!("corpus line {}: bad value `{v}`", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            sequences.push(seq);
        }
        Ok(Self {
            perspective,
            sequences,
        })
    }
}

/// Minimum signal length for a sequence to enter a corpus: the actor must
/// have at least `window` transactions, and every sequence needs two values
/// for transition estimation.
pub fn min_signal_len(signal: Signal, window: usize) -> usize {
    let by_window = match signal {
        Signal::Amount => window,
        Signal::TimeDelta => window.saturating_sub(1),
    };
    by_window.max(2)
}

/// Builds the eight corpora (in [`Perspective::ALL`] order) from card-holder
/// and terminal groupings of the training transactions.
pub fn build_corpora(
    cards: &[ActorSequence],
    terminals: &[ActorSequence],
    window: usize,
) -> Result<Vec<PerspectiveCorpus>> {
    build_corpora_with(cards, terminals, window, SignalTransform::Log1p)
}

pub fn build_corpora_with(
    cards: &[ActorSequence],
    terminals: &[ActorSequence],
    window: usize,
    transform: SignalTransform,
) -> Result<Vec<PerspectiveCorpus>> {
    if window < 2 {
        return Err(Error::Config(format!("window must be at least 2, got {window}")));
    }
    let mut out = Vec::with_capacity(8);
    for p in Perspective::ALL {
        let groups = match p.actor {
            Actor::CardHolder => cards,
            Actor::Terminal => terminals,
        };
        let min_len = min_signal_len(p.signal, window);
        let sequences: Vec<Vec<f64>> = groups
            .iter()
            .filter(|s| s.status == p.status)
            .map(|s| extract_signal_with(s, p.signal, transform))
            .filter(|v| v.len() >= min_len)
            .collect();
        if sequences.is_empty() {
            return Err(Error::EmptyCorpus(p.slug()));
        }
        out.push(PerspectiveCorpus {
            perspective: p,
            sequences,
        });
    }
    Ok(out)
}

/// Time-ordered transaction positions of every actor of one kind.
#[derive(Debug, Clone, Default)]
pub struct ActorHistory {
    lookup: HashMap<String, u32>,
    members: Vec<Vec<u32>>,
    /// `(actor, position within the actor's list)` for every transaction.
    of_tx: Vec<(u32, u32)>,
}

impl ActorHistory {
    fn build(txs: &[Transaction], actor: Actor) -> Self {
        let mut h = ActorHistory {
            of_tx: Vec::with_capacity(txs.len()),
            ..Default::default()
        };
        for (i, tx) in txs.iter().enumerate() {
            let next = h.members.len() as u32;
            let a = *h.lookup.entry(actor_id(tx, actor).to_string()).or_insert(next);
            if a == next {
                h.members.push(Vec::new());
            }
            let list = &mut h.members[a as usize];
            h.of_tx.push((a, list.len() as u32));
            list.push(i as u32);
        }
        h
    }

    pub fn n_actors(&self) -> usize {
        self.members.len()
    }

    /// Transaction indices of the actor owning transaction `tx`, oldest first.
    pub fn members_of(&self, tx: usize) -> &[u32] {
        &self.members[self.of_tx[tx].0 as usize]
    }

    pub fn position(&self, tx: usize) -> usize {
        self.of_tx[tx].1 as usize
    }
}

/// Frozen index over every transaction available for feature history.
#[derive(Debug, Clone)]
pub struct HistoryIndex {
    timestamps: Vec<i64>,
    amounts: Vec<f64>,
    cards: ActorHistory,
    terminals: ActorHistory,
    transform: SignalTransform,
}

impl HistoryIndex {
    /// `txs` must be sorted by `(timestamp, tx_id)`.
    pub fn build(txs: &[Transaction]) -> Result<Self> {
        Self::build_with(txs, SignalTransform::Log1p)
    }

    pub fn build_with(txs: &[Transaction], transform: SignalTransform) -> Result<Self> {
        let sorted = txs
            .windows(2)
            .all(|w| (w[0].timestamp, w[0].tx_id) < (w[1].timestamp, w[1].tx_id));
        if !sorted {
            return Err(Error::InvalidInput(
                "history index needs transactions sorted by (timestamp, tx_id) with unique ids".into(),
            ));
        }
        Ok(Self {
            timestamps: txs.iter().map(|t| t.timestamp).collect(),
            amounts: txs.iter().map(|t| t.amount).collect(),
            cards: ActorHistory::build(txs, Actor::CardHolder),
            terminals: ActorHistory::build(txs, Actor::Terminal),
            transform,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn transform(&self) -> SignalTransform {
        self.transform
    }

    pub fn actors(&self, actor: Actor) -> &ActorHistory {
        match actor {
            Actor::CardHolder => &self.cards,
            Actor::Terminal => &self.terminals,
        }
    }

    pub fn timestamp(&self, tx: usize) -> i64 {
        self.timestamps[tx]
    }

    pub fn amount(&self, tx: usize) -> f64 {
        self.amounts[tx]
    }

    /// Number of the actor's transactions up to and including `tx`.
    pub fn history_len(&self, tx: usize, actor: Actor) -> usize {
        self.actors(actor).position(tx) + 1
    }

    /// Signal of the `w` most recent transactions of the actor ending at
    /// transaction `tx` (time-delta: the `w - 1` gaps inside that window).
    /// Writes into `out` and returns `false` when the actor has fewer than
    /// `w` transactions so far.
    pub fn window_into(&self, tx: usize, actor: Actor, w: usize, signal: Signal, out: &mut Vec<f64>) -> bool {
        let h = self.actors(actor);
        let pos = h.position(tx);
        let members = h.members_of(tx);
        self.fill_window(members, pos, w, signal, out)
    }

    pub fn window_for_tx(&self, tx: usize, actor: Actor, w: usize, signal: Signal) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(w);
        self.window_into(tx, actor, w, signal, &mut out).then_some(out)
    }

    /// Trailing window for `actor_id` ending at its latest transaction with
    /// timestamp `<= t`. `None` for unknown actors or short histories.
    pub fn trailing_window(&self, actor_id: &str, t: i64, w: usize, actor: Actor, signal: Signal) -> Option<Vec<f64>> {
        let h = self.actors(actor);
        let a = *h.lookup.get(actor_id)?;
        let members = &h.members[a as usize];
        let upto = members.partition_point(|&i| self.timestamps[i as usize] <= t);
        if upto == 0 {
            return None;
        }
        let mut out = Vec::with_capacity(w);
        self.fill_window(members, upto - 1, w, signal, &mut out).then_some(out)
    }

    fn fill_window(&self, members: &[u32], pos: usize, w: usize, signal: Signal, out: &mut Vec<f64>) -> bool {
        out.clear();
        if w == 0 || pos + 1 < w {
            return false;
        }
        let span = &members[pos + 1 - w..=pos];
        match signal {
            Signal::Amount => out.extend(span.iter().map(|&i| self.transform.apply(self.amounts[i as usize]))),
            Signal::TimeDelta => out.extend(span.windows(2).map(|p| {
                let dt = self.timestamps[p[1] as usize] - self.timestamps[p[0] as usize];
                self.transform.apply(dt as f64)
            })),
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txmodel::{sort_transactions, Channel};

    fn tx(id: u64, card: &str, term: &str, t: i64, amount: f64, fraud: bool) -> Transaction {
        Transaction {
            tx_id: id,
            card_id: card.into(),
            terminal_id: term.into(),
            timestamp: t,
            amount,
            country: "BE".into(),
            mcc: "5411".into(),
            channel: Channel::Ecommerce,
            label: if fraud { Label::Fraud } else { Label::Genuine },
        }
    }

    #[test]
    fn perspective_table_order() {
        let names: Vec<String> = Perspective::ALL.iter().map(|p| p.slug()).collect();
        assert_eq!(
            names,
            [
                "ch_amount_genuine",
                "ch_tdelta_genuine",
                "tm_amount_genuine",
                "tm_tdelta_genuine",
                "ch_amount_compromised",
                "ch_tdelta_compromised",
                "tm_amount_compromised",
                "tm_tdelta_compromised"
            ]
        );
        for (i, p) in Perspective::ALL.iter().enumerate() {
            assert_eq!(p.index(), i);
            assert_eq!(Perspective::from_slug(&p.slug()), Some(*p));
        }
        let distinct: std::collections::HashSet<_> = Perspective::ALL.iter().collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn one_fraud_compromises_the_card() {
        let txs = vec![
            tx(1, "c", "t", 0, 1.0, false),
            tx(2, "c", "t", 1, 1.0, true),
            tx(3, "c", "t", 2, 1.0, false),
        ];
        let g = group_by_actor(&txs, Actor::CardHolder);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].status, Status::Compromised);
    }

    #[test]
    fn grouping_by_card_and_terminal() {
        let txs = vec![tx(1, "a", "t", 0, 1.0, false), tx(2, "b", "t", 1, 1.0, false)];
        assert_eq!(group_by_actor(&txs, Actor::CardHolder).len(), 2);
        assert_eq!(group_by_actor(&txs, Actor::Terminal).len(), 1);
    }

    #[test]
    fn compromised_card_count_matches_independent_scan() {
        let cfg = crate::syngen::GeneratorConfig::ecommerce().scaled(0.05);
        let txs = crate::syngen::generate(&cfg).unwrap();
        let mut fraud_cards: Vec<&str> = txs.iter().filter(|t| t.is_fraud()).map(|t| t.card_id.as_str()).collect();
        fraud_cards.sort();
        fraud_cards.dedup();
        let groups = group_by_actor(&txs, Actor::CardHolder);
        let compromised = groups.iter().filter(|g| g.status == Status::Compromised).count();
        assert!(compromised > 0);
        assert_eq!(compromised, fraud_cards.len());
    }

    #[test]
    fn signal_formulas() {
        let txs = vec![tx(1, "c", "t", 0, 10.0, false), tx(2, "c", "t", 3600, 20.0, false)];
        let g = &group_by_actor(&txs, Actor::CardHolder)[0];
        assert_eq!(extract_signal(g, Signal::Amount), vec![11f64.ln(), 21f64.ln()]);

        let txs: Vec<_> = [0, 3600, 7200].iter().enumerate().map(|(i, &t)| tx(i as u64, "c", "t", t, 1.0, false)).collect();
        let g = &group_by_actor(&txs, Actor::CardHolder)[0];
        assert_eq!(extract_signal(g, Signal::TimeDelta), vec![3601f64.ln(), 3601f64.ln()]);

        let single = &group_by_actor(&txs[..1], Actor::CardHolder)[0];
        assert!(extract_signal(single, Signal::TimeDelta).is_empty());
    }

    #[test]
    fn all_genuine_data_cannot_fill_compromised_corpora() {
        let txs: Vec<_> = (0..5).map(|i| tx(i, "c", "t", i as i64 * 10, 1.0, false)).collect();
        let cards = group_by_actor(&txs, Actor::CardHolder);
        let terms = group_by_actor(&txs, Actor::Terminal);
        match build_corpora(&cards, &terms, 3) {
            Err(Error::EmptyCorpus(p)) => assert!(p.contains("compromised")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_card_per_status_with_three_transactions() {
        let mut txs = Vec::new();
        for i in 0..3 {
            txs.push(tx(i, "good", "t1", i as i64 * 100, 5.0, false));
            txs.push(tx(10 + i, "bad", "t2", i as i64 * 100 + 1, 5.0, i == 1));
        }
        sort_transactions(&mut txs);
        let cards = group_by_actor(&txs, Actor::CardHolder);
        let terms = group_by_actor(&txs, Actor::Terminal);
        let c = build_corpora(&cards, &terms, 3).unwrap();
        for p in Perspective::ALL {
            assert_eq!(c[p.index()].perspective, p);
            assert_eq!(c[p.index()].sequences.len(), 1, "{p}");
        }
        assert_eq!(c[0].sequences[0].len(), 3);
        assert_eq!(c[1].sequences[0].len(), 2);
    }

    #[test]
    fn corpus_sizes_match_brute_force_recount() {
        let cfg = crate::syngen::GeneratorConfig::ecommerce().scaled(0.05);
        let txs = crate::syngen::generate(&cfg).unwrap();
        let w = 5;
        let cards = group_by_actor(&txs, Actor::CardHolder);
        let terms = group_by_actor(&txs, Actor::Terminal);
        let corpora = build_corpora(&cards, &terms, w).unwrap();
        for p in Perspective::ALL {
            // Recount straight from the transaction list.
            let mut per_actor: HashMap<&str, (usize, bool)> = HashMap::new();
            for t in &txs {
                let e = per_actor.entry(actor_id(t, p.actor)).or_default();
                e.0 += 1;
                e.1 |= t.is_fraud();
            }
            let want_compromised = p.status == Status::Compromised;
            let expected = per_actor
                .values()
                .filter(|(n, f)| *f == want_compromised && *n >= w)
                .count();
            assert_eq!(corpora[p.index()].sequences.len(), expected, "{p}");
        }
    }

    #[test]
    fn corpus_text_round_trip() {
        let c = PerspectiveCorpus {
            perspective: Perspective::ALL[3],
            sequences: vec![vec![1.5, 0.1 + 0.2], vec![3.0, -2.25, 1e-300]],
        };
        let mut buf = Vec::new();
        c.write_text(&mut buf).unwrap();
        let back = PerspectiveCorpus::read_text(c.perspective, buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn trailing_windows() {
        let hour = 3600;
        let txs = vec![
            tx(1, "c", "t", 0, 10.0, false),
            tx(2, "c", "u", hour, 20.0, false),
            tx(3, "c", "u", 5 * hour, 30.0, false),
        ];
        let idx = HistoryIndex::build(&txs).unwrap();
        let amounts = idx.trailing_window("c", 5 * hour, 3, Actor::CardHolder, Signal::Amount).unwrap();
        assert_eq!(amounts, vec![11f64.ln(), 21f64.ln(), 31f64.ln()]);
        let deltas = idx.trailing_window("c", 5 * hour, 3, Actor::CardHolder, Signal::TimeDelta).unwrap();
        assert_eq!(deltas, vec![3601f64.ln(), 14401f64.ln()]);
        assert_eq!(idx.trailing_window("c", 0, 3, Actor::CardHolder, Signal::Amount), None);
        assert_eq!(idx.trailing_window("nobody", 5 * hour, 1, Actor::CardHolder, Signal::Amount), None);
        assert_eq!(idx.trailing_window("u", 5 * hour, 3, Actor::Terminal, Signal::Amount), None);
        assert_eq!(idx.window_for_tx(2, Actor::Terminal, 2, Signal::Amount).unwrap().len(), 2);
        assert_eq!(idx.history_len(2, Actor::CardHolder), 3);
        assert_eq!(idx.history_len(2, Actor::Terminal), 2);
    }

    #[test]
    fn unsorted_input_is_rejected() {
        let txs = vec![tx(2, "c", "t", 10, 1.0, false), tx(1, "c", "t", 0, 1.0, false)];
        assert!(HistoryIndex::build(&txs).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_txs() -> impl Strategy<Value = Vec<Transaction>> {
            prop::collection::vec((0u8..4, 0u8..3, 0i64..50_000, 1.0f64..500.0, prop::bool::weighted(0.1)), 1..80).prop_map(|rows| {
                let mut txs: Vec<_> = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (c, t, ts, a, f))| tx(i as u64, &format!("c{c}"), &format!("t{t}"), ts, a, f))
                    .collect();
                sort_transactions(&mut txs);
                txs
            })
        }

        proptest! {
            #[test]
            fn window_equals_suffix_of_prefix_signal(txs in arb_txs(), w in 1usize..5) {
                let idx = HistoryIndex::build(&txs).unwrap();
                for actor in [Actor::CardHolder, Actor::Terminal] {
                    for (i, t) in txs.iter().enumerate() {
                        let id = actor_id(t, actor);
                        let prefix: Vec<Transaction> = txs[..=i].iter().filter(|u| actor_id(u, actor) == id).cloned().collect();
                        let k = prefix.len();
                        let seq = &group_by_actor(&prefix, actor)[0];
                        for signal in [Signal::Amount, Signal::TimeDelta] {
                            let got = idx.window_for_tx(i, actor, w, signal);
                            if k < w {
                                prop_assert!(got.is_none());
                            } else {
                                let full = extract_signal(seq, signal);
                                let keep = match signal { Signal::Amount => w, Signal::TimeDelta => w - 1 };
                                prop_assert_eq!(got.unwrap(), full[full.len() - keep..].to_vec());
                            }
                        }
                    }
                }
            }

            #[test]
            fn trailing_window_never_reads_the_future(txs in arb_txs(), w in 1usize..4, probe in 0i64..50_000) {
                let idx = HistoryIndex::build(&txs).unwrap();
                let past: Vec<Transaction> = txs.iter().filter(|t| t.timestamp <= probe).cloned().collect();
                let past_idx = HistoryIndex::build(&past).unwrap();
                for id in ["c0", "c1", "c2", "c3"] {
                    for signal in [Signal::Amount, Signal::TimeDelta] {
                        prop_assert_eq!(
                            idx.trailing_window(id, probe, w, Actor::CardHolder, signal),
                            past_idx.trailing_window(id, probe, w, Actor::CardHolder, signal)
                        );
                    }
                }
            }

            #[test]
            fn genuine_and_compromised_cover_each_actor_once(txs in arb_txs(), w in 2usize..5) {
                let cards = group_by_actor(&txs, Actor::CardHolder);
                let terms = group_by_actor(&txs, Actor::Terminal);
                let eligible = cards.iter().filter(|s| s.len() >= w.max(2)).count();
                let mut covered = 0;
                for s in &cards {
                    let v = extract_signal(s, Signal::Amount);
                    if v.len() >= min_signal_len(Signal::Amount, w) { covered += 1; }
                }
                prop_assert_eq!(covered, eligible);
                if let Ok(c) = build_corpora(&cards, &terms, w) {
                    prop_assert_eq!(c[0].sequences.len() + c[4].sequences.len(), eligible);
                }
            }
        }
    }
}
