//! Deterministic synthetic card-payment streams.
//!
//! Every card has its own log-normal amount regime and exponential
//! inter-arrival rate. Fraud arrives as episodes on a compromised card: a few
//! low-value probes followed by one or more large spends, minutes apart, with
//! most of the episode routed through a small pool of compromised terminals.
//! Occasional cards shop only a handful of times, which leaves part of every
//! period with short card histories.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::txmodel::{Channel, Label, Transaction, SECONDS_PER_DAY};

const COUNTRIES: [&str; 8] = ["BE", "FR", "NL", "DE", "LU", "GB", "US", "ES"];
const MCCS: [&str; 10] = [
    "5411", "5812", "5999", "5311", "4121", "5732", "5691", "7011", "4511", "5814",
];

/// Genuine card-holder behaviour hyper-priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenuineBehaviour {
    /// Mean of the per-card log-amount location.
    pub log_amount_mean: f64,
    /// Spread of the per-card log-amount location across cards.
    pub log_amount_spread: f64,
    /// Per-card log-amount scale is drawn uniformly from this range.
    pub log_amount_sd: (f64, f64),
    /// Per-card mean inter-arrival (hours) is log-uniform on this range.
    pub inter_arrival_hours: (f64, f64),
    /// Number of regular terminals per card.
    pub favourite_terminals: usize,
    /// Probability a genuine purchase uses one of the regular terminals.
    pub favourite_share: f64,
}

impl Default for GenuineBehaviour {
    fn default() -> Self {
        Self {
            log_amount_mean: 3.5,
            log_amount_spread: 1.0,
            log_amount_sd: (0.2, 0.5),
            inter_arrival_hours: (6.0, 240.0),
            favourite_terminals: 6,
            favourite_share: 0.8,
        }
    }
}

/// Probe-then-spend fraud episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeShape {
    pub n_probe: usize,
    pub probe_amount_range: (f64, f64),
    /// Inclusive range of the number of large spends after the probes.
    pub n_spend: (usize, usize),
    /// Spends are the card's typical amount times a factor from this range.
    pub spend_amount_multiplier: (f64, f64),
    /// Mean of the exponential delay between episode transactions, seconds.
    pub mean_delay_seconds: f64,
    /// Probability that an episode hits an occasional card.
    pub occasional_card_share: f64,
}

impl Default for EpisodeShape {
    fn default() -> Self {
        Self {
            n_probe: 2,
            probe_amount_range: (1.0, 5.0),
            n_spend: (1, 3),
            spend_amount_multiplier: (3.0, 8.0),
            mean_delay_seconds: 600.0,
            occasional_card_share: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Cards that shop throughout the period.
    pub n_cards: usize,
    /// Cards with only a few transactions at uniformly random times.
    pub n_occasional_cards: usize,
    /// Inclusive range of the transaction count of an occasional card.
    pub occasional_transactions: (usize, usize),
    pub n_terminals: usize,
    pub days: u32,
    /// First second of the simulation, UTC epoch seconds.
    pub start_timestamp: i64,
    /// Frauds per 1000 transactions.
    pub fraud_rate: f64,
    /// Fraction of terminals that are e-commerce.
    pub channel_mix: f64,
    pub seed: u64,
    /// Fraction of terminals that are compromised.
    pub compromised_terminal_fraction: f64,
    /// Probability that an episode transaction hits a compromised terminal.
    pub compromised_terminal_share: f64,
    pub genuine: GenuineBehaviour,
    pub episode: EpisodeShape,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::ecommerce()
    }
}

impl GeneratorConfig {
    /// E-commerce preset: 3.7 frauds per 1000 transactions, ~290k rows over
    /// 92 days starting 2015-03-01.
    pub fn ecommerce() -> Self {
        Self {
            n_cards: 2200,
            n_occasional_cards: 30_000,
            occasional_transactions: (1, 4),
            n_terminals: 600,
            days: 92,
            start_timestamp: 1_425_168_000,
            fraud_rate: 3.7,
            channel_mix: 1.0,
            seed: 7,
            compromised_terminal_fraction: 0.04,
            compromised_terminal_share: 0.7,
            genuine: GenuineBehaviour::default(),
            episode: EpisodeShape::default(),
        }
    }

    /// Face-to-face preset: 0.2 frauds per 1000 transactions, ~560k rows.
    pub fn face_to_face() -> Self {
        Self {
            n_cards: 5300,
            n_occasional_cards: 20_000,
            n_terminals: 2500,
            fraud_rate: 0.2,
            channel_mix: 0.0,
            seed: 11,
            ..Self::ecommerce()
        }
    }

    /// Rescales the card and terminal populations by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.n_cards = ((self.n_cards as f64 * factor).round() as usize).max(1);
        self.n_occasional_cards = (self.n_occasional_cards as f64 * factor).round() as usize;
        self.n_terminals = ((self.n_terminals as f64 * factor).round() as usize).max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("generator: {m}")));
        if self.n_cards == 0 || self.n_terminals == 0 || self.days == 0 {
            return bad("n_cards, n_terminals and days must be positive");
        }
        if !(0.0..1000.0).contains(&self.fraud_rate) {
            return bad("fraud_rate must be in [0, 1000)");
        }
        if !(0.0..=1.0).contains(&self.channel_mix)
            || !(0.0..=1.0).contains(&self.compromised_terminal_fraction)
            || !(0.0..=1.0).contains(&self.compromised_terminal_share)
            || !(0.0..=1.0).contains(&self.genuine.favourite_share)
            || !(0.0..=1.0).contains(&self.episode.occasional_card_share)
        {
            return bad("fractions must lie in [0, 1]");
        }
        let g = &self.genuine;
        if !(g.log_amount_sd.0 > 0.0 && g.log_amount_sd.0 <= g.log_amount_sd.1) {
            return bad("log_amount_sd must be a positive, ordered range");
        }
        if !(g.inter_arrival_hours.0 > 0.0 && g.inter_arrival_hours.0 <= g.inter_arrival_hours.1) {
            return bad("inter_arrival_hours must be a positive, ordered range");
        }
        let (o_lo, o_hi) = self.occasional_transactions;
        if self.n_occasional_cards > 0 && (o_lo == 0 || o_lo > o_hi) {
            return bad("occasional_transactions must be a positive, ordered range");
        }
        let e = &self.episode;
        if e.n_probe == 0 {
            return bad("episode.n_probe must be at least 1");
        }
        if e.n_spend.0 > e.n_spend.1 {
            return bad("episode.n_spend range is reversed");
        }
        if !(e.probe_amount_range.0 > 0.0 && e.probe_amount_range.0 <= e.probe_amount_range.1) {
            return bad("probe_amount_range must be a positive, ordered range");
        }
        if !(e.spend_amount_multiplier.0 > 0.0
            && e.spend_amount_multiplier.0 <= e.spend_amount_multiplier.1)
        {
            return bad("spend_amount_multiplier must be a positive, ordered range");
        }
        if !(e.mean_delay_seconds > 0.0) {
            return bad("mean_delay_seconds must be positive");
        }
        Ok(())
    }
}

/// One planted fraud episode: the card and the ids of its transactions.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub card_id: String,
    pub tx_ids: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub transactions: Vec<Transaction>,
    pub episodes: Vec<Episode>,
}

struct Terminal {
    country: &'static str,
    mcc: &'static str,
    channel: Channel,
}

struct Card {
    log_mu: f64,
    log_sigma: f64,
    mean_gap_s: f64,
    favourites: Vec<usize>,
}

/// Pre-sort record: ordering key plus payload.
struct Draft {
    timestamp: i64,
    card: usize,
    seq: u32,
    terminal: usize,
    amount: f64,
    fraud: bool,
    episode: Option<usize>,
}

pub fn generate(config: &GeneratorConfig) -> Result<Vec<Transaction>> {
    Ok(generate_with_episodes(config)?.transactions)
}

pub fn generate_with_episodes(config: &GeneratorConfig) -> Result<Generated> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = config.start_timestamp;
    let end = start + i64::from(config.days) * SECONDS_PER_DAY;

    let terminals: Vec<Terminal> = (0..config.n_terminals)
        .map(|_| {
            let channel = if rng.gen_bool(config.channel_mix) {
                Channel::Ecommerce
            } else {
                Channel::FaceToFace
            };
            let home_share = if channel == Channel::Ecommerce { 0.5 } else { 0.9 };
            let country = if rng.gen_bool(home_share) {
                COUNTRIES[0]
            } else {
                COUNTRIES[rng.gen_range(1..COUNTRIES.len())]
            };
            Terminal {
                country,
                mcc: MCCS[rng.gen_range(0..MCCS.len())],
                channel,
            }
        })
        .collect();
    let popularity_dist = LogNormal::new(0.0, 1.0).expect("valid log-normal");
    let popularity: Vec<f64> = (0..config.n_terminals)
        .map(|_| popularity_dist.sample(&mut rng))
        .collect();
    let pick_terminal = WeightedIndex::new(&popularity).expect("positive weights");

    let n_compromised = ((config.n_terminals as f64 * config.compromised_terminal_fraction).round()
        as usize)
        .clamp(1, config.n_terminals);
    let mut order: Vec<usize> = (0..config.n_terminals).collect();
    order.shuffle(&mut rng);
    let compromised: Vec<usize> = order[..n_compromised].to_vec();

    let g = &config.genuine;
    let mu_dist = Normal::new(g.log_amount_mean, g.log_amount_spread.max(0.0))
        .map_err(|e| Error::Config(e.to_string()))?;
    let (h_lo, h_hi) = (g.inter_arrival_hours.0.ln(), g.inter_arrival_hours.1.ln());
    let n_all = config.n_cards + config.n_occasional_cards;
    let cards: Vec<Card> = (0..n_all)
        .map(|_| {
            let log_mu = mu_dist.sample(&mut rng);
            let log_sigma = rng.gen_range(g.log_amount_sd.0..=g.log_amount_sd.1);
            let mean_gap_s = rng.gen_range(h_lo..=h_hi).exp() * 3600.0;
            let favourites = (0..g.favourite_terminals.max(1))
                .map(|_| pick_terminal.sample(&mut rng))
                .collect();
            Card {
                log_mu,
                log_sigma,
                mean_gap_s,
                favourites,
            }
        })
        .collect();

    let mut drafts: Vec<Draft> = Vec::new();
    let mut seq_of_card = vec![0u32; n_all];
    for (ci, card) in cards.iter().enumerate().take(config.n_cards) {
        let gap = Exp::new(1.0 / card.mean_gap_s).expect("positive rate");
        let amount = LogNormal::new(card.log_mu, card.log_sigma).expect("valid log-normal");
        let mut t = start as f64 + gap.sample(&mut rng);
        while (t as i64) < end {
            let terminal = if rng.gen_bool(g.favourite_share) {
                card.favourites[rng.gen_range(0..card.favourites.len())]
            } else {
                pick_terminal.sample(&mut rng)
            };
            let mut ts = t as i64;
            if terminals[terminal].channel == Channel::FaceToFace {
                // Shops are closed at night: push early-hour purchases to the morning.
                let hour = (ts - start).rem_euclid(SECONDS_PER_DAY) / 3600;
                if hour < 7 {
                    ts += (7 - hour) * 3600 + rng.gen_range(0..3 * 3600);
                }
            }
            if ts >= end {
                break;
            }
            drafts.push(Draft {
                timestamp: ts,
                card: ci,
                seq: seq_of_card[ci],
                terminal,
                amount: cents(amount.sample(&mut rng)),
                fraud: false,
                episode: None,
            });
            seq_of_card[ci] += 1;
            t = ts as f64 + gap.sample(&mut rng).max(1.0);
        }
    }

    let (o_lo, o_hi) = config.occasional_transactions;
    for (ci, card) in cards.iter().enumerate().skip(config.n_cards) {
        let amount = LogNormal::new(card.log_mu, card.log_sigma).expect("valid log-normal");
        let n = rng.gen_range(o_lo..=o_hi);
        let mut times: Vec<i64> = (0..n).map(|_| rng.gen_range(start..end)).collect();
        times.sort_unstable();
        for ts in times {
            let terminal = if rng.gen_bool(g.favourite_share) {
                card.favourites[0]
            } else {
                pick_terminal.sample(&mut rng)
            };
            drafts.push(Draft {
                timestamp: ts,
                card: ci,
                seq: seq_of_card[ci],
                terminal,
                amount: cents(amount.sample(&mut rng)),
                fraud: false,
                episode: None,
            });
            seq_of_card[ci] += 1;
        }
    }

    let n_genuine = drafts.len() as f64;
    let rate = config.fraud_rate / 1000.0;
    let target_frauds = (rate * n_genuine / (1.0 - rate)).round() as usize;
    let e = &config.episode;
    let delay = Exp::new(1.0 / e.mean_delay_seconds).expect("positive rate");
    let mut fresh_cards: Vec<usize> = (0..config.n_cards).collect();
    fresh_cards.shuffle(&mut rng);
    let mut n_episodes = 0usize;
    let mut n_frauds = 0usize;
    let window_start = start + SECONDS_PER_DAY;
    let window_end = (end - SECONDS_PER_DAY).max(window_start + 1);
    while n_frauds < target_frauds {
        let ci = if config.n_occasional_cards > 0 && rng.gen_bool(e.occasional_card_share) {
            rng.gen_range(config.n_cards..n_all)
        } else {
            fresh_cards.pop().unwrap_or_else(|| rng.gen_range(0..config.n_cards))
        };
        let card = &cards[ci];
        let n_spend = rng.gen_range(e.n_spend.0..=e.n_spend.1);
        let mut t = rng.gen_range(window_start..window_end) as f64;
        for k in 0..e.n_probe + n_spend {
            if k > 0 {
                t += delay.sample(&mut rng).max(1.0);
            }
            let terminal = if rng.gen_bool(config.compromised_terminal_share) {
                compromised[rng.gen_range(0..compromised.len())]
            } else {
                pick_terminal.sample(&mut rng)
            };
            let amount = if k < e.n_probe {
                rng.gen_range(e.probe_amount_range.0..=e.probe_amount_range.1)
            } else {
                let typical = (card.log_mu + card.log_sigma * rng.gen_range(-1.0..1.0)).exp();
                typical * rng.gen_range(e.spend_amount_multiplier.0..=e.spend_amount_multiplier.1)
            };
            drafts.push(Draft {
                timestamp: (t as i64).min(end - 1),
                card: ci,
                seq: seq_of_card[ci],
                terminal,
                amount: cents(amount),
                fraud: true,
                episode: Some(n_episodes),
            });
            seq_of_card[ci] += 1;
            n_frauds += 1;
        }
        n_episodes += 1;
    }

    drafts.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then(a.card.cmp(&b.card))
            .then(a.seq.cmp(&b.seq))
    });
    let mut episodes: Vec<Episode> = Vec::with_capacity(n_episodes);
    let mut episode_card = vec![usize::MAX; n_episodes];
    let mut episode_ids: Vec<Vec<u64>> = vec![Vec::new(); n_episodes];
    let transactions = drafts
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let tx_id = i as u64 + 1;
            if let Some(ep) = d.episode {
                episode_card[ep] = d.card;
                episode_ids[ep].push(tx_id);
            }
            let term = &terminals[d.terminal];
            Transaction {
                tx_id,
                card_id: card_name(d.card),
                terminal_id: format!("T{:05}", d.terminal),
                timestamp: d.timestamp,
                amount: d.amount,
                country: term.country.to_string(),
                mcc: term.mcc.to_string(),
                channel: term.channel,
                label: if d.fraud { Label::Fraud } else { Label::Genuine },
            }
        })
        .collect();
    for (card, tx_ids) in episode_card.into_iter().zip(episode_ids) {
        episodes.push(Episode {
            card_id: card_name(card),
            tx_ids,
        });
    }
    Ok(Generated {
        transactions,
        episodes,
    })
}

fn card_name(i: usize) -> String {
    format!("C{i:06}")
}

fn cents(x: f64) -> f64 {
    ((x * 100.0).round() / 100.0).max(0.01)
}
