//! Gaussian-emission hidden Markov models.
//!
//! The forward and backward recursions use per-step scaling: at every step the
//! emission log-densities are shifted by their maximum before exponentiation
//! and the forward vector is renormalised to sum to one. The log-likelihood is
//! the sum of the log scale factors, so the result is exact (no truncation)
//! and immune to underflow on long sequences.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqcorpus::{PerspectiveCorpus, SignalTransform};

/// Lower bound on every emission standard deviation (transformed scale).
pub const STD_FLOOR: f64 = 1e-3;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const STOCHASTIC_TOL: f64 = 1e-9;

/// Where a model came from; persisted with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub perspective: Option<String>,
    pub window: Option<usize>,
    pub corpus_sequences: usize,
    pub corpus_observations: usize,
    pub seed: u64,
    pub n_iterations: usize,
    pub converged: bool,
    pub final_loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHmm {
    pi: Vec<f64>,
    /// Row-major `K x K`, row = from-state.
    trans: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
    transform: SignalTransform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainingMeta>,
}

impl GaussianHmm {
    pub fn new(pi: Vec<f64>, trans: Vec<Vec<f64>>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        let k = pi.len();
        if trans.len() != k || trans.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput(format!("transition matrix must be {k}x{k}")));
        }
        let hmm = Self {
            pi,
            trans: trans.into_iter().flatten().collect(),
            means,
            stds,
            transform: SignalTransform::Log1p,
            training: None,
        };
        hmm.validate()?;
        Ok(hmm)
    }

    /// Checks every structural invariant: shapes, stochasticity, std floor,
    /// finiteness.
    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        let bad = |m: String| Err(Error::InvalidInput(m));
        if k == 0 {
            return bad("model needs at least one state".into());
        }
        if self.trans.len() != k * k || self.means.len() != k || self.stds.len() != k {
            return bad("parameter shapes disagree with the number of states".into());
        }
        let all = self.pi.iter().chain(&self.trans).chain(&self.means).chain(&self.stds);
        if all.clone().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        if self.pi.iter().chain(&self.trans).any(|&v| v < 0.0) {
            return bad("probabilities must be non-negative".into());
        }
        if (self.pi.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
            return bad("initial distribution does not sum to 1".into());
        }
        for (i, row) in self.trans.chunks(k).enumerate() {
            if (row.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
                return bad(format!("transition row {i} does not sum to 1"));
            }
        }
        if let Some(s) = self.stds.iter().find(|&&s| s < STD_FLOOR) {
            return bad(format!("standard deviation {s} below floor {STD_FLOOR}"));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn trans(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.n_states() + to]
    }

    pub fn trans_row(&self, from: usize) -> &[f64] {
        let k = self.n_states();
        &self.trans[from * k..(from + 1) * k]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn transform(&self) -> SignalTransform {
        self.transform
    }

    pub fn training(&self) -> Option<&TrainingMeta> {
        self.training.as_ref()
    }

    pub fn set_training(&mut self, meta: TrainingMeta) {
        self.training = Some(meta);
    }

    #[inline]
    pub fn log_emission(&self, state: usize, x: f64) -> f64 {
        let z = (x - self.means[state]) / self.stds[state];
        -HALF_LN_2PI - self.stds[state].ln() - 0.5 * z * z
    }

    /// Relabels hidden states: new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.n_states();
        assert_eq!(perm.len(), k, "permutation length");
        let mut out = self.clone();
        for i in 0..k {
            out.pi[i] = self.pi[perm[i]];
            out.means[i] = self.means[perm[i]];
            out.stds[i] = self.stds[perm[i]];
            for j in 0..k {
                out.trans[i * k + j] = self.trans[perm[i] * k + perm[j]];
            }
        }
        out
    }

    /// States sorted by ascending mean; leaves the likelihood unchanged.
    pub fn canonical(&self) -> Self {
        let mut perm: Vec<usize> = (0..self.n_states()).collect();
        perm.sort_by(|&a, &b| self.means[a].total_cmp(&self.means[b]));
        self.permuted(&perm)
    }

    /// Draws a state path and observations of length `len`.
    pub fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> (Vec<f64>, Vec<usize>) {
        let draw = |p: &[f64], rng: &mut R| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, &w) in p.iter().enumerate() {
                acc += w;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        let mut states = Vec::with_capacity(len);
        let mut obs = Vec::with_capacity(len);
        for t in 0..len {
            let s = if t == 0 {
                draw(&self.pi, rng)
            } else {
                draw(self.trans_row(states[t - 1]), rng)
            };
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
            states.push(s);
            obs.push(self.means[s] + self.stds[s] * z);
        }
        (obs, states)
    }

    /// `ln P(obs | model)`; `-inf` when the forward mass vanishes.
    pub fn loglik(&self, obs: &[f64]) -> Result<f64> {
        Ok(log_forward(self, obs)?.loglik)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&ModelFile::from(self))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// On-disk layout: self-describing, one field per parameter block.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    n_states: usize,
    pi: Vec<f64>,
    trans: Vec<Vec<f64>>,
    means: Vec<f64>,
    stds: Vec<f64>,
    transform: SignalTransform,
    #[serde(default)]
    training: Option<TrainingMeta>,
}

const MODEL_FORMAT: &str = "gaussian-hmm/1";

impl From<&GaussianHmm> for ModelFile {
    fn from(h: &GaussianHmm) -> Self {
        let k = h.n_states();
        Self {
            format: MODEL_FORMAT.into(),
            n_states: k,
            pi: h.pi.clone(),
            trans: h.trans.chunks(k).map(<[f64]>::to_vec).collect(),
            means: h.means.clone(),
            stds: h.stds.clone(),
            transform: h.transform,
            training: h.training.clone(),
        }
    }
}

impl TryFrom<ModelFile> for GaussianHmm {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.format != MODEL_FORMAT {
            return Err(Error::InvalidInput(format!("unsupported model format `{}`", f.format)));
        }
        if f.pi.len() != f.n_states {
            return Err(Error::InvalidInput("n_states disagrees with pi".into()));
        }
        let mut h = GaussianHmm::new(f.pi, f.trans, f.means, f.stds)?;
        h.transform = f.transform;
        h.training = f.training;
        Ok(h)
    }
}

/// Scaled forward variables of one sequence.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub loglik: f64,
    /// `T x K`, each row sums to one.
    pub alpha: Vec<f64>,
    /// Per-step normaliser of the shifted recursion.
    pub scales: Vec<f64>,
    /// Per-step max emission log-density subtracted before exponentiation.
    pub shifts: Vec<f64>,
    /// Set when the forward mass vanished; `loglik` is then `-inf`.
    pub underflow: bool,
}

impl ForwardPass {
    /// `ln c_t + shift_t`, whose sum over `t` is the log-likelihood.
    pub fn log_scale(&self, t: usize) -> f64 {
        self.scales[t].ln() + self.shifts[t]
    }
}

fn check_obs(obs: &[f64]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::InvalidInput("observation sequence is empty".into()));
    }
    if obs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("observations must be finite".into()));
    }
    Ok(())
}

/// Shifted emission probabilities `exp(log b_k(x_t) - shift_t)` (`T x K`).
fn shifted_emissions(hmm: &GaussianHmm, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = hmm.n_states();
    let mut e = vec![0.0; obs.len() * k];
    let mut shifts = Vec::with_capacity(obs.len());
    for (t, &x) in obs.iter().enumerate() {
        let row = &mut e[t * k..(t + 1) * k];
        let mut m = f64::NEG_INFINITY;
        for (s, v) in row.iter_mut().enumerate() {
            *v = hmm.log_emission(s, x);
            m = m.max(*v);
        }
        for v in row.iter_mut() {
            *v = (*v - m).exp();
        }
        shifts.push(m);
    }
    (e, shifts)
}

pub fn log_forward(hmm: &GaussianHmm, obs: &[f64]) -> Result<ForwardPass> {
    check_obs(obs)?;
    let (e, shifts) = shifted_emissions(hmm, obs);
    Ok(forward_from(hmm, &e, shifts))
}

fn forward_from(hmm: &GaussianHmm, e: &[f64], shifts: Vec<f64>) -> ForwardPass {
    let k = hmm.n_states();
    let len = shifts.len();
    let mut alpha = vec![0.0; len * k];
    let mut scales = Vec::with_capacity(len);
    let mut loglik = 0.0;
    for t in 0..len {
        let (prev, cur) = alpha.split_at_mut(t * k);
        let cur = &mut cur[..k];
        if t == 0 {
            for j in 0..k {
                cur[j] = hmm.pi[j] * e[j];
            }
        } else {
            let prev = &prev[(t - 1) * k..];
            for j in 0..k {
                let mut acc = 0.0;
                for i in 0..k {
                    acc += prev[i] * hmm.trans[i * k + j];
                }
                cur[j] = acc * e[t * k + j];
            }
        }
        let c: f64 = cur.iter().sum();
        if !(c > 0.0 && c.is_finite()) {
            return ForwardPass {
                loglik: f64::NEG_INFINITY,
                alpha,
                scales,
                shifts,
                underflow: true,
            };
        }
        for v in cur.iter_mut() {
            *v /= c;
        }
        scales.push(c);
        loglik += c.ln() + shifts[t];
    }
    ForwardPass {
        loglik,
        alpha,
        scales,
        shifts,
        underflow: false,
    }
}

/// Scaled backward variables (`T x K`), normalised with the forward scale
/// factors so that `sum_i alpha[t][i] * beta[t][i] == 1` at every step.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub beta: Vec<f64>,
}

pub fn log_backward(hmm: &GaussianHmm, obs: &[f64]) -> Result<BackwardPass> {
    let fwd = log_forward(hmm, obs)?;
    if fwd.underflow {
        return Err(Error::Numerical("forward mass vanished; backward pass undefined".into()));
    }
    let (e, _) = shifted_emissions(hmm, obs);
    Ok(backward_from(hmm, &e, &fwd.scales))
}

fn backward_from(hmm: &GaussianHmm, e: &[f64], scales: &[f64]) -> BackwardPass {
    let k = hmm.n_states();
    let len = scales.len();
    let mut beta = vec![0.0; len * k];
    for v in &mut beta[(len - 1) * k..] {
        *v = 1.0;
    }
    for t in (0..len.saturating_sub(1)).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * k);
        let cur = &mut cur[t * k..];
        let next = &next[..k];
        let c = scales[t + 1];
        for i in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                acc += hmm.trans[i * k + j] * e[(t + 1) * k + j] * next[j];
            }
            cur[i] = acc / c;
        }
    }
    BackwardPass { beta }
}

/// Most probable hidden path.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    /// `ln P(path, obs | model)`.
    pub log_prob: f64,
}

/// Log-space Viterbi decoding. Ties go to the lower state index.
pub fn viterbi(hmm: &GaussianHmm, obs: &[f64]) -> Result<ViterbiPath> {
    check_obs(obs)?;
    let k = hmm.n_states();
    let len = obs.len();
    let log_trans: Vec<f64> = hmm.trans.iter().map(|p| p.ln()).collect();
    let mut delta: Vec<f64> = (0..k).map(|s| hmm.pi[s].ln() + hmm.log_emission(s, obs[0])).collect();
    let mut back = vec![0usize; len * k];
    let mut next = vec![0.0; k];
    for t in 1..len {
        for j in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for i in 0..k {
                let v = delta[i] + log_trans[i * k + j];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            back[t * k + j] = arg;
            next[j] = best + hmm.log_emission(j, obs[t]);
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    for s in 1..k {
        if delta[s] > delta[last] {
            last = s;
        }
    }
    let log_prob = delta[last];
    if log_prob == f64::NEG_INFINITY {
        return Err(Error::Numerical("every hidden path has zero probability".into()));
    }
    let mut states = vec![0; len];
    states[len - 1] = last;
    for t in (1..len).rev() {
        states[t - 1] = back[t * k + states[t]];
    }
    Ok(ViterbiPath { states, log_prob })
}

/// Initial parameters: means at the `(k + 0.5) / K` quantiles of the pooled
/// observations, shared pooled std, uniform `pi`, near-uniform transitions
/// with seeded noise of at most 1%.
pub fn init_hmm(n_states: usize, corpus: &PerspectiveCorpus, seed: u64) -> Result<GaussianHmm> {
    if n_states == 0 {
        return Err(Error::Config("number of hidden states must be positive".into()));
    }
    let mut pooled: Vec<f64> = corpus.pooled().collect();
    if pooled.is_empty() {
        return Err(Error::EmptyCorpus(corpus.perspective.slug()));
    }
    if pooled.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("corpus contains non-finite values".into()));
    }
    pooled.sort_by(f64::total_cmp);
    let n = pooled.len() as f64;
    let means = (0..n_states)
        .map(|k| quantile_sorted(&pooled, (k as f64 + 0.5) / n_states as f64))
        .collect();
    let mean = pooled.iter().sum::<f64>() / n;
    let var = pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let mut std = var.sqrt();
    if std == 0.0 {
        log::warn!(
            "corpus {} is constant; emission std set to the floor {STD_FLOOR}",
            corpus.perspective
        );
    }
    std = std.max(STD_FLOOR);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = 1.0 / n_states as f64;
    let mut trans = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let mut row: Vec<f64> = (0..n_states).map(|_| base * (1.0 + 0.01 * rng.gen_range(-1.0..1.0))).collect();
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
        trans.push(row);
    }
    GaussianHmm::new(vec![base; n_states], trans, means, vec![std; n_states])
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Total corpus log-likelihood of the initial model and after each update.
    pub loglik_trajectory: Vec<f64>,
    pub n_iterations: usize,
    pub converged: bool,
}

impl FitReport {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trajectory.last().unwrap_or(&f64::NEG_INFINITY)
    }

    /// Largest single-step decrease of the trajectory (0 when monotone).
    pub fn max_decrease(&self) -> f64 {
        self.loglik_trajectory
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

/// Sufficient statistics gathered by one E-step.
struct Stats {
    loglik: f64,
    pi: Vec<f64>,
    trans: Vec<f64>,
    occupancy: Vec<f64>,
    /// First and second moments around the current means.
    m1: Vec<f64>,
    m2: Vec<f64>,
}

fn e_step(hmm: &GaussianHmm, corpus: &PerspectiveCorpus) -> Result<Stats> {
    let k = hmm.n_states();
    let mut st = Stats {
        loglik: 0.0,
        pi: vec![0.0; k],
        trans: vec![0.0; k * k],
        occupancy: vec![0.0; k],
        m1: vec![0.0; k],
        m2: vec![0.0; k],
    };
    for (n, obs) in corpus.sequences.iter().enumerate() {
        check_obs(obs)?;
        let (e, shifts) = shifted_emissions(hmm, obs);
        let fwd = forward_from(hmm, &e, shifts);
        if fwd.underflow {
            return Err(Error::Numerical(format!(
                "forward mass vanished on sequence {n} of corpus {} (means {:?}, stds {:?})",
                corpus.perspective, hmm.means, hmm.stds
            )));
        }
        let bwd = backward_from(hmm, &e, &fwd.scales);
        st.loglik += fwd.loglik;
        let (alpha, beta) = (&fwd.alpha, &bwd.beta);
        for (t, &x) in obs.iter().enumerate() {
            for i in 0..k {
                let g = alpha[t * k + i] * beta[t * k + i];
                if t == 0 {
                    st.pi[i] += g;
                }
                let d = x - hmm.means[i];
                st.occupancy[i] += g;
                st.m1[i] += g * d;
                st.m2[i] += g * d * d;
            }
            if t + 1 < obs.len() {
                let c = fwd.scales[t + 1];
                for i in 0..k {
                    let a = alpha[t * k + i];
                    for j in 0..k {
                        st.trans[i * k + j] +=
                            a * hmm.trans[i * k + j] * e[(t + 1) * k + j] * beta[(t + 1) * k + j] / c;
                    }
                }
            }
        }
    }
    Ok(st)
}

fn m_step(hmm: &GaussianHmm, st: &Stats, n_sequences: usize) -> Result<GaussianHmm> {
    let k = hmm.n_states();
    let mut next = hmm.clone();
    let pi_sum: f64 = st.pi.iter().sum();
    for i in 0..k {
        next.pi[i] = st.pi[i] / pi_sum;
    }
    debug_assert!(pi_sum > 0.0 && n_sequences > 0);
    for i in 0..k {
        let row = &st.trans[i * k..(i + 1) * k];
        let denom: f64 = row.iter().sum();
        if denom > f64::MIN_POSITIVE {
            for j in 0..k {
                next.trans[i * k + j] = row[j] / denom;
            }
        }
        let occ = st.occupancy[i];
        if occ > f64::MIN_POSITIVE {
            let shift = st.m1[i] / occ;
            next.means[i] = hmm.means[i] + shift;
            let var = (st.m2[i] / occ - shift * shift).max(0.0);
            next.stds[i] = var.sqrt().max(STD_FLOOR);
        }
    }
    let finite = next
        .pi
        .iter()
        .chain(&next.trans)
        .chain(&next.means)
        .chain(&next.stds)
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::Numerical(format!(
            "non-finite EM update (occupancy {:?}, loglik {})",
            st.occupancy, st.loglik
        )));
    }
    Ok(next)
}

/// Multi-sequence Baum-Welch. Stops once the relative improvement of the
/// total log-likelihood drops below `tol` or after `max_iter` updates.
pub fn baum_welch(
    hmm0: &GaussianHmm,
    corpus: &PerspectiveCorpus,
    max_iter: usize,
    tol: f64,
) -> Result<(GaussianHmm, FitReport)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(corpus.perspective.slug()));
    }
    if let Some(i) = corpus.sequences.iter().position(|s| s.len() < 2) {
        return Err(Error::InvalidInput(format!(
            "corpus {} sequence {i} is shorter than 2",
            corpus.perspective
        )));
    }
    hmm0.validate()?;
    let mut current = hmm0.clone();
    let mut stats = e_step(&current, corpus)?;
    let mut report = FitReport {
        loglik_trajectory: vec![stats.loglik],
        n_iterations: 0,
        converged: false,
    };
    for iter in 1..=max_iter {
        let next = m_step(&current, &stats, corpus.sequences.len())?;
        let next_stats = e_step(&next, corpus)?;
        let (prev_ll, ll) = (stats.loglik, next_stats.loglik);
        current = next;
        stats = next_stats;
        report.loglik_trajectory.push(ll);
        report.n_iterations = iter;
        if (ll - prev_ll) / prev_ll.abs().max(f64::MIN_POSITIVE) < tol {
            report.converged = true;
            break;
        }
    }
    Ok((current, report))
}

/// Training knobs for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub n_states: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_states: 5,
            max_iter: 200,
            tol: 1e-4,
            seed: 0,
            restarts: 1,
        }
    }
}

/// Initialise, run Baum-Welch (best of `restarts` seeds by final
/// log-likelihood), relabel states by ascending mean and attach metadata.
pub fn fit(corpus: &PerspectiveCorpus, opts: &FitOptions, window: Option<usize>) -> Result<(GaussianHmm, FitReport)> {
    let mut best: Option<(GaussianHmm, FitReport, u64)> = None;
    for r in 0..opts.restarts.max(1) {
        let seed = opts.seed.wrapping_add(r as u64);
        let init = init_hmm(opts.n_states, corpus, seed)?;
        let (hmm, report) = baum_welch(&init, corpus, opts.max_iter, opts.tol)?;
        let better = best
            .as_ref()
            .map_or(true, |(_, b, _)| report.final_loglik() > b.final_loglik());
        if better {
            best = Some((hmm, report, seed));
        }
    }
    let (hmm, report, seed) = best.expect("at least one restart");
    let mut hmm = hmm.canonical();
    hmm.set_training(TrainingMeta {
        perspective: Some(corpus.perspective.slug()),
        window,
        corpus_sequences: corpus.sequences.len(),
        corpus_observations: corpus.n_observations(),
        seed,
        n_iterations: report.n_iterations,
        converged: report.converged,
        final_loglik: report.final_loglik(),
    });
    Ok((hmm, report))
}

/// Exhaustive likelihood, used as an independent check of the forward pass.
pub mod oracle {
    use super::*;

    pub const MAX_PATHS: usize = 1_000_000;

    fn n_paths(k: usize, len: usize) -> Option<usize> {
        let mut n: usize = 1;
        for _ in 0..len {
            n = n.checked_mul(k)?;
        }
        Some(n)
    }

    fn log_gauss(x: f64, mean: f64, std: f64) -> f64 {
        -0.5 * (2.0 * PI * std * std).ln() - (x - mean).powi(2) / (2.0 * std * std)
    }

    /// Calls `visit(path, ln P(path, obs))` for every one of the `K^T` paths.
    pub fn for_each_path(hmm: &GaussianHmm, obs: &[f64], mut visit: impl FnMut(&[usize], f64)) -> Result<()> {
        let k = hmm.n_states();
        let total = n_paths(k, obs.len()).filter(|&n| n <= MAX_PATHS).ok_or_else(|| {
            Error::InvalidInput(format!("{k}^{} paths exceed the enumeration limit", obs.len()))
        })?;
        let mut path = vec![0usize; obs.len()];
        for code in 0..total {
            let mut c = code;
            for s in path.iter_mut() {
                *s = c % k;
                c /= k;
            }
            let mut lp = hmm.pi()[path[0]].ln();
            for (t, &x) in obs.iter().enumerate() {
                if t > 0 {
                    lp += hmm.trans(path[t - 1], path[t]).ln();
                }
                lp += log_gauss(x, hmm.means()[path[t]], hmm.stds()[path[t]]);
            }
            visit(&path, lp);
        }
        Ok(())
    }

    /// `ln sum_paths P(path, obs)` by explicit enumeration.
    pub fn brute_force_loglik(hmm: &GaussianHmm, obs: &[f64]) -> Result<f64> {
        let mut terms = Vec::new();
        for_each_path(hmm, obs, |_, lp| terms.push(lp))?;
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Ok(m);
        }
        Ok(m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln())
    }
}

pub use oracle::brute_force_loglik;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqcorpus::Perspective;
    use approx::assert_relative_eq;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn corpus(seqs: Vec<Vec<f64>>) -> PerspectiveCorpus {
        PerspectiveCorpus {
            perspective: Perspective::ALL[0],
            sequences: seqs,
        }
    }

    fn two_state() -> GaussianHmm {
        GaussianHmm::new(
            vec![0.6, 0.4],
            vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            vec![0.0, 3.0],
            vec![1.0, 0.5],
        )
        .unwrap()
    }

    /// Random valid model with `k` states.
    fn random_hmm(k: usize, rng: &mut ChaCha8Rng) -> GaussianHmm {
        let simplex = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let pi = simplex(rng);
        let trans = (0..k).map(|_| simplex(rng)).collect();
        let means = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let stds = (0..k).map(|_| rng.gen_range(0.3..2.0)).collect();
        GaussianHmm::new(pi, trans, means, stds).unwrap()
    }

    /// Independent log-space forward/backward via log-sum-exp.
    fn log_space_alpha_beta(h: &GaussianHmm, obs: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let k = h.n_states();
        let lse = |v: &[f64]| {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        };
        let mut la = vec![vec![0.0; k]; obs.len()];
        for j in 0..k {
            la[0][j] = h.pi()[j].ln() + h.log_emission(j, obs[0]);
        }
        for t in 1..obs.len() {
            for j in 0..k {
                let terms: Vec<f64> = (0..k).map(|i| la[t - 1][i] + h.trans(i, j).ln()).collect();
                la[t][j] = lse(&terms) + h.log_emission(j, obs[t]);
            }
        }
        let mut lb = vec![vec![0.0; k]; obs.len()];
        for t in (0..obs.len() - 1).rev() {
            for i in 0..k {
                let terms: Vec<f64> = (0..k)
                    .map(|j| h.trans(i, j).ln() + h.log_emission(j, obs[t + 1]) + lb[t + 1][j])
                    .collect();
                lb[t][i] = lse(&terms);
            }
        }
        (la, lb)
    }

    #[test]
    fn single_standard_normal_point() {
        let h = GaussianHmm::new(vec![1.0], vec![vec![1.0]], vec![0.0], vec![1.0]).unwrap();
        let ll = h.loglik(&[0.0]).unwrap();
        assert_relative_eq!(ll, -(2.0 * PI).sqrt().ln(), max_relative = 1e-15);
        assert_relative_eq!(ll, -0.9189, epsilon = 1e-4);
    }

    #[test]
    fn forward_matches_enumeration_on_hand_built_model() {
        let h = two_state();
        let obs = [0.1, 2.7, 3.3, -0.4];
        let f = h.loglik(&obs).unwrap();
        let b = brute_force_loglik(&h, &obs).unwrap();
        assert_relative_eq!(f, b, max_relative = 1e-9);
    }

    #[test]
    fn brute_force_single_step_is_mixture_density() {
        let h = two_state();
        let x = 1.3;
        let mix: f64 = (0..2)
            .map(|k| {
                let (m, s) = (h.means()[k], h.stds()[k]);
                h.pi()[k] * (-(x - m) * (x - m) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
            })
            .sum();
        assert_relative_eq!(brute_force_loglik(&h, &[x]).unwrap(), mix.ln(), max_relative = 1e-12);
        assert_eq!(
            brute_force_loglik(&h, &[x, 0.2]).unwrap(),
            brute_force_loglik(&h, &[x, 0.2]).unwrap()
        );
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let h = two_state();
        assert!(brute_force_loglik(&h, &[0.0; 21]).is_err());
    }

    #[test]
    fn backward_base_case_and_consistency() {
        let h = two_state();
        let b = log_backward(&h, &[0.3]).unwrap();
        assert_eq!(b.beta, vec![1.0, 1.0]);

        let obs = [0.1, 2.7, 3.3, -0.4, 1.0, 5.0];
        let f = log_forward(&h, &obs).unwrap();
        let b = log_backward(&h, &obs).unwrap();
        let (la, lb) = log_space_alpha_beta(&h, &obs);
        let mid = obs.len() / 2;
        let combined: f64 = (0..2).map(|i| (la[mid][i] + lb[mid][i]).exp()).sum::<f64>().ln();
        assert_relative_eq!(combined, f.loglik, max_relative = 1e-9);
        for t in 0..obs.len() {
            let s: f64 = (0..2).map(|i| f.alpha[t * 2 + i] * b.beta[t * 2 + i]).sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
            // Scaled beta times the remaining scale factors recovers the true beta.
            let tail: f64 = (t + 1..obs.len()).map(|s| f.log_scale(s)).sum();
            for i in 0..2 {
                assert_relative_eq!(b.beta[t * 2 + i].ln() + tail, lb[t][i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn long_sequences_do_not_underflow() {
        let h = two_state();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (obs, _) = h.sample(20_000, &mut rng);
        let f = log_forward(&h, &obs).unwrap();
        assert!(f.loglik.is_finite() && !f.underflow);
        // Far outlier: every density is ~0 but the shift keeps the recursion alive.
        assert!(h.loglik(&[1e6, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn zero_transition_mass_is_flagged() {
        let h = GaussianHmm::new(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 1e4],
            vec![1.0, 1.0],
        )
        .unwrap();
        let f = log_forward(&h, &[0.0, 1e4]).unwrap();
        assert!(f.underflow);
        assert_eq!(f.loglik, f64::NEG_INFINITY);
    }

    #[test]
    fn empty_or_non_finite_observations_error() {
        let h = two_state();
        assert!(log_forward(&h, &[]).is_err());
        assert!(log_forward(&h, &[f64::NAN]).is_err());
        assert!(viterbi(&h, &[]).is_err());
    }

    #[test]
    fn viterbi_single_state_and_exhaustive() {
        let h = GaussianHmm::new(vec![1.0], vec![vec![1.0]], vec![2.0], vec![1.0]).unwrap();
        assert_eq!(viterbi(&h, &[0.0, 5.0, 1.0]).unwrap().states, vec![0, 0, 0]);

        let h = two_state();
        let obs = [0.2, 2.9, 3.1, 0.5, 2.0];
        let v = viterbi(&h, &obs).unwrap();
        let mut best = (f64::NEG_INFINITY, vec![]);
        oracle::for_each_path(&h, &obs, |p, lp| {
            if lp > best.0 {
                best = (lp, p.to_vec());
            }
        })
        .unwrap();
        assert_eq!(v.states, best.1);
        assert_relative_eq!(v.log_prob, best.0, max_relative = 1e-12);
        assert!(v.log_prob <= h.loglik(&obs).unwrap());
    }

    #[test]
    fn init_degenerate_and_quantiles() {
        let c = corpus(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0]]);
        let h = init_hmm(1, &c, 9).unwrap();
        assert_eq!(h.means(), &[3.0]);
        assert_eq!(h.trans_row(0), &[1.0]);

        let c = corpus(vec![(0..100).map(f64::from).collect()]);
        let h = init_hmm(2, &c, 9).unwrap();
        assert_relative_eq!(h.means()[0], 24.75, epsilon = 1e-12);
        assert_relative_eq!(h.means()[1], 74.25, epsilon = 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                assert!((h.trans(i, j) - 0.5).abs() <= 0.5 * 0.0201);
            }
        }
        assert_eq!(init_hmm(3, &c, 42).unwrap(), init_hmm(3, &c, 42).unwrap());
        assert_ne!(init_hmm(3, &c, 42).unwrap(), init_hmm(3, &c, 43).unwrap());
    }

    #[test]
    fn constant_corpus_gets_floored_std() {
        let c = corpus(vec![vec![2.0; 5], vec![2.0; 3]]);
        let h = init_hmm(2, &c, 0).unwrap();
        assert_eq!(h.stds(), &[STD_FLOOR, STD_FLOOR]);
        let (fitted, _) = baum_welch(&h, &c, 20, 1e-6).unwrap();
        assert!(fitted.stds().iter().all(|&s| s >= STD_FLOOR));
    }

    #[test]
    fn infinite_tolerance_stops_after_one_update() {
        let c = corpus(vec![vec![0.0, 1.0, 0.5, 3.0], vec![2.0, 2.5]]);
        let h = init_hmm(2, &c, 1).unwrap();
        let (_, r) = baum_welch(&h, &c, 50, f64::INFINITY).unwrap();
        assert_eq!(r.n_iterations, 1);
        assert_eq!(r.loglik_trajectory.len(), 2);
        assert!(r.converged);
    }

    #[test]
    fn em_rejects_bad_corpora() {
        let h = two_state();
        assert!(matches!(baum_welch(&h, &corpus(vec![]), 5, 1e-4), Err(Error::EmptyCorpus(_))));
        assert!(baum_welch(&h, &corpus(vec![vec![1.0]]), 5, 1e-4).is_err());
    }

    #[test]
    fn recovers_two_state_generator() {
        let truth = GaussianHmm::new(
            vec![0.5, 0.5],
            vec![vec![0.9, 0.1], vec![0.15, 0.85]],
            vec![1.0, 4.0],
            vec![0.6, 0.8],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let seqs: Vec<Vec<f64>> = (0..50).map(|_| truth.sample(100, &mut rng).0).collect();
        let c = corpus(seqs);
        assert_eq!(c.n_observations(), 5000);
        let (fitted, report) = fit(&c, &FitOptions { n_states: 2, ..Default::default() }, None).unwrap();
        assert!(report.max_decrease() <= 1e-8);
        assert!((fitted.means()[0] - 1.0).abs() < 0.1, "{:?}", fitted.means());
        assert!((fitted.means()[1] - 4.0).abs() < 0.1, "{:?}", fitted.means());
    }

    #[test]
    fn model_file_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut h = random_hmm(4, &mut rng);
        h.set_training(TrainingMeta {
            perspective: Some("ch_amount_genuine".into()),
            window: Some(3),
            corpus_sequences: 10,
            corpus_observations: 99,
            seed: 5,
            n_iterations: 7,
            converged: true,
            final_loglik: -123.456_789_012_345_67,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        h.save(&path).unwrap();
        assert_eq!(GaussianHmm::load(&path).unwrap(), h);
        assert!(GaussianHmm::from_json(&h.to_json().unwrap().replace("gaussian-hmm/1", "x")).is_err());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let bad_row = GaussianHmm::new(vec![1.0, 0.0], vec![vec![0.5, 0.6], vec![0.5, 0.5]], vec![0.0; 2], vec![1.0; 2]);
        assert!(bad_row.is_err());
        let low_std = GaussianHmm::new(vec![1.0], vec![vec![1.0]], vec![0.0], vec![1e-5]);
        assert!(low_std.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn forward_equals_enumeration(seed in any::<u64>(), k in 1usize..=3, len in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_hmm(k, &mut rng);
            let obs: Vec<f64> = (0..len).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let f = h.loglik(&obs).unwrap();
            let b = brute_force_loglik(&h, &obs).unwrap();
            prop_assert!((f - b).abs() <= 1e-9 * b.abs());
        }

        #[test]
        fn relabelling_states_preserves_scores(seed in any::<u64>(), len in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_hmm(3, &mut rng);
            let obs: Vec<f64> = (0..len).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let base = h.loglik(&obs).unwrap();
            for perm in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
                let p = h.permuted(&perm);
                prop_assert!((p.loglik(&obs).unwrap() - base).abs() <= 1e-12 * base.abs().max(1.0));
                let vp = viterbi(&p, &obs).unwrap().log_prob;
                let vh = viterbi(&h, &obs).unwrap().log_prob;
                prop_assert!((vp - vh).abs() <= 1e-12 * vh.abs().max(1.0));
            }
        }

        #[test]
        fn viterbi_never_beats_the_sum(seed in any::<u64>(), k in 1usize..=4, len in 1usize..=30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_hmm(k, &mut rng);
            let obs: Vec<f64> = (0..len).map(|_| rng.gen_range(-4.0..4.0)).collect();
            prop_assert!(viterbi(&h, &obs).unwrap().log_prob <= h.loglik(&obs).unwrap() + 1e-12);
        }

        #[test]
        fn em_is_monotone_and_keeps_invariants(seed in any::<u64>(), k in 1usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = random_hmm(3, &mut rng);
            let seqs: Vec<Vec<f64>> = (0..6).map(|_| {
                let len = rng.gen_range(2..40);
                truth.sample(len, &mut rng).0
            }).collect();
            let c = corpus(seqs);
            let mut h = init_hmm(k, &c, seed).unwrap();
            let mut last = f64::NEG_INFINITY;
            for _ in 0..15 {
                let (next, r) = baum_welch(&h, &c, 1, 0.0).unwrap();
                next.validate().unwrap();
                prop_assert!(r.max_decrease() <= 1e-8);
                prop_assert!(r.loglik_trajectory[0] >= last - 1e-8);
                last = r.loglik_trajectory[0];
                h = next;
            }
        }
    }
}
