//! Multi-perspective hidden Markov model features for transaction fraud
//! detection.
//!
//! The crate builds eight sequence corpora from labelled transactions
//! (genuine/compromised actor × card-holder/terminal × amount/time-delta),
//! fits a Gaussian-emission HMM on each, and turns the likelihood of every
//! transaction's trailing window into a feature. Those features are combined
//! with 24h aggregates and fed to from-scratch classifiers whose value is
//! measured with precision-recall AUC.
//!
//! Module map:
//!
//! - [`txmodel`]: transactions, CSV I/O, temporal partitioning
//! - [`syngen`]: deterministic synthetic transaction streams with fraud episodes
//! - [`seqcorpus`]: perspectives, training corpora, trailing-window history
//! - [`ghmm`]: Gaussian HMM (forward/backward, Baum-Welch, Viterbi)
//! - [`featurize`]: HMM features, aggregates, feature-matrix assembly
//! - [`learners`]: random forest, logistic regression, AdaBoost, ensembles
//! - [`evalkit`]: PR curves, multi-run summaries, comparison tables
//! - [`pipeline`]: config-driven experiment stages behind the `seqfraud` binary
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod error;
pub mod evalkit;
pub mod featurize;
pub mod ghmm;
pub mod learners;
pub mod pipeline;
pub mod seqcorpus;
pub mod syngen;
pub mod txmodel;

pub use error::{Error, Result};
