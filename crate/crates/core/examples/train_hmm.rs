//! Build the eight perspective corpora from a training period and fit one
//! Gaussian HMM per perspective.
//!
//! cargo run --release --example train_hmm

use seqfraud::ghmm::{fit, FitOptions};
use seqfraud::seqcorpus::{build_corpora, group_by_actor, Actor};
use seqfraud::syngen::{generate, GeneratorConfig};

fn main() -> seqfraud::Result<()> {
    let txs = generate(&GeneratorConfig::ecommerce().scaled(0.1))?;
    let cards = group_by_actor(&txs, Actor::CardHolder);
    let terminals = group_by_actor(&txs, Actor::Terminal);
    let window = 3;
    let corpora = build_corpora(&cards, &terminals, window)?;
    let opts = FitOptions { n_states: 3, ..Default::default() };

    for corpus in &corpora {
        let (hmm, report) = fit(corpus, &opts, Some(window))?;
        let means: Vec<String> = hmm.means().iter().map(|m| format!("{m:.2}")).collect();
        println!(
            "{:<24} {:>5} seqs {:>7} obs  {:>3} iters  loglik {:>12.1}  means [{}]",
            corpus.perspective.slug(),
            corpus.sequences.len(),
            corpus.n_observations(),
            report.n_iterations,
            report.final_loglik(),
            means.join(", ")
        );
        assert!(report.max_decrease() <= 1e-6, "EM must not decrease the likelihood");
    }

    // Models round-trip through JSON unchanged.
    let (hmm, _) = fit(&corpora[0], &opts, Some(window))?;
    let reloaded = seqfraud::ghmm::GaussianHmm::from_json(&hmm.to_json()?)?;
    assert_eq!(hmm, reloaded);
    println!("model file:\n{}", &hmm.to_json()?[..200]);
    Ok(())
}
