//! Turn trained HMM banks into the eight per-transaction likelihood
//! features, and show which transactions lack enough history.
//!
//! cargo run --release --example hmm_features

use seqfraud::featurize::{apply_default0, compute_hmm_features_all, HmmBank};
use seqfraud::ghmm::{fit, FitOptions};
use seqfraud::seqcorpus::{build_corpora, group_by_actor, Actor, HistoryIndex, Perspective};
use seqfraud::syngen::{generate, GeneratorConfig};
use seqfraud::txmodel::{partition, DatasetSplit};

fn main() -> seqfraud::Result<()> {
    let txs = generate(&GeneratorConfig::ecommerce().scaled(0.1))?;
    let part = partition(&txs, &DatasetSplit::calendar_2015())?;
    let train: Vec<_> = part.train.iter().map(|&i| txs[i].clone()).collect();

    let window = 3;
    let corpora = build_corpora(
        &group_by_actor(&train, Actor::CardHolder),
        &group_by_actor(&train, Actor::Terminal),
        window,
    )?;
    let opts = FitOptions { n_states: 3, ..Default::default() };
    let models = corpora
        .iter()
        .map(|c| fit(c, &opts, Some(window)).map(|(m, _)| m))
        .collect::<seqfraud::Result<Vec<_>>>()?;
    let bank = HmmBank::new(window, models)?;

    // Features use every earlier transaction, whatever its period.
    let index = HistoryIndex::build(&txs)?;
    let features = compute_hmm_features_all(&index, &bank)?;

    let names: Vec<String> = Perspective::ALL.iter().map(|p| p.feature_name()).collect();
    println!("{:>8} {:>5} {}", "tx", "fraud", names.join("      "));
    for &i in part.test.iter().take(8) {
        let row: Vec<String> = apply_default0(&features[i]).iter().map(|v| format!("{v:>8.2}")).collect();
        println!("{:>8} {:>5} {}", txs[i].tx_id, txs[i].is_fraud(), row.join(" "));
    }

    let incomplete = part.test.iter().filter(|&&i| features[i].n_present() < 8).count();
    println!("{incomplete} of {} test transactions have fewer than {window} card or terminal transactions", part.test.len());

    // Frauds look less like genuine card behaviour than genuine transactions do.
    let genuine_ch = Perspective::ALL[0].index();
    let mean = |fraud: bool| {
        let v: Vec<f64> = part
            .test
            .iter()
            .filter(|&&i| txs[i].is_fraud() == fraud && features[i].present(genuine_ch))
            .map(|&i| features[i].values[genuine_ch])
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    println!("mean hmm1 (genuine card amounts): genuine {:.2}, fraud {:.2}", mean(false), mean(true));
    Ok(())
}
