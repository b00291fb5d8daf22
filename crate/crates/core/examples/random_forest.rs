//! Assemble feature matrices with and without HMM features, grid-search a
//! random forest on the validation period, and compare the three classifier
//! families on the test period.
//!
//! cargo run --release --example random_forest

use seqfraud::evalkit::pr_auc;
use seqfraud::featurize::{
    assemble, compute_aggregates, compute_hmm_features_all, Blocks, FeatureSet, HmmBank, MissingStrategy, RawEncoder,
};
use seqfraud::ghmm::{fit, FitOptions};
use seqfraud::learners::{
    gini_importance, grid_search, train_adaboost, train_logreg, train_random_forest, AdaParams, LogRegParams,
    RfParams,
};
use seqfraud::seqcorpus::{build_corpora, group_by_actor, Actor, HistoryIndex};
use seqfraud::syngen::{generate, GeneratorConfig};
use seqfraud::txmodel::{partition, DatasetSplit};

fn main() -> seqfraud::Result<()> {
    let txs = generate(&GeneratorConfig::ecommerce().scaled(0.2))?;
    let part = partition(&txs, &DatasetSplit::calendar_2015())?;
    let train: Vec<_> = part.train.iter().map(|&i| txs[i].clone()).collect();
    let corpora = build_corpora(
        &group_by_actor(&train, Actor::CardHolder),
        &group_by_actor(&train, Actor::Terminal),
        3,
    )?;
    let opts = FitOptions { n_states: 5, ..Default::default() };
    let models = corpora.iter().map(|c| fit(c, &opts, Some(3)).map(|(m, _)| m)).collect::<seqfraud::Result<_>>()?;
    let bank = HmmBank::new(3, models)?;

    let index = HistoryIndex::build(&txs)?;
    let hmm = compute_hmm_features_all(&index, &bank)?;
    let aggregates = compute_aggregates(&txs, &index)?;
    let encoder = RawEncoder::fit(&txs, &part.train);
    let blocks = Blocks { txs: &txs, encoder: &encoder, aggregates: Some(&aggregates), hmm: Some(&hmm) };

    for set in [FeatureSet::RAW_AGG_CH, FeatureSet::RAW_AGG_CH.with_hmm()] {
        let tr = assemble(&part.train, set, &blocks, MissingStrategy::Default0)?;
        let va = assemble(&part.validation, set, &blocks, MissingStrategy::Default0)?;
        let te = assemble(&part.test, set, &blocks, MissingStrategy::Default0)?;

        let grid: Vec<RfParams> = [1, 20]
            .iter()
            .map(|&leaf| RfParams { n_trees: 60, n_features_per_split: 7, min_samples_leaf: leaf, ..Default::default() })
            .collect();
        let tuned = grid_search(&grid, |p| {
            let m = train_random_forest(&tr.x, &tr.y, p)?;
            let auc = pr_auc(&m.predict_proba(&va.x)?, &va.y)?;
            Ok((m, auc))
        })?;
        let rf = &tuned.best_model;
        let rf_auc = pr_auc(&rf.predict_proba(&te.x)?, &te.y)?;

        let lr = train_logreg(&tr.x, &tr.y, &LogRegParams { c: 10.0, ..Default::default() })?;
        let lr_auc = pr_auc(&lr.predict_proba(&te.x)?, &te.y)?;
        let ada = train_adaboost(&tr.x, &tr.y, &AdaParams { n_trees: 100, max_tree_depth: 4, ..Default::default() })?;
        let ada_auc = pr_auc(&ada.predict_proba(&te.x)?, &te.y)?;

        println!("{set}: random forest {rf_auc:.3} (leaf {}), logistic {lr_auc:.3}, adaboost {ada_auc:.3}",
            tuned.best_params().min_samples_leaf);
        let imp = gini_importance(rf);
        let mut ranked: Vec<(usize, f64)> = imp.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        let top: Vec<String> = ranked.iter().take(5).map(|(j, v)| format!("{} {:.2}", tr.columns[*j], v)).collect();
        println!("  top features: {}", top.join(", "));
    }
    Ok(())
}
