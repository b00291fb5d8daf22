//! History-constrained ensembles for transactions whose HMM features are
//! only partly available, compared with zero-filling.
//!
//! cargo run --release --example missing_values

use std::sync::Arc;

use seqfraud::evalkit::pr_auc;
use seqfraud::featurize::{
    assemble, compute_hmm_features_all, Blocks, FeatureSet, HmmBank, HmmFeatureSet, MissingStrategy, RawEncoder,
};
use seqfraud::ghmm::{fit, FitOptions};
use seqfraud::learners::{
    stacked_rf, train_random_forest, weighted_pr_ensemble, ConstraintData, ConstraintForests, HistoryConstraint,
    RfParams,
};
use seqfraud::seqcorpus::{build_corpora, group_by_actor, Actor, HistoryIndex};
use seqfraud::syngen::{generate, GeneratorConfig};
use seqfraud::txmodel::{partition, DatasetSplit};

fn view(b: &[(usize, Vec<HmmFeatureSet>)]) -> Vec<(usize, &[HmmFeatureSet])> {
    b.iter().map(|(w, f)| (*w, f.as_slice())).collect()
}

fn main() -> seqfraud::Result<()> {
    let txs = generate(&GeneratorConfig::ecommerce().scaled(0.15))?;
    let mut split = DatasetSplit::calendar_2015();
    // A longer validation period gives the ensemble weights more frauds.
    split.train.end -= 14 * 86_400;
    split.validation.start -= 14 * 86_400;
    let part = partition(&txs, &split)?;
    let train: Vec<_> = part.train.iter().map(|&i| txs[i].clone()).collect();
    let cards = group_by_actor(&train, Actor::CardHolder);
    let terminals = group_by_actor(&train, Actor::Terminal);
    let index = HistoryIndex::build(&txs)?;

    let opts = FitOptions { n_states: 5, ..Default::default() };
    let mut banks: Vec<(usize, Vec<HmmFeatureSet>)> = Vec::new();
    for w in [3, 5, 7] {
        let corpora = build_corpora(&cards, &terminals, w)?;
        let models = corpora.iter().map(|c| fit(c, &opts, Some(w)).map(|(m, _)| m)).collect::<seqfraud::Result<_>>()?;
        banks.push((w, compute_hmm_features_all(&index, &HmmBank::new(w, models)?)?));
    }
    let encoder = RawEncoder::fit(&txs, &part.train);
    let blocks = Blocks { txs: &txs, encoder: &encoder, aggregates: None, hmm: Some(&banks[0].1) };
    let rf = RfParams { n_trees: 60, ..Default::default() };

    // Per-period inputs: raw columns, history lengths, and every bank.
    let period = |rows: &[usize]| -> seqfraud::Result<_> {
        let m = assemble(rows, FeatureSet::RAW, &blocks, MissingStrategy::Default0)?;
        let tm: Vec<usize> = rows.iter().map(|&r| index.history_len(r, Actor::Terminal)).collect();
        let ch: Vec<usize> = rows.iter().map(|&r| index.history_len(r, Actor::CardHolder)).collect();
        let b: Vec<(usize, Vec<HmmFeatureSet>)> =
            banks.iter().map(|(w, f)| (*w, rows.iter().map(|&r| f[r]).collect())).collect();
        Ok((m, tm, ch, b))
    };
    let (tr, tr_tm, tr_ch, tr_b) = period(&part.train)?;
    let (va, va_tm, va_ch, va_b) = period(&part.validation)?;
    let (te, te_tm, te_ch, te_b) = period(&part.test)?;
    let (trv, vav, tev) = (view(&tr_b), view(&va_b), view(&te_b));
    let train_cd = ConstraintData { base: &tr.x, y: &tr.y, tm_history: &tr_tm, ch_history: &tr_ch, banks: &trv };
    let val_cd = ConstraintData { base: &va.x, y: &va.y, tm_history: &va_tm, ch_history: &va_ch, banks: &vav };
    let test_cd = ConstraintData { base: &te.x, y: &te.y, tm_history: &te_tm, ch_history: &te_ch, banks: &tev };

    let forests = Arc::new(ConstraintForests::train(&train_cd, &HistoryConstraint::all(), &rf)?);
    let weighted = weighted_pr_ensemble(forests.clone(), &val_cd)?;
    let stacked = stacked_rf(forests.clone(), &val_cd, &rf)?;
    for (c, w) in forests.constraints.iter().zip(&weighted.weights) {
        print!("{c}:{w:.2} ");
    }
    println!();

    let fit_score = |set: FeatureSet, strategy| -> seqfraud::Result<(f64, usize)> {
        let a = assemble(&part.train, set, &blocks, strategy)?;
        let b = assemble(&part.test, set, &blocks, strategy)?;
        let m = train_random_forest(&a.x, &a.y, &rf)?;
        Ok((pr_auc(&m.predict_proba(&b.x)?, &b.y)?, b.n_rows()))
    };
    let n = part.test.len();
    let (raw, _) = fit_score(FeatureSet::RAW, MissingStrategy::Default0)?;
    let (zero, _) = fit_score(FeatureSet::RAW.with_hmm(), MissingStrategy::Default0)?;
    let (excl, kept) = fit_score(FeatureSet::RAW.with_hmm(), MissingStrategy::Exclude)?;
    println!("raw          {raw:.3} on {n} rows");
    println!("default0     {zero:.3} on {n} rows");
    println!("weighted_pr  {:.3} on {n} rows", pr_auc(&weighted.predict(&test_cd)?, &te.y)?);
    println!("stacked_rf   {:.3} on {n} rows", pr_auc(&stacked.predict(&test_cd)?, &te.y)?);
    println!("exclude      {excl:.3} on {kept} rows");
    Ok(())
}
