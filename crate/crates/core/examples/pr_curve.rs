//! Precision-recall curves, average-precision AUC, and multi-seed summaries.
//!
//! cargo run --example pr_curve

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqfraud::evalkit::{comparison_table, multi_run, pr_auc, pr_curve, RunSummary};

fn main() -> seqfraud::Result<()> {
    let labels = [1u8, 0, 1, 0, 0, 1, 0, 0, 0, 0];
    let scores = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05];
    let curve = pr_curve(&scores, &labels)?;
    println!("threshold precision recall");
    for p in &curve.points {
        println!("{:>9.2} {:>9.3} {:>6.3}", p.threshold, p.precision, p.recall);
    }
    println!("PR-AUC {:.4} (prevalence {:.2})", curve.auc, curve.prevalence);
    let path = std::env::temp_dir().join("seqfraud-pr.csv");
    curve.write_csv(&path)?;
    println!("curve written to {}", path.display());

    // Random scores on 10% prevalence hover around the prevalence.
    let random = multi_run("random", &[1, 2, 3, 4, 5], |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<u8> = (0..10_000).map(|i| (i % 10 == 0) as u8).collect();
        let s: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        pr_auc(&s, &y)
    })?;
    println!("random scorer: {}", random.display());

    let table = comparison_table(vec![
        (RunSummary::from_aucs("raw+aggCH", vec![0.340, 0.343, 0.346])?, RunSummary::from_aucs("", vec![0.372, 0.375, 0.378])?),
        (RunSummary::from_aucs("raw", vec![0.080, 0.082, 0.084])?, RunSummary::from_aucs("", vec![0.150, 0.152, 0.154])?),
    ]);
    print!("{}", table.to_text());
    Ok(())
}
