//! 24-hour card-holder and terminal aggregates, checked against a direct
//! rescan for one busy card.
//!
//! cargo run --example aggregates

use seqfraud::featurize::compute_aggregates;
use seqfraud::seqcorpus::HistoryIndex;
use seqfraud::syngen::{generate, GeneratorConfig};

fn main() -> seqfraud::Result<()> {
    let txs = generate(&GeneratorConfig::ecommerce().scaled(0.05))?;
    let index = HistoryIndex::build(&txs)?;
    let agg = compute_aggregates(&txs, &index)?;

    let fraud = txs.iter().position(|t| t.is_fraud()).expect("preset has frauds");
    let card = &txs[fraud].card_id;
    println!("card {card} around its first fraud:");
    println!("{:>8} {:>6} {:>9} | {:>4} {:>9} {:>4} {:>9}", "tx", "fraud", "amount", "n24h", "sum24h", "nCty", "sumCty");
    for (i, t) in txs.iter().enumerate().filter(|(_, t)| &t.card_id == card) {
        if (t.timestamp - txs[fraud].timestamp).abs() > 3 * 86_400 {
            continue;
        }
        let a = agg[i].ch;
        println!(
            "{:>8} {:>6} {:>9.2} | {:>4} {:>9.2} {:>4} {:>9.2}",
            t.tx_id, t.is_fraud(), t.amount, a[0], a[1], a[2], a[3]
        );
        // Direct rescan of (t - 24h, t].
        let window: Vec<_> = txs
            .iter()
            .filter(|o| &o.card_id == card && o.timestamp > t.timestamp - 86_400 && o.timestamp <= t.timestamp)
            .collect();
        assert_eq!(a[0], window.len() as f64);
    }
    Ok(())
}
