//! Generate a small e-commerce stream, split it by calendar, and write CSVs.
//!
//! cargo run --example generate_dataset

use seqfraud::syngen::{generate_with_episodes, GeneratorConfig};
use seqfraud::txmodel::{partition, save_transactions, DatasetSplit, Subset};

fn main() -> seqfraud::Result<()> {
    let cfg = GeneratorConfig::ecommerce().scaled(0.1);
    let out = generate_with_episodes(&cfg)?;
    let txs = &out.transactions;
    let frauds = txs.iter().filter(|t| t.is_fraud()).count();
    println!(
        "{} transactions, {} frauds ({:.2} per 1000) in {} episodes",
        txs.len(),
        frauds,
        1000.0 * frauds as f64 / txs.len() as f64,
        out.episodes.len()
    );

    let ep = &out.episodes[0];
    println!("first episode on card {}:", ep.card_id);
    for id in &ep.tx_ids {
        let t = &txs[(*id - 1) as usize];
        println!("  tx {} at {} amount {:>8.2} terminal {}", t.tx_id, t.timestamp, t.amount, t.terminal_id);
    }

    let split = DatasetSplit::calendar_2015();
    let part = partition(txs, &split)?;
    let dir = std::env::temp_dir().join("seqfraud-generate");
    std::fs::create_dir_all(&dir).map_err(|e| seqfraud::Error::InvalidInput(e.to_string()))?;
    for s in Subset::ALL {
        let rows: Vec<_> = part.get(s).iter().map(|&i| txs[i].clone()).collect();
        let path = dir.join(format!("{}.csv", s.name()));
        save_transactions(&path, &rows)?;
        println!("{:<10} {:>7} rows -> {}", s.name(), rows.len(), path.display());
    }
    Ok(())
}
