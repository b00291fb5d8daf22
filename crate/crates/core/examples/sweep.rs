//! HMM hyperparameter sweep: hidden states × window size, one PR-AUC
//! summary per cell.
//!
//! cargo run --release --example sweep

use seqfraud::pipeline::{load_sweep, run_pipeline, PipelineConfig};

const CONFIG: &str = r#"
seeds = [1, 2]

[data.preset]
name = "ecommerce"
scale = 0.1

[split]
train_end = "2015-04-12"
validation_start = "2015-04-13"

[hmm]
windows = [3, 5]
states = [3, 5]

[features]
sets = ["raw"]

[classifier]
family = "random_forest"
n_trees = [40]
n_features_per_split = [7]
min_samples_leaf = [1]
max_depth = [0]

[missing]
enabled = false
"#;

fn main() -> seqfraud::Result<()> {
    let mut cfg = PipelineConfig::from_toml(CONFIG)?;
    cfg.out_dir = std::env::temp_dir().join("seqfraud-sweep");
    run_pipeline(&cfg)?;
    let matrix = load_sweep(&cfg)?;
    print!("{}", matrix.to_text());
    println!("relative spread {:.1}%", 100.0 * matrix.relative_spread());
    Ok(())
}
