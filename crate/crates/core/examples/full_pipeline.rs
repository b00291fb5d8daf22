//! Run every pipeline stage on a small synthetic config and print the
//! reports. The same stages are available from the `seqfraud` binary.
//!
//! cargo run --release --example full_pipeline

use seqfraud::pipeline::{run_pipeline, PipelineConfig};

const CONFIG: &str = r#"
seeds = [1, 2]

[data.preset]
name = "ecommerce"
scale = 0.1

[split]
train_end = "2015-04-12"
validation_start = "2015-04-13"

[features]
sets = ["raw", "raw+aggCH"]

[classifier]
family = "random_forest"
n_trees = [40]
n_features_per_split = [7]
min_samples_leaf = [1, 20]
max_depth = [0]
"#;

fn main() -> seqfraud::Result<()> {
    let mut cfg = PipelineConfig::from_toml(CONFIG)?;
    cfg.out_dir = std::env::temp_dir().join("seqfraud-full-pipeline");
    let dir = run_pipeline(&cfg)?;
    for name in ["comparison.txt", "history_counts.txt", "missing_values.txt"] {
        let path = dir.join("reports").join(name);
        println!("== {name}");
        print!("{}", std::fs::read_to_string(&path).map_err(|e| seqfraud::Error::InvalidInput(e.to_string()))?);
    }
    println!("artifacts under {}", dir.display());
    Ok(())
}
