//! Acceptance checks, one PASS/FAIL line per criterion. Runs as a plain
//! binary so the lines always reach the test log; exits non-zero when any
//! criterion fails.
//!
//! Criteria 4-6 run the full-size synthetic presets and dominate the
//! runtime. `SEQFRAUD_ACCEPTANCE=quick` skips them (reported as SKIP).

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqfraud::evalkit::{pr_auc, ComparisonRow};
use seqfraud::featurize::{compute_aggregates, FeatureSet};
use seqfraud::ghmm::{brute_force_loglik, fit, log_forward, oracle, viterbi, FitOptions, GaussianHmm};
use seqfraud::pipeline::{
    load_history_counts, load_missing_study, load_results, load_sweep, run_pipeline, PipelineConfig,
};
use seqfraud::seqcorpus::{build_corpora, group_by_actor, Actor, HistoryIndex, Perspective, PerspectiveCorpus};
use seqfraud::syngen::{generate, GeneratorConfig};
use seqfraud::txmodel::Transaction;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_hmm(rng: &mut ChaCha8Rng, k: usize) -> GaussianHmm {
    let simplex = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let pi = simplex(rng);
    let trans = (0..k).map(|_| simplex(rng)).collect();
    let means = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let stds = (0..k).map(|_| rng.gen_range(0.3..2.0)).collect();
    GaussianHmm::new(pi, trans, means, stds).unwrap()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut path_mismatch = 0;
    for _ in 0..200 {
        let k = rng.gen_range(1..=3);
        let t = rng.gen_range(1..=6);
        let hmm = random_hmm(&mut rng, k);
        let obs: Vec<f64> = (0..t).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let fwd = log_forward(&hmm, &obs).map_err(err)?.loglik;
        let exact = brute_force_loglik(&hmm, &obs).map_err(err)?;
        worst = worst.max((fwd - exact).abs() / exact.abs().max(1.0));

        let mut best: Option<(Vec<usize>, f64)> = None;
        oracle::for_each_path(&hmm, &obs, |p, lp| {
            if best.as_ref().map_or(true, |(_, b)| lp > *b) {
                best = Some((p.to_vec(), lp));
            }
        })
        .map_err(err)?;
        let (argmax, _) = best.unwrap();
        if viterbi(&hmm, &obs).map_err(err)?.states != argmax {
            path_mismatch += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && path_mismatch == 0 && secs < 10.0,
        format!("max relative loglik error {worst:.1e}, {path_mismatch} Viterbi mismatches, {secs:.2}s"),
    )
}

fn criterion_2() -> Outcome {
    let txs = generate(&GeneratorConfig::ecommerce().scaled(0.1)).map_err(err)?;
    let corpora = build_corpora(&group_by_actor(&txs, Actor::CardHolder), &group_by_actor(&txs, Actor::Terminal), 3)
        .map_err(err)?;
    let mut worst = 0.0f64;
    for corpus in &corpora {
        for seed in 0..3 {
            let opts = FitOptions { n_states: 5, seed, max_iter: 100, ..Default::default() };
            let (_, report) = fit(corpus, &opts, Some(3)).map_err(err)?;
            worst = worst.max(report.max_decrease());
        }
    }

    let truth = GaussianHmm::new(vec![0.5, 0.5], vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![0.0, 4.0], vec![1.0, 1.0])
        .map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sequences: Vec<Vec<f64>> = (0..50).map(|_| truth.sample(100, &mut rng).0).collect();
    let corpus = PerspectiveCorpus { perspective: Perspective::ALL[0], sequences };
    let (model, _) = fit(&corpus, &FitOptions { n_states: 2, ..Default::default() }, None).map_err(err)?;
    let mut means = model.means().to_vec();
    means.sort_by(f64::total_cmp);
    let mean_err = (means[0] - 0.0).abs().max((means[1] - 4.0).abs());
    check(
        worst <= 1e-8 && mean_err <= 0.1,
        format!(
            "largest EM step decrease {worst:.1e} over 8 corpora x 3 seeds; recovered means [{:.3}, {:.3}] (error {mean_err:.3})",
            means[0], means[1]
        ),
    )
}

fn criterion_3() -> Outcome {
    let y: Vec<u8> = (0..1000).map(|i| (i % 10 == 0) as u8).collect();
    let perfect: Vec<f64> = y.iter().map(|&l| l as f64).collect();
    let p = pr_auc(&perfect, &y).map_err(err)?;
    let c = pr_auc(&vec![0.5; y.len()], &y).map_err(err)?;
    let n = 10_000;
    let labels: Vec<u8> = (0..n).map(|i| (i % 10 == 0) as u8).collect();
    let mut inside = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let a = pr_auc(&s, &labels).map_err(err)?;
        if (0.08..=0.12).contains(&a) {
            inside += 1;
        }
    }
    check(
        p == 1.0 && c == 0.1 && inside >= 19,
        format!("perfect {p}, constant {c} (prevalence 0.1), random in [0.08, 0.12] on {inside}/20 seeds"),
    )
}

/// Full-size e-commerce run shared by criteria 4-6.
const ECOMMERCE: &str = r#"
seeds = [1, 2, 3]

[data.preset]
name = "ecommerce"

[hmm]
windows = [3, 5, 7]
states = [3, 5, 7]
primary_states = 5
primary_window = 3

[features]
sets = ["raw+aggCH", "raw+allagg"]
write_matrices = false

[classifier]
family = "random_forest"
n_trees = [50]
n_features_per_split = [7]
min_samples_leaf = [1]
max_depth = [0]
"#;

const FACE_TO_FACE: &str = r#"
seeds = [1, 2, 3]

[data.preset]
name = "face_to_face"

[hmm]
windows = [3]
states = [5]

[features]
sets = ["raw+aggCH", "raw+allagg"]
write_matrices = false

[classifier]
family = "random_forest"
n_trees = [50]
n_features_per_split = [7]
min_samples_leaf = [1]
max_depth = [0]

[missing]
enabled = false
"#;

fn config(text: &str, dir: &Path) -> Result<PipelineConfig, String> {
    let mut cfg = PipelineConfig::from_toml(text).map_err(err)?;
    cfg.out_dir = dir.to_path_buf();
    Ok(cfg)
}

fn n_transactions(dir: &Path) -> Result<usize, String> {
    let text = fs::read_to_string(dir.join("data/transactions.csv")).map_err(err)?;
    Ok(text.lines().count().saturating_sub(1))
}

fn comparison(cfg: &PipelineConfig) -> Result<Vec<ComparisonRow>, String> {
    let records = load_results(cfg).map_err(err)?;
    let find = |set: FeatureSet| records.iter().find(|r| r.feature_set == set).expect("evaluated set");
    let mut rows = Vec::new();
    for base in [FeatureSet::RAW_AGG_CH, FeatureSet::RAW_ALL_AGG] {
        rows.push(ComparisonRow {
            feature_set: base.to_string(),
            without: find(base).summary().map_err(err)?,
            with: find(base.with_hmm()).summary().map_err(err)?,
        });
    }
    Ok(rows)
}

fn describe(name: &str, n: usize, rows: &[ComparisonRow]) -> String {
    let parts: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{} {} -> {} ({:.1} pooled std)",
                r.feature_set,
                r.without.display(),
                r.with.display(),
                r.margin_in_pooled_std()
            )
        })
        .collect();
    format!("{name} ({n} tx): {}", parts.join("; "))
}

struct Heavy {
    ecommerce: PipelineConfig,
    criterion_4: Outcome,
}

fn run_heavy(root: &Path) -> Heavy {
    let started = Instant::now();
    let ec = config(ECOMMERCE, &root.join("ecommerce")).expect("valid config");
    let f2f = config(FACE_TO_FACE, &root.join("face_to_face")).expect("valid config");
    let outcome = (|| {
        run_pipeline(&ec).map_err(err)?;
        run_pipeline(&f2f).map_err(err)?;
        let secs = started.elapsed().as_secs_f64();
        let (n_ec, n_f2f) = (n_transactions(&ec.out_dir)?, n_transactions(&f2f.out_dir)?);
        let (rows_ec, rows_f2f) = (comparison(&ec)?, comparison(&f2f)?);
        let ok = n_ec >= 200_000
            && n_f2f >= 500_000
            && secs <= 1800.0
            && rows_ec.iter().chain(&rows_f2f).all(|r| r.margin_in_pooled_std() > 2.0);
        check(
            ok,
            format!(
                "{}; {}; {:.0}s for both runs including the sweep and missing-value study",
                describe("e-commerce", n_ec, &rows_ec),
                describe("face-to-face", n_f2f, &rows_f2f),
                secs
            ),
        )
    })();
    Heavy { ecommerce: ec, criterion_4: outcome }
}

fn criterion_5(cfg: &PipelineConfig) -> Outcome {
    let m = load_sweep(cfg).map_err(err)?;
    let spread = m.relative_spread();
    let cells: Vec<String> = m.cells.iter().flatten().map(|c| format!("{}={:.3}", c.name, c.mean_auc)).collect();
    check(spread < 0.25, format!("raw+HMM relative spread {:.1}% over {}", 100.0 * spread, cells.join(" ")))
}

fn criterion_6(cfg: &PipelineConfig) -> Outcome {
    let study = load_missing_study(cfg).map_err(err)?;
    let get = |n: &str| study.iter().find(|r| r.name == n).expect("study row");
    let (raw, d0, stacked, excl) = (get("raw"), get("default0"), get("stacked_rf"), get("exclude"));
    let mean = |r: &seqfraud::pipeline::EvalRecord| r.summary().map(|s| s.mean_auc).unwrap_or(f64::NAN);
    let best = study
        .iter()
        .filter(|r| r.n_rows == r.n_test)
        .max_by(|a, b| mean(a).total_cmp(&mean(b)))
        .map(|r| r.name.clone())
        .unwrap_or_default();
    let counts = load_history_counts(cfg).map_err(err)?;
    let counts: Vec<String> = counts.iter().map(|c| format!("History>={}: {}", c.min_history, c.n_transactions)).collect();
    check(
        d0.coverage() == 1.0
            && stacked.coverage() == 1.0
            && excl.n_rows < excl.n_test
            && mean(d0) >= mean(raw),
        format!(
            "coverage default0 {:.0}%, stacked_rf {:.0}%, exclude {}/{} rows; PR-AUC default0 {:.3} vs raw {:.3}; best on the whole test set: {best}; {}",
            100.0 * d0.coverage(),
            100.0 * stacked.coverage(),
            excl.n_rows,
            excl.n_test,
            mean(d0),
            mean(raw),
            counts.join(", ")
        ),
    )
}

fn naive_aggregates(txs: &[Transaction], i: usize) -> [f64; 8] {
    let t = &txs[i];
    let mut out = [0.0; 8];
    for o in txs {
        if o.timestamp <= t.timestamp - 86_400 || o.timestamp > t.timestamp {
            continue;
        }
        if o.card_id == t.card_id {
            out[0] += 1.0;
            out[1] += o.amount;
            if o.country == t.country {
                out[2] += 1.0;
                out[3] += o.amount;
            }
        }
        if o.terminal_id == t.terminal_id {
            out[4] += 1.0;
            out[5] += o.amount;
            if o.channel == t.channel {
                out[6] += 1.0;
                out[7] += o.amount;
            }
        }
    }
    out
}

fn criterion_7() -> Outcome {
    let mut cfg = GeneratorConfig::ecommerce().scaled(0.1);
    cfg.days = 40;
    let mut txs = generate(&cfg).map_err(err)?;
    txs.truncate(10_000);
    let index = HistoryIndex::build(&txs).map_err(err)?;
    let agg = compute_aggregates(&txs, &index).map_err(err)?;
    let mut mismatches = 0;
    for i in 0..txs.len() {
        let got: Vec<f64> = agg[i].ch.iter().chain(agg[i].tm.iter()).copied().collect();
        if got != naive_aggregates(&txs, i) {
            mismatches += 1;
        }
    }
    check(
        txs.len() == 10_000 && mismatches == 0,
        format!("{} transactions, {mismatches} rows differ from the rescan", txs.len()),
    )
}

const DETERMINISM: &str = r#"
seeds = [1, 2]

[data.preset]
name = "ecommerce"
scale = 0.06

[split]
train_end = "2015-04-05"
validation_start = "2015-04-06"

[hmm]
windows = [3, 5]
states = [3]

[features]
sets = ["raw", "raw+aggCH"]

[classifier]
family = "random_forest"
n_trees = [20]
n_features_per_split = [3]
min_samples_leaf = [1, 20]
max_depth = [0]
"#;

fn criterion_8(root: &Path) -> Outcome {
    let a = config(DETERMINISM, &root.join("run_a"))?;
    let b = config(DETERMINISM, &root.join("run_b"))?;
    run_pipeline(&a).map_err(err)?;
    run_pipeline(&b).map_err(err)?;
    let mut names: Vec<String> = fs::read_dir(a.out_dir.join("reports"))
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(a.out_dir.join("reports").join(n)).ok() != fs::read(b.out_dir.join("reports").join(n)).ok())
        .collect();
    check(
        !names.is_empty() && differing.is_empty(),
        format!("{} report CSVs compared ({}), {} differ", names.len(), names.join(", "), differing.len()),
    )
}

fn main() {
    let quick = std::env::var("SEQFRAUD_ACCEPTANCE").map_or(false, |v| v == "quick");
    let root = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    let mut report = |n: usize, outcome: Option<Outcome>| {
        match outcome {
            Some(Ok(d)) => println!("criterion {n}: PASS: {d}"),
            Some(Err(d)) => {
                failed += 1;
                println!("criterion {n}: FAIL: {d}");
            }
            None => println!("criterion {n}: SKIP: heavy criteria disabled by SEQFRAUD_ACCEPTANCE=quick"),
        }
    };
    report(1, Some(criterion_1()));
    report(2, Some(criterion_2()));
    report(3, Some(criterion_3()));
    if quick {
        for n in 4..=6 {
            report(n, None);
        }
    } else {
        let heavy = run_heavy(root.path());
        let ran = heavy.criterion_4.is_ok() || load_results(&heavy.ecommerce).is_ok();
        report(4, Some(heavy.criterion_4.clone()));
        let na = || Err("e-commerce run did not finish".to_string());
        report(5, Some(if ran { criterion_5(&heavy.ecommerce) } else { na() }));
        report(6, Some(if ran { criterion_6(&heavy.ecommerce) } else { na() }));
    }
    report(7, Some(criterion_7()));
    report(8, Some(criterion_8(root.path())));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
