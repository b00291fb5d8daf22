//! Precision-recall curves, PR-AUC and the mean ± std tables reported by
//! experiments.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, highest threshold first.
    pub points: Vec<PrPoint>,
    pub auc: f64,
    pub prevalence: f64,
    pub n_positive: usize,
    pub n: usize,
}

/// Curve over every distinct score (ties share one threshold) and its area
/// as average precision: the sum over thresholds of recall gain times
/// precision.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<PrCurve> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    let n_positive = labels.iter().filter(|&&l| l == 1).count();
    if n_positive == 0 {
        return Err(Error::InvalidInput("no positive labels; PR curve undefined".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let p = n_positive as f64;
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    // Recall gains at equal precision are summed as integers before scaling,
    // so a perfect ranking and a constant score give exact results.
    let mut run_precision = f64::NAN;
    let mut run_gain = 0usize;
    let mut k = 0;
    while k < order.len() {
        let threshold = scores[order[k]];
        let tp_before = tp;
        while k < order.len() && scores[order[k]].total_cmp(&threshold).is_eq() {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let gain = tp - tp_before;
        if gain > 0 {
            if precision != run_precision {
                if run_gain > 0 {
                    auc += run_precision * (run_gain as f64 / p);
                }
                run_precision = precision;
                run_gain = 0;
            }
            run_gain += gain;
        }
        points.push(PrPoint { threshold, precision, recall: tp as f64 / p });
    }
    if run_gain > 0 {
        auc += run_precision * (run_gain as f64 / p);
    }
    Ok(PrCurve {
        points,
        auc: auc.clamp(0.0, 1.0),
        prevalence: n_positive as f64 / scores.len() as f64,
        n_positive,
        n: scores.len(),
    })
}

pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(pr_curve(scores, labels)?.auc)
}

impl PrCurve {
    /// CSV with columns `threshold,precision,recall`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold", "precision", "recall"])?;
        for pt in &self.points {
            w.write_record([pt.threshold.to_string(), pt.precision.to_string(), pt.recall.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub mean_auc: f64,
    /// Population standard deviation.
    pub std_auc: f64,
    pub n_runs: usize,
    pub aucs: Vec<f64>,
}

impl RunSummary {
    pub fn from_aucs(name: impl Into<String>, aucs: Vec<f64>) -> Result<Self> {
        if aucs.is_empty() {
            return Err(Error::InvalidInput("summary of zero runs".into()));
        }
        let n = aucs.len() as f64;
        let mean = aucs.iter().sum::<f64>() / n;
        let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            name: name.into(),
            mean_auc: mean,
            std_auc: var.sqrt(),
            n_runs: aucs.len(),
            aucs,
        })
    }

    /// `0.212 ± 0.009`.
    pub fn display(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean_auc, self.std_auc)
    }
}

/// Runs `experiment` once per seed (in parallel) and summarises the PR-AUCs
/// in seed order.
pub fn multi_run<F>(name: &str, seeds: &[u64], experiment: F) -> Result<RunSummary>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let aucs = seeds.par_iter().map(|&s| experiment(s)).collect::<Result<Vec<_>>>()?;
    RunSummary::from_aucs(name, aucs)
}

/// `(with - without) / without`.
pub fn relative_increase(without: f64, with: f64) -> f64 {
    (with - without) / without
}

/// Percent with one decimal, signed when positive: `+9.3%`, `0.0%`, `-8.5%`.
pub fn format_increase(rel: f64) -> String {
    let pct = format!("{:.1}", rel * 100.0);
    match pct.as_str() {
        "0.0" | "-0.0" => "0.0%".into(),
        s if s.starts_with('-') => format!("{s}%"),
        s => format!("+{s}%"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub feature_set: String,
    pub without: RunSummary,
    pub with: RunSummary,
}

impl ComparisonRow {
    pub fn increase(&self) -> f64 {
        relative_increase(self.without.mean_auc, self.with.mean_auc)
    }

    /// Mean gain divided by the pooled standard deviation of both arms
    /// (infinite when both are deterministic and differ).
    pub fn margin_in_pooled_std(&self) -> f64 {
        let pooled = ((self.without.std_auc.powi(2) + self.with.std_auc.powi(2)) / 2.0).sqrt();
        let gain = self.with.mean_auc - self.without.mean_auc;
        if pooled == 0.0 {
            if gain > 0.0 {
                f64::INFINITY
            } else if gain < 0.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        } else {
            gain / pooled
        }
    }
}

/// Feature sets with and without HMM features, side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub fn comparison_table(pairs: Vec<(RunSummary, RunSummary)>) -> ComparisonTable {
    ComparisonTable {
        rows: pairs
            .into_iter()
            .map(|(without, with)| ComparisonRow {
                feature_set: without.name.clone(),
                without,
                with,
            })
            .collect(),
    }
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature_set,mean_without_hmm,std_without_hmm,mean_with_hmm,std_with_hmm,increase\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{}",
                r.feature_set,
                r.without.mean_auc,
                r.without.std_auc,
                r.with.mean_auc,
                r.with.std_auc,
                format_increase(r.increase())
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let header = ["", "without HMM", "with HMM", "increase through HMMs"].map(String::from);
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| vec![r.feature_set.clone(), r.without.display(), r.with.display(), format_increase(r.increase())])
            .collect();
        render_text(&header, &body)
    }
}

pub fn render_text(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        parts.join(" | ").trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out += &(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-+-") + "\n");
    for row in body {
        out += &line(row);
    }
    out
}

/// PR-AUC summaries over hidden-state counts (rows) × window sizes (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMatrix {
    pub states: Vec<usize>,
    pub windows: Vec<usize>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<RunSummary>>,
}

impl SweepMatrix {
    pub fn new(states: Vec<usize>, windows: Vec<usize>, cells: Vec<Vec<RunSummary>>) -> Result<Self> {
        if cells.len() != states.len() || cells.iter().any(|r| r.len() != windows.len()) {
            return Err(Error::InvalidInput("sweep cells do not match the grid shape".into()));
        }
        Ok(Self { states, windows, cells })
    }

    /// `(max - min) / mean` of the cell means.
    pub fn relative_spread(&self) -> f64 {
        let means: Vec<f64> = self.cells.iter().flatten().map(|c| c.mean_auc).collect();
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = means.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        (max - min) / mean
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("hidden_states,window,mean_pr_auc,std_pr_auc,n_runs\n");
        for (k, row) in self.states.iter().zip(&self.cells) {
            for (w, c) in self.windows.iter().zip(row) {
                let _ = writeln!(s, "{k},{w},{:.6},{:.6},{}", c.mean_auc, c.std_auc, c.n_runs);
            }
        }
        s
    }

    pub fn to_text(&self) -> String {
        let header: Vec<String> = std::iter::once("states \\ window".to_string())
            .chain(self.windows.iter().map(|w| w.to_string()))
            .collect();
        let body: Vec<Vec<String>> = self
            .states
            .iter()
            .zip(&self.cells)
            .map(|(k, row)| std::iter::once(k.to_string()).chain(row.iter().map(RunSummary::display)).collect())
            .collect();
        render_text(&header, &body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_and_constant_rankings() {
        let labels = [1, 1, 0, 0, 0, 1, 0];
        let perfect: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        assert_eq!(pr_auc(&perfect, &labels).unwrap(), 1.0);
        let c = pr_curve(&[0.5; 7], &labels).unwrap();
        assert_eq!(c.auc, 3.0 / 7.0);
        assert_eq!(c.auc, c.prevalence);
        assert_eq!(c.points.len(), 1);
    }

    #[test]
    fn hand_computed_ten_points() {
        // Descending scores with labels 1 0 1 1 0 0 1 0 0 0 (no ties):
        // precision at each positive: 1/1, 2/3, 3/4, 4/7.
        let scores: Vec<f64> = (0..10).map(|i| 1.0 - i as f64 / 10.0).collect();
        let labels = [1, 0, 1, 1, 0, 0, 1, 0, 0, 0];
        let expected = (1.0 + 2.0 / 3.0 + 3.0 / 4.0 + 4.0 / 7.0) / 4.0;
        let c = pr_curve(&scores, &labels).unwrap();
        assert_relative_eq!(c.auc, expected, epsilon = 1e-15);
        assert_eq!(c.points.last().unwrap().recall, 1.0);
        // A tie between the 2nd and 3rd items merges them into one threshold.
        let mut tied = scores.clone();
        tied[2] = tied[1];
        let c = pr_curve(&tied, &labels).unwrap();
        assert_eq!(c.points.len(), 9);
        assert_relative_eq!(c.auc, (1.0 + 2.0 / 3.0 + 3.0 / 4.0 + 4.0 / 7.0) / 4.0, epsilon = 1e-15);
    }

    #[test]
    fn undefined_inputs_error() {
        assert!(pr_curve(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(pr_curve(&[], &[]).is_err());
        assert!(pr_curve(&[0.1], &[1, 0]).is_err());
        assert!(pr_curve(&[f64::NAN, 0.2], &[1, 0]).is_err());
    }

    #[test]
    fn random_scores_near_prevalence() {
        let mut within = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<u8> = (0..10_000).map(|i| (i % 10 == 0) as u8).collect();
            let scores: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
            let auc = pr_auc(&scores, &labels).unwrap();
            within += (0.08..=0.12).contains(&auc) as usize;
        }
        assert!(within >= 19);
    }

    #[test]
    fn summaries_use_population_std() {
        let s = RunSummary::from_aucs("x", vec![0.1, 0.2, 0.3]).unwrap();
        assert_relative_eq!(s.mean_auc, 0.2, epsilon = 1e-15);
        assert_relative_eq!(s.std_auc, (2.0f64 / 3.0).sqrt() / 10.0, epsilon = 1e-15);
        assert_relative_eq!(s.std_auc, 0.0816, epsilon = 1e-4);
        assert_eq!(RunSummary::from_aucs("x", vec![0.4]).unwrap().std_auc, 0.0);
        let m = multi_run("x", &[1, 2, 3], |_| Ok(0.25)).unwrap();
        assert_eq!((m.std_auc, m.n_runs), (0.0, 3));
        let by_seed = multi_run("x", &[3, 1, 2], |s| Ok(s as f64)).unwrap();
        assert_eq!(by_seed.aucs, vec![3.0, 1.0, 2.0]);
        assert!(multi_run("x", &[], |_| Ok(0.0)).is_err());
    }

    #[test]
    fn increase_formatting() {
        assert_eq!(format_increase(relative_increase(0.343, 0.375)), "+9.3%");
        assert_eq!(format_increase(relative_increase(0.082, 0.152)), "+85.4%");
        assert_eq!(format_increase(relative_increase(0.3, 0.3)), "0.0%");
        assert_eq!(format_increase(-0.085), "-8.5%");
    }

    #[test]
    fn tables_render() {
        let a = RunSummary::from_aucs("raw+aggCH", vec![0.343]).unwrap();
        let b = RunSummary::from_aucs("raw+aggCH+HMM", vec![0.375]).unwrap();
        let t = comparison_table(vec![(a.clone(), b.clone())]);
        assert!(t.to_csv().lines().nth(1).unwrap().ends_with(",+9.3%"));
        assert!(t.to_text().contains("0.343 ± 0.000"));
        assert_eq!(t.rows[0].margin_in_pooled_std(), f64::INFINITY);

        let cells = vec![vec![a.clone(), b.clone()], vec![b.clone(), a.clone()]];
        let m = SweepMatrix::new(vec![3, 5], vec![3, 5], cells).unwrap();
        assert_eq!(m.to_csv().lines().count(), 5);
        assert_eq!(m.cells[1][0].mean_auc, 0.375);
        assert_relative_eq!(m.relative_spread(), 0.032 / 0.359, epsilon = 1e-12);
        assert!(SweepMatrix::new(vec![3], vec![3, 5], vec![vec![a]]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_transform_and_permutation_invariance(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..60),
            seed in any::<u64>(),
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64).collect();
            let mut labels: Vec<u8> = data.iter().map(|(_, l)| *l as u8).collect();
            labels[0] = 1;
            let base = pr_curve(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&base.auc));
            prop_assert!(base.points.windows(2).all(|w| w[0].recall <= w[1].recall));
            prop_assert_eq!(base.points.last().unwrap().recall, 1.0);

            let squashed: Vec<f64> = scores.iter().map(|s| (s * 0.3).exp() - 7.0).collect();
            prop_assert_eq!(pr_auc(&squashed, &labels).unwrap(), base.auc);

            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..scores.len()).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let ps: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
            let pl: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
            prop_assert_eq!(pr_curve(&ps, &pl).unwrap(), base);
        }
    }
}
