use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{significance_marker, t_test_one_tailed, TTest};
use super::{train, Dataset, RunResult, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub name: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowSummary {
    pub name: String,
    pub model: String,
    pub seeds: Vec<u64>,
    /// Test micro-F1 in percentage points, one per seed.
    pub scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Largest one-tailed p of this row against every baseline row.
    pub p_value: Option<f64>,
    pub marker: String,
    #[serde(skip)]
    pub runs: Vec<RunResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentTable {
    pub n_runs: usize,
    pub base_seed: u64,
    pub baselines: Vec<String>,
    pub rows: Vec<RowSummary>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = if x.len() < 2 {
        0.0
    } else {
        (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

/// Trains every row `n_runs` times with seeds `base_seed + i` and compares
/// each non-baseline row against all `baselines` (row indices).
///
/// Runs execute on a pool of `threads` workers; results are keyed by row and
/// seed, so the table does not depend on scheduling.
pub fn run_experiment(
    rows: &[ExperimentRow],
    data: &Dataset,
    n_runs: usize,
    base_seed: u64,
    baselines: &[usize],
    threads: usize,
) -> Result<ExperimentTable> {
    if n_runs == 0 || rows.is_empty() {
        return Err(Error::Usage("need at least one row and one run".into()));
    }
    if let Some(&b) = baselines.iter().find(|&&b| b >= rows.len()) {
        return Err(Error::Usage(format!("baseline row {b} does not exist")));
    }
    for r in rows {
        r.config
            .validate()
            .map_err(|e| Error::Config(format!("row {:?}: {e}", r.name)))?;
    }
    let jobs: Vec<(usize, u64)> = (0..rows.len())
        .flat_map(|r| (0..n_runs as u64).map(move |i| (r, base_seed + i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    let results: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(r, seed)| {
                let cfg = TrainConfig {
                    seed,
                    ..rows[r].config
                };
                let out = train(&cfg, data).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("row {:?}: {m}", rows[r].name)),
                    other => other,
                })?;
                log::info!(
                    "{} seed {seed}: test F1 {:.4}",
                    rows[r].name,
                    out.result.test.map_or(f64::NAN, |m| m.f1)
                );
                Ok(out.result)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut summaries: Vec<RowSummary> = rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let runs: Vec<RunResult> = results[r * n_runs..(r + 1) * n_runs].to_vec();
            let scores: Vec<f64> = runs.iter().map(|x| 100.0 * x.test.map_or(0.0, |m| m.f1)).collect();
            let (mean, std) = mean_std(&scores);
            RowSummary {
                name: row.name.clone(),
                model: row.config.model.variant.label(),
                seeds: runs.iter().map(|x| x.seed).collect(),
                scores,
                mean,
                std,
                p_value: None,
                marker: String::new(),
                runs,
            }
        })
        .collect();
    if n_runs >= 2 && !baselines.is_empty() {
        for r in 0..summaries.len() {
            if baselines.contains(&r) {
                continue;
            }
            let mut worst: f64 = 0.0;
            for &b in baselines {
                worst = worst.max(t_test_one_tailed(&summaries[r].scores, &summaries[b].scores)?.p);
            }
            summaries[r].p_value = Some(worst);
            summaries[r].marker = significance_marker(Some(worst)).to_string();
        }
    }
    Ok(ExperimentTable {
        n_runs,
        base_seed,
        baselines: baselines.iter().map(|&b| rows[b].name.clone()).collect(),
        rows: summaries,
    })
}

impl ExperimentTable {
    pub fn row(&self, name: &str) -> Option<&RowSummary> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// One-tailed test of row `a` beating row `b`.
    pub fn compare(&self, a: &str, b: &str) -> Result<TTest> {
        let get = |n: &str| self.row(n).ok_or_else(|| Error::Usage(format!("no row named {n:?}")));
        t_test_one_tailed(&get(a)?.scores, &get(b)?.scores)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,model,n_runs,mean_f1,std_f1,p_value,marker,scores\n");
        for r in &self.rows {
            let scores: Vec<String> = r.scores.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.name,
                r.model,
                r.scores.len(),
                r.mean,
                r.std,
                r.p_value.map_or(String::new(), |p| p.to_string()),
                r.marker,
                scores.join(";")
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(3).max(3);
        let mut s = format!(
            "{:<width$}  {:>8}  {:>6}  {:>9}\n",
            "row", "mean F1", "std", "p"
        );
        for r in &self.rows {
            let p = r.p_value.map_or("-".to_string(), |p| format!("{p:.4}"));
            let _ = writeln!(
                s,
                "{:<width$}  {:>6.2}{:<2}  {:>6.2}  {:>9}",
                r.name, r.mean, r.marker, r.std, p
            );
        }
        let _ = writeln!(
            s,
            "{} runs per row, seeds {}..{}; markers vs {}: * p<0.05, ** p<0.01 (one-tailed Welch)",
            self.n_runs,
            self.base_seed,
            self.base_seed + self.n_runs as u64 - 1,
            if self.baselines.is_empty() { "-".to_string() } else { self.baselines.join(", ") }
        );
        s
    }
}
