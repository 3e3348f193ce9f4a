//! Cross-run comparison tables: mean +- std per variant, best per
//! environment marked.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use super::{read_summary, HarnessError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareMetric {
    /// Best cross-seed mean evaluation return over the run (higher wins).
    MaxAvgReturn,
    /// Final overestimation bias (closest to zero wins).
    FinalBias,
}

impl FromStr for CompareMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max_avg_return" => Ok(CompareMetric::MaxAvgReturn),
            "final_bias" => Ok(CompareMetric::FinalBias),
            _ => Err(format!(
                "unknown metric '{s}' (expected max_avg_return or final_bias)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub run: String,
    pub env_id: String,
    pub variant: String,
    pub mean: f64,
    pub std: f64,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub metric: CompareMetric,
    pub rows: Vec<ComparisonRow>,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let metric = match self.metric {
            CompareMetric::MaxAvgReturn => "max average return",
            CompareMetric::FinalBias => "final bias",
        };
        writeln!(f, "metric: {metric} (* = best per environment)")?;
        let w_run = self.rows.iter().map(|r| r.run.len()).max().unwrap_or(3).max(3);
        let w_env = self.rows.iter().map(|r| r.env_id.len()).max().unwrap_or(3).max(3);
        let w_var = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
        writeln!(
            f,
            "{:w_run$}  {:w_env$}  {:w_var$}  {:>14}  {:>12}",
            "run", "env", "variant", "mean", "std"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:w_run$}  {:w_env$}  {:w_var$}  {:>14.3}  {:>12.3}{}",
                r.run,
                r.env_id,
                r.variant,
                r.mean,
                r.std,
                if r.best { " *" } else { "" }
            )?;
        }
        Ok(())
    }
}

/// Builds the comparison table from completed run directories.
pub fn compare_runs(
    run_dirs: &[PathBuf],
    metric: CompareMetric,
) -> Result<Comparison, HarnessError> {
    if run_dirs.is_empty() {
        return Err(HarnessError::Incomplete("no run directories given".into()));
    }
    let mut rows = Vec::new();
    for dir in run_dirs {
        let summary = read_summary(dir)?;
        let (mean, std) = match metric {
            CompareMetric::MaxAvgReturn => (summary.max_avg_return, summary.max_avg_return_std),
            CompareMetric::FinalBias => {
                let biases: Vec<f64> = summary
                    .per_seed
                    .iter()
                    .filter_map(|s| s.final_bias)
                    .collect();
                if biases.len() != summary.per_seed.len() {
                    return Err(HarnessError::Incomplete(format!(
                        "{}: final bias missing for some seeds",
                        dir.display()
                    )));
                }
                let mean = biases.iter().sum::<f64>() / biases.len() as f64;
                let var = biases.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>()
                    / biases.len() as f64;
                (mean, var.sqrt())
            }
        };
        rows.push(ComparisonRow {
            run: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| dir.display().to_string()),
            env_id: summary.env_id,
            variant: summary.target_spec,
            mean,
            std,
            best: false,
        });
    }
    // Mark the best row per environment.
    let envs: Vec<String> = {
        let mut e: Vec<String> = rows.iter().map(|r| r.env_id.clone()).collect();
        e.sort();
        e.dedup();
        e
    };
    for env in envs {
        let best_idx = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.env_id == env)
            .min_by(|(_, a), (_, b)| {
                let ka = score(metric, a.mean);
                let kb = score(metric, b.mean);
                ka.partial_cmp(&kb).unwrap()
            })
            .map(|(i, _)| i);
        if let Some(i) = best_idx {
            rows[i].best = true;
        }
    }
    Ok(Comparison { metric, rows })
}

// Lower score is better.
fn score(metric: CompareMetric, mean: f64) -> f64 {
    match metric {
        CompareMetric::MaxAvgReturn => -mean,
        CompareMetric::FinalBias => mean.abs(),
    }
}
