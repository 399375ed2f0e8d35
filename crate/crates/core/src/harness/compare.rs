use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::RunSummary;
use crate::error::{Error, Result};
use crate::server::Strategy;

/// One strategy under one condition, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub data_fraction: f64,
    pub aggregation_frequency: usize,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub train_sizes: Vec<usize>,
    pub mean_avg_loss: f64,
    pub mean_worst_domain_loss: f64,
    pub mean_std_loss: f64,
    pub mean_avg_accuracy: Option<f64>,
    /// 1 is best (lowest mean average loss); equal values share a rank.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub config_fingerprint: String,
    pub rows: Vec<ComparisonRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Groups summaries by (strategy, fraction, T), averages the final metrics
/// over seeds and ranks the groups by mean average loss.
pub fn compare_strategies(summaries: &[RunSummary]) -> Result<ComparisonTable> {
    let first = summaries.first().ok_or(Error::EmptyInput)?;
    if let Some(other) = summaries
        .iter()
        .find(|s| s.config_fingerprint != first.config_fingerprint)
    {
        return Err(Error::MismatchedConfig(format!(
            "fingerprints {} and {}",
            first.config_fingerprint, other.config_fingerprint
        )));
    }

    let mut groups: BTreeMap<(Strategy, u64, usize), Vec<&RunSummary>> = BTreeMap::new();
    for s in summaries {
        groups
            .entry((s.strategy, s.data_fraction.to_bits(), s.aggregation_frequency))
            .or_default()
            .push(s);
    }
    if groups.len() < 2 {
        return Err(Error::ConfigInvalid("need at least two strategies or conditions to compare".into()));
    }

    let mut rows = Vec::with_capacity(groups.len());
    let mut reference_seeds: Option<Vec<u64>> = None;
    for ((strategy, fraction_bits, frequency), runs) in groups {
        let mut seeds: Vec<u64> = runs.iter().map(|s| s.seed).collect();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::MismatchedSeeds(format!("{strategy} has a repeated seed")));
        }
        match &reference_seeds {
            None => reference_seeds = Some(seeds.clone()),
            Some(reference) if *reference != seeds => {
                return Err(Error::MismatchedSeeds(format!(
                    "{strategy} ran seeds {seeds:?}, expected {reference:?}"
                )))
            }
            Some(_) => {}
        }
        let train_sizes = runs[0].train_sizes.clone();
        let accuracies: Option<Vec<f64>> = runs.iter().map(|s| s.final_metrics.avg_accuracy).collect();
        rows.push(ComparisonRow {
            strategy,
            data_fraction: f64::from_bits(fraction_bits),
            aggregation_frequency: frequency,
            runs: runs.len(),
            seeds,
            train_sizes,
            mean_avg_loss: mean(runs.iter().map(|s| s.final_metrics.avg_loss)),
            mean_worst_domain_loss: mean(runs.iter().map(|s| s.final_metrics.worst_domain_loss)),
            mean_std_loss: mean(runs.iter().map(|s| s.final_metrics.std_loss)),
            mean_avg_accuracy: accuracies.map(|a| mean(a.into_iter())),
            rank: 0,
        });
    }

    let losses: Vec<f64> = rows.iter().map(|r| r.mean_avg_loss).collect();
    for row in rows.iter_mut() {
        row.rank = 1 + losses.iter().filter(|&&l| l < row.mean_avg_loss).count();
    }
    rows.sort_by(|a, b| {
        a.rank
            .cmp(&b.rank)
            .then(a.strategy.cmp(&b.strategy))
            .then(a.data_fraction.total_cmp(&b.data_fraction))
    });
    Ok(ComparisonTable {
        config_fingerprint: first.config_fingerprint.clone(),
        rows,
    })
}

pub fn render_text(table: &ComparisonTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<5} {:<12} {:>6} {:>4} {:>5} {:>14} {:>14} {:>12} {:>10}  train_sizes",
        "rank", "strategy", "frac", "T", "runs", "avg_loss", "worst_loss", "std_loss", "avg_acc"
    );
    for r in &table.rows {
        let acc = r.mean_avg_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(
            out,
            "{:<5} {:<12} {:>6} {:>4} {:>5} {:>14.6} {:>14.6} {:>12.6} {:>10}  {:?}",
            r.rank,
            r.strategy.as_str(),
            r.data_fraction,
            r.aggregation_frequency,
            r.runs,
            r.mean_avg_loss,
            r.mean_worst_domain_loss,
            r.mean_std_loss,
            acc,
            r.train_sizes
        );
    }
    out
}

/// Writes `comparison.json` and `comparison.txt` into `dir`.
pub fn write_comparison(dir: &Path, table: &ComparisonTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("comparison.json"), serde_json::to_string_pretty(table)?)?;
    fs::write(dir.join("comparison.txt"), render_text(table))?;
    Ok(())
}

/// Reads every `summary.json` below `dir`, in sorted path order.
pub fn load_summaries(dir: &Path) -> Result<Vec<RunSummary>> {
    let mut paths = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "summary.json") {
                paths.push(path);
            }
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?))
        .collect()
}
