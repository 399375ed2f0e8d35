use std::fmt::Write as _;
use std::fs;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::runner::{run_cell, write_cell, Cell, RunSummary};
use crate::error::{Error, Result};
use crate::server::Strategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub aggregation_frequency: usize,
    pub aggregate_rounds: usize,
    pub runs: usize,
    pub mean_avg_loss: f64,
    pub mean_worst_domain_loss: f64,
    pub mean_std_loss: f64,
    /// `(mean_avg_loss - best) / best` over the rows of this table.
    pub relative_gap_to_best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub config_fingerprint: String,
    pub data_fraction: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Largest relative gap between any `T` and the best one.
    pub fn max_relative_spread(&self) -> f64 {
        self.rows.iter().map(|r| r.relative_gap_to_best).fold(0.0, f64::max)
    }
}

/// Rejects any `T` that does not divide the round count.
pub fn check_t_values(rounds: usize, t_values: &[usize]) -> Result<()> {
    if t_values.is_empty() {
        return Err(Error::ConfigInvalid("no T values given".into()));
    }
    for &t in t_values {
        if t == 0 || !rounds.is_multiple_of(t) {
            return Err(Error::ConfigInvalid(format!("rounds {rounds} is not a multiple of T = {t}")));
        }
    }
    Ok(())
}

/// Runs the clustered strategy for every `T` and seed at the first
/// configured data fraction.
pub fn ablation_t(cfg: &ExperimentConfig, t_values: &[usize]) -> Result<(AblationTable, Vec<RunSummary>)> {
    cfg.validate()?;
    check_t_values(cfg.rounds, t_values)?;
    let fraction = cfg.data_fractions[0];
    let cells: Vec<Cell> = t_values
        .iter()
        .flat_map(|&t| {
            cfg.seeds.iter().map(move |&seed| Cell {
                strategy: Strategy::Clustered,
                seed,
                data_fraction: fraction,
                aggregation_frequency: t,
            })
        })
        .collect();
    let summaries = cells
        .into_par_iter()
        .map(|cell| run_cell(cfg, cell).map(|r| r.summary))
        .collect::<Result<Vec<_>>>()?;
    Ok((table_from(cfg, fraction, t_values, &summaries), summaries))
}

fn table_from(cfg: &ExperimentConfig, fraction: f64, t_values: &[usize], summaries: &[RunSummary]) -> AblationTable {
    let mut rows: Vec<AblationRow> = t_values
        .iter()
        .map(|&t| {
            let runs: Vec<&RunSummary> = summaries.iter().filter(|s| s.aggregation_frequency == t).collect();
            let n = runs.len() as f64;
            let avg = |f: &dyn Fn(&RunSummary) -> f64| runs.iter().map(|s| f(s)).sum::<f64>() / n;
            AblationRow {
                aggregation_frequency: t,
                aggregate_rounds: cfg.rounds / t,
                runs: runs.len(),
                mean_avg_loss: avg(&|s| s.final_metrics.avg_loss),
                mean_worst_domain_loss: avg(&|s| s.final_metrics.worst_domain_loss),
                mean_std_loss: avg(&|s| s.final_metrics.std_loss),
                relative_gap_to_best: 0.0,
            }
        })
        .collect();
    let best = rows.iter().map(|r| r.mean_avg_loss).fold(f64::INFINITY, f64::min);
    for r in rows.iter_mut() {
        r.relative_gap_to_best = (r.mean_avg_loss - best) / best;
    }
    AblationTable {
        config_fingerprint: cfg.fingerprint(),
        data_fraction: fraction,
        rows,
    }
}

pub fn render_text(table: &AblationTable) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>10} {:>5} {:>14} {:>14} {:>12} {:>10}",
        "T", "agg_rounds", "runs", "avg_loss", "worst_loss", "std_loss", "gap"
    );
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{:>4} {:>10} {:>5} {:>14.6} {:>14.6} {:>12.6} {:>9.2}%",
            r.aggregation_frequency,
            r.aggregate_rounds,
            r.runs,
            r.mean_avg_loss,
            r.mean_worst_domain_loss,
            r.mean_std_loss,
            100.0 * r.relative_gap_to_best
        );
    }
    out
}

/// Runs the ablation and writes per-cell outputs under
/// `<output_dir>/ablate_t/` plus `ablation_t.json` and `ablation_t.txt`.
pub fn run_ablation_t(cfg: &ExperimentConfig, t_values: &[usize]) -> Result<AblationTable> {
    cfg.validate()?;
    check_t_values(cfg.rounds, t_values)?;
    let root = cfg.output_dir.join("ablate_t");
    let fraction = cfg.data_fractions[0];
    let cells: Vec<Cell> = t_values
        .iter()
        .flat_map(|&t| {
            cfg.seeds.iter().map(move |&seed| Cell {
                strategy: Strategy::Clustered,
                seed,
                data_fraction: fraction,
                aggregation_frequency: t,
            })
        })
        .collect();
    let summaries = cells
        .into_par_iter()
        .map(|cell| {
            let result = run_cell(cfg, cell)?;
            write_cell(&root.join(cell.relative_dir()), &result)?;
            Ok(result.summary)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = table_from(cfg, fraction, t_values, &summaries);
    fs::write(root.join("ablation_t.json"), serde_json::to_string_pretty(&table)?)?;
    fs::write(root.join("ablation_t.txt"), render_text(&table))?;
    Ok(table)
}
