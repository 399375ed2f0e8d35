use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compare::{compare_strategies, write_comparison};
use super::config::ExperimentConfig;
use crate::clients::{build_clients, ClientState, FrozenBackbone, TaskKind};
use crate::error::{Error, Result};
use crate::record::{Phase, RoundRecord};
use crate::seed::{derive_seed, Purpose};
use crate::server::{run_simulation, Strategy};

/// One point of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub strategy: Strategy,
    pub seed: u64,
    pub data_fraction: f64,
    pub aggregation_frequency: usize,
}

impl Cell {
    pub fn relative_dir(&self) -> PathBuf {
        PathBuf::from(self.strategy.as_str())
            .join(format!("T{}", self.aggregation_frequency))
            .join(format!("frac{}", self.data_fraction))
            .join(format!("seed{}", self.seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub per_domain_loss: Vec<f64>,
    pub per_domain_accuracy: Option<Vec<f64>>,
    pub avg_loss: f64,
    pub std_loss: f64,
    pub worst_domain_loss: f64,
    pub worst_domain: usize,
    pub avg_accuracy: Option<f64>,
    pub worst_domain_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetadata {
    pub generated_unix_secs: u64,
}

/// Contents of `summary.json`. Only `metadata` varies between reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub seed: u64,
    pub data_fraction: f64,
    pub aggregation_frequency: usize,
    pub rounds: usize,
    pub warmup_rounds: usize,
    pub task: TaskKind,
    pub config_fingerprint: String,
    pub train_sizes: Vec<usize>,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub metadata: SummaryMetadata,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub trace: Vec<RoundRecord>,
    pub summary: RunSummary,
}

/// Clients of a cell: backbone, concept and data all derive from `seed`.
pub fn cell_clients(cfg: &ExperimentConfig, seed: u64, data_fraction: f64) -> Result<Vec<ClientState>> {
    let backbone = Arc::new(FrozenBackbone::new(
        derive_seed(seed, Purpose::Backbone, 0, 0),
        cfg.input_dim,
        cfg.feature_dim,
    )?);
    build_clients(
        &cfg.domains,
        cfg.task,
        backbone,
        derive_seed(seed, Purpose::Concept, 0, 0),
        derive_seed(seed, Purpose::DomainData, 0, 0),
        data_fraction,
        cfg.local,
    )
}

/// Runs one cell in memory.
pub fn run_cell(cfg: &ExperimentConfig, cell: Cell) -> Result<CellResult> {
    let mut server_cfg = cfg.server_config(cell.strategy, cell.seed);
    server_cfg.aggregation_frequency = cell.aggregation_frequency;
    server_cfg.validate()?;

    let mut clients = cell_clients(cfg, cell.seed, cell.data_fraction)?;
    let train_sizes = clients.iter().map(|c| c.train_size()).collect();
    let trace = run_simulation(&server_cfg, &mut clients)?;

    let last = trace
        .last()
        .and_then(|r| r.metrics.as_ref())
        .ok_or_else(|| Error::ConfigInvalid("simulation produced no metrics".into()))?;
    let losses = last.losses();
    let worst_domain = losses
        .iter()
        .enumerate()
        .fold(0, |best, (i, &l)| if l > losses[best] { i } else { best });
    let final_metrics = FinalMetrics {
        per_domain_accuracy: last.domains.iter().map(|m| m.accuracy).collect(),
        worst_domain_loss: last.worst_loss(),
        worst_domain,
        avg_loss: last.avg_loss,
        std_loss: last.std_loss,
        avg_accuracy: last.avg_accuracy,
        worst_domain_accuracy: last.worst_accuracy(),
        per_domain_loss: losses,
    };
    let generated_unix_secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let summary = RunSummary {
        strategy: cell.strategy,
        seed: cell.seed,
        data_fraction: cell.data_fraction,
        aggregation_frequency: cell.aggregation_frequency,
        rounds: cfg.rounds,
        warmup_rounds: cfg.warmup_rounds,
        task: cfg.task,
        config_fingerprint: cfg.fingerprint(),
        train_sizes,
        final_metrics,
        metadata: SummaryMetadata { generated_unix_secs },
    };
    Ok(CellResult { cell, trace, summary })
}

/// Writes the per-round metrics CSV:
/// `round, decision, domain_<i>_loss.., avg_loss, std_loss` followed by the
/// matching accuracy columns for classification. Warm-up rows carry the
/// decision `warmup`.
pub fn write_metrics_csv<W: Write>(out: W, trace: &[RoundRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let first = trace
        .iter()
        .find_map(|r| r.metrics.as_ref())
        .ok_or(Error::EmptyInput)?;
    let domains = first.domains.len();
    let with_accuracy = first.avg_accuracy.is_some();

    let mut header = vec!["round".to_string(), "decision".to_string()];
    header.extend((0..domains).map(|i| format!("domain_{i}_loss")));
    header.extend(["avg_loss".to_string(), "std_loss".to_string()]);
    if with_accuracy {
        header.extend((0..domains).map(|i| format!("domain_{i}_acc")));
        header.extend(["avg_acc".to_string(), "std_acc".to_string()]);
    }
    writer.write_record(&header)?;

    for record in trace {
        let metrics = record.metrics.as_ref().ok_or(Error::EmptyInput)?;
        let decision = match record.phase {
            Phase::Warmup => "warmup",
            Phase::Protocol => record.decision.as_str(),
        };
        let mut row = vec![record.round.to_string(), decision.to_string()];
        row.extend(metrics.domains.iter().map(|m| m.loss.to_string()));
        row.extend([metrics.avg_loss.to_string(), metrics.std_loss.to_string()]);
        if with_accuracy {
            row.extend(metrics.domains.iter().map(|m| m.accuracy.unwrap_or(f64::NAN).to_string()));
            row.extend([
                metrics.avg_accuracy.unwrap_or(f64::NAN).to_string(),
                metrics.std_accuracy.unwrap_or(f64::NAN).to_string(),
            ]);
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_cell(dir: &Path, result: &CellResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_metrics_csv(fs::File::create(dir.join("metrics.csv"))?, &result.trace)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)?)?;
    Ok(())
}

pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &strategy in &cfg.strategies {
        for &data_fraction in &cfg.data_fractions {
            for &seed in &cfg.seeds {
                out.push(Cell {
                    strategy,
                    seed,
                    data_fraction,
                    aggregation_frequency: cfg.aggregation_frequency,
                });
            }
        }
    }
    out
}

/// Runs every cell concurrently, writes `metrics.csv` and `summary.json` per
/// cell, then a comparison table when there are at least two rows to compare.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let results = cells(cfg)
        .into_par_iter()
        .map(|cell| {
            let result = run_cell(cfg, cell)?;
            write_cell(&cfg.output_dir.join(cell.relative_dir()), &result)?;
            Ok(result.summary)
        })
        .collect::<Result<Vec<_>>>()?;

    let conditions = cfg.strategies.len() * cfg.data_fractions.len();
    if conditions >= 2 {
        let table = compare_strategies(&results)?;
        write_comparison(&cfg.output_dir, &table)?;
    }
    Ok(results)
}
