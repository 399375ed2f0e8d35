//! Experiment harness: JSON configs, per-cell output files, strategy
//! comparisons and the aggregation-frequency ablation.
//!
//! Output layout under the configured directory:
//!
//! ```text
//! <strategy>/T<t>/frac<f>/seed<s>/metrics.csv
//! <strategy>/T<t>/frac<f>/seed<s>/summary.json
//! comparison.json, comparison.txt
//! ablate_t/...                      (ablation runs and tables)
//! ```

mod ablation;
mod compare;
mod config;
mod runner;

pub use ablation::{
    ablation_t, check_t_values, render_text as render_ablation_text, run_ablation_t, AblationRow, AblationTable,
};
pub use compare::{compare_strategies, load_summaries, render_text, write_comparison, ComparisonRow, ComparisonTable};
pub use config::ExperimentConfig;
pub use runner::{
    cell_clients, cells, run_cell, run_experiment, write_cell, write_metrics_csv, Cell, CellResult, FinalMetrics, RunSummary,
    SummaryMetadata,
};
