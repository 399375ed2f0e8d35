use std::error::Error as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedexchange::clients::write_dataset_csv;
use fedexchange::harness::{
    cell_clients, compare_strategies, load_summaries, render_ablation_text, render_text, run_ablation_t,
    run_experiment, write_comparison, ExperimentConfig,
};
use fedexchange::server::Strategy;
use fedexchange::{Error, Result};

#[derive(Parser)]
#[command(name = "fedexchange", version, about = "Federated decoder exchange simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run only this strategy (clustered, round_robin, random, fedavg_only, fedprox).
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long = "agg-frequency")]
    agg_frequency: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long = "data-fraction")]
    data_fraction: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, seed, fraction) cell of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Build the comparison table from the summaries below a directory.
    Compare {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run the clustered strategy for several aggregation frequencies.
    AblateT {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "t-values", value_delimiter = ',', required = true)]
        t_values: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Write the generated datasets of one seed as CSV.
    ExportData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(config: &PathBuf, o: Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(config)?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
    if let Some(seed) = o.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = o.out {
        cfg.output_dir = out;
    }
    if let Some(strategy) = o.strategy {
        cfg.strategies = vec![strategy];
    }
    if let Some(t) = o.agg_frequency {
        cfg.aggregation_frequency = t;
    }
    if let Some(r) = o.rounds {
        cfg.rounds = r;
    }
    if let Some(f) = o.data_fraction {
        cfg.data_fractions = vec![f];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load(&config, overrides)?;
            let summaries = run_experiment(&cfg)?;
            for s in &summaries {
                println!(
                    "{:<12} seed {:<4} frac {:<4} avg_loss {:.6} worst_loss {:.6}",
                    s.strategy.as_str(),
                    s.seed,
                    s.data_fraction,
                    s.final_metrics.avg_loss,
                    s.final_metrics.worst_domain_loss
                );
            }
            println!("wrote {} runs to {}", summaries.len(), cfg.output_dir.display());
        }
        Command::Compare { input } => {
            let summaries = load_summaries(&input)?;
            let table = compare_strategies(&summaries)?;
            write_comparison(&input, &table)?;
            print!("{}", render_text(&table));
        }
        Command::AblateT {
            config,
            t_values,
            overrides,
        } => {
            let cfg = load(&config, overrides)?;
            let table = run_ablation_t(&cfg, &t_values)?;
            print!("{}", render_ablation_text(&table));
        }
        Command::ExportData { config, seed, out } => {
            let cfg = ExperimentConfig::from_json_file(&config)?;
            let clients = cell_clients(&cfg, seed, cfg.data_fractions[0])?;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            write_dataset_csv(std::fs::File::create(&out)?, &clients)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = e.source();
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if matches!(e, Error::ConfigInvalid(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
