use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clients::{DomainSpec, LocalConfig, TaskKind};
use crate::error::{Error, Result};
use crate::server::{ServerConfig, Strategy};

fn default_fractions() -> Vec<f64> {
    vec![1.0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Experiment description, read from JSON.
///
/// Every combination of `strategies x seeds x data_fractions` is one cell.
/// A cell's seed drives the backbone, the domain data and the server, so
/// cells that share a seed and fraction see identical data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub rounds: usize,
    pub aggregation_frequency: usize,
    pub warmup_rounds: usize,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_fractions")]
    pub data_fractions: Vec<f64>,
    #[serde(default)]
    pub task: TaskKind,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub domains: Vec<DomainSpec>,
    #[serde(default)]
    pub local: LocalConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::ConfigInvalid("at least one seed is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::ConfigInvalid("at least one strategy is required".into()));
        }
        if self.data_fractions.is_empty() {
            return Err(Error::ConfigInvalid("at least one data fraction is required".into()));
        }
        if let Some(f) = self.data_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::ConfigInvalid(format!("data fraction {f} not in (0, 1]")));
        }
        if self.domains.len() < 2 {
            return Err(Error::ConfigInvalid(format!(
                "need at least 2 domains, got {}",
                self.domains.len()
            )));
        }
        for (i, d) in self.domains.iter().enumerate() {
            if d.domain_id != i {
                return Err(Error::ConfigInvalid(format!("domain at position {i} has id {}", d.domain_id)));
            }
            if d.input_dim != self.input_dim {
                return Err(Error::ConfigInvalid(format!(
                    "domain {i} input_dim {} differs from {}",
                    d.input_dim, self.input_dim
                )));
            }
            d.validate()?;
        }
        if self.feature_dim == 0 {
            return Err(Error::ConfigInvalid("feature_dim must be positive".into()));
        }
        self.local.validate()?;
        self.server_config(Strategy::Clustered, 0).validate()
    }

    pub fn server_config(&self, strategy: Strategy, seed: u64) -> ServerConfig {
        ServerConfig {
            rounds: self.rounds,
            aggregation_frequency: self.aggregation_frequency,
            strategy,
            warmup_rounds: self.warmup_rounds,
            master_seed: seed,
        }
    }

    /// Hash of everything that must match for two runs to be comparable:
    /// all settings except strategy, seed, fraction, `T` and output path.
    pub fn fingerprint(&self) -> String {
        let shared = serde_json::json!({
            "rounds": self.rounds,
            "warmup_rounds": self.warmup_rounds,
            "task": self.task,
            "input_dim": self.input_dim,
            "feature_dim": self.feature_dim,
            "domains": self.domains,
            "local": self.local,
        });
        format!("{:016x}", fnv1a(shared.to_string().as_bytes()))
    }

    /// Desk-scale default: four domains, the last one small and strongly
    /// shifted.
    pub fn default_setup() -> Self {
        let input_dim = 8;
        let domain = |id: usize, n: usize, shift: f64, delta: f64| DomainSpec {
            domain_id: id,
            sample_count: n,
            test_count: 1000,
            input_dim,
            feature_shift: (0..input_dim)
                .map(|k| if k % 2 == 0 { shift } else { 0.0 - shift })
                .collect(),
            concept_shift: delta,
            label_noise: 0.1,
        };
        ExperimentConfig {
            rounds: 40,
            aggregation_frequency: 2,
            warmup_rounds: 5,
            strategies: vec![Strategy::Clustered, Strategy::FedavgOnly],
            seeds: (0..10).collect(),
            data_fractions: vec![1.0],
            task: TaskKind::Regression,
            input_dim,
            feature_dim: 32,
            domains: vec![
                domain(0, 2000, 0.0, 0.3),
                domain(1, 2000, 0.2, 0.3),
                domain(2, 2000, -0.2, 0.3),
                domain(3, 500, 1.0, 1.0),
            ],
            local: LocalConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
