//! Per-round trace entries.

use serde::{Deserialize, Serialize};

use crate::clients::EvalMetrics;
use crate::clustering::ClusterAssignment;
use crate::exchange::ExchangePlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Aggregate,
    Exchange,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Aggregate => "aggregate",
            Decision::Exchange => "exchange",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Protocol,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-domain test metrics of one round, with cross-domain summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// True when every domain was scored with the same global decoder.
    pub global: bool,
    pub domains: Vec<EvalMetrics>,
    pub avg_loss: f64,
    pub std_loss: f64,
    pub avg_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
}

impl RoundMetrics {
    pub fn new(global: bool, domains: Vec<EvalMetrics>) -> Self {
        let losses: Vec<f64> = domains.iter().map(|m| m.loss).collect();
        let (avg_loss, std_loss) = mean_std(&losses);
        let accuracies: Option<Vec<f64>> = domains.iter().map(|m| m.accuracy).collect();
        let (avg_accuracy, std_accuracy) = match accuracies {
            Some(acc) if !acc.is_empty() => {
                let (m, s) = mean_std(&acc);
                (Some(m), Some(s))
            }
            _ => (None, None),
        };
        RoundMetrics {
            global,
            domains,
            avg_loss,
            std_loss,
            avg_accuracy,
            std_accuracy,
        }
    }

    pub fn losses(&self) -> Vec<f64> {
        self.domains.iter().map(|m| m.loss).collect()
    }

    pub fn worst_loss(&self) -> f64 {
        self.domains.iter().map(|m| m.loss).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn worst_accuracy(&self) -> Option<f64> {
        self.domains
            .iter()
            .map(|m| m.accuracy)
            .try_fold(f64::INFINITY, |acc, a| a.map(|a| acc.min(a)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub phase: Phase,
    /// 1-based within its phase.
    pub round: usize,
    pub decision: Decision,
    pub metrics: Option<RoundMetrics>,
    pub clusters: Option<ClusterAssignment>,
    pub plan: Option<ExchangePlan>,
}
