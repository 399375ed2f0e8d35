//! Round loop of the protocol: local training, upload, then either weighted
//! aggregation (every `T`-th round) or clustered decoder exchange, then
//! redistribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clients::{
    aggregation_weights, evaluate, local_train, local_train_fedprox, ClientState, EvalMetrics, Provenance,
};
use crate::clustering::{build_distance_matrix, cluster_to_two, ClusterAssignment};
use crate::error::{Error, Result};
use crate::exchange::{
    build_clustered_plan, build_random_plan, build_round_robin_plan, ExchangeHistory, ExchangePlan,
};
use crate::params::{weighted_average, AggregationWeights, ParamVector};
use crate::record::{Decision, Phase, RoundMetrics, RoundRecord};
use crate::seed::{derive_seed, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Clustered,
    RoundRobin,
    Random,
    FedavgOnly,
    Fedprox,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Clustered,
        Strategy::RoundRobin,
        Strategy::Random,
        Strategy::FedavgOnly,
        Strategy::Fedprox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Clustered => "clustered",
            Strategy::RoundRobin => "round_robin",
            Strategy::Random => "random",
            Strategy::FedavgOnly => "fedavg_only",
            Strategy::Fedprox => "fedprox",
        }
    }

    /// Baselines aggregate every round and never exchange.
    pub fn aggregates_every_round(self) -> bool {
        matches!(self, Strategy::FedavgOnly | Strategy::Fedprox)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown strategy {s:?}")))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub rounds: usize,
    pub aggregation_frequency: usize,
    pub strategy: Strategy,
    pub warmup_rounds: usize,
    pub master_seed: u64,
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::ConfigInvalid("rounds must be at least 1".into()));
        }
        if self.aggregation_frequency == 0 {
            return Err(Error::ConfigInvalid("aggregation frequency must be at least 1".into()));
        }
        if !self.rounds.is_multiple_of(self.aggregation_frequency) {
            return Err(Error::ConfigInvalid(format!(
                "rounds {} is not a multiple of aggregation frequency {}",
                self.rounds, self.aggregation_frequency
            )));
        }
        Ok(())
    }

    /// The period actually used; baselines force 1.
    pub fn effective_frequency(&self) -> usize {
        if self.strategy.aggregates_every_round() {
            1
        } else {
            self.aggregation_frequency
        }
    }
}

/// Aggregate iff `round % frequency == 0`.
pub fn schedule_decision(round: usize, frequency: usize) -> Decision {
    if round.is_multiple_of(frequency) {
        Decision::Aggregate
    } else {
        Decision::Exchange
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ServerState {
    pub current_round: usize,
    pub latest_global_decoder: Option<ParamVector>,
    pub exchange_history: ExchangeHistory,
    exchange_rounds: usize,
    pub trace: Vec<RoundRecord>,
}

/// What the server sends back after one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub decision: Decision,
    pub deliveries: Vec<ParamVector>,
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone)]
pub struct Server {
    cfg: ServerConfig,
    state: ServerState,
}

impl Server {
    pub fn new(cfg: ServerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Server {
            cfg,
            state: ServerState::default(),
        })
    }

    pub fn with_global(cfg: ServerConfig, initial: ParamVector) -> Result<Self> {
        let mut server = Self::new(cfg)?;
        server.state.latest_global_decoder = Some(initial);
        Ok(server)
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn into_trace(self) -> Vec<RoundRecord> {
        self.state.trace
    }

    /// Warm-up rounds always aggregate and do not advance the protocol round.
    pub fn run_warmup_round(&mut self, uploads: &[ParamVector], weights: &AggregationWeights) -> Result<RoundOutcome> {
        let round = self.state.trace.iter().filter(|r| r.phase == Phase::Warmup).count() + 1;
        let global = weighted_average(uploads, weights).map_err(|e| e.in_round(0))?;
        self.state.latest_global_decoder = Some(global.clone());
        self.state.trace.push(RoundRecord {
            phase: Phase::Warmup,
            round,
            decision: Decision::Aggregate,
            metrics: None,
            clusters: None,
            plan: None,
        });
        Ok(RoundOutcome {
            decision: Decision::Aggregate,
            deliveries: vec![global; uploads.len()],
            provenance: vec![Provenance::Global; uploads.len()],
        })
    }

    /// Runs the next protocol round on this round's uploads.
    pub fn run_round(&mut self, uploads: &[ParamVector], weights: &AggregationWeights) -> Result<RoundOutcome> {
        let round = self.state.current_round + 1;
        if round > self.cfg.rounds {
            return Err(Error::ConfigInvalid(format!("all {} rounds already ran", self.cfg.rounds)));
        }
        let outcome = self.round_inner(round, uploads, weights).map_err(|e| e.in_round(round))?;
        self.state.current_round = round;
        Ok(outcome)
    }

    fn round_inner(&mut self, round: usize, uploads: &[ParamVector], weights: &AggregationWeights) -> Result<RoundOutcome> {
        let n = uploads.len();
        if n != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                found: n,
            });
        }
        let decision = schedule_decision(round, self.cfg.effective_frequency());
        match decision {
            Decision::Aggregate => {
                let global = weighted_average(uploads, weights)?;
                self.state.latest_global_decoder = Some(global.clone());
                self.push(round, decision, None, None);
                Ok(RoundOutcome {
                    decision,
                    deliveries: vec![global; n],
                    provenance: vec![Provenance::Global; n],
                })
            }
            Decision::Exchange => {
                let clusters = cluster_to_two(&build_distance_matrix(uploads)?)?;
                let plan = self.plan(round, &clusters)?;
                self.state.exchange_history.record(&plan);
                self.state.exchange_rounds += 1;
                let deliveries = plan.assignment.iter().map(|&d| uploads[d].clone()).collect();
                let provenance = plan.assignment.iter().map(|&d| Provenance::Client(d)).collect();
                self.push(round, decision, Some(clusters), Some(plan));
                Ok(RoundOutcome {
                    decision,
                    deliveries,
                    provenance,
                })
            }
        }
    }

    fn plan(&self, round: usize, clusters: &ClusterAssignment) -> Result<ExchangePlan> {
        let seed = derive_seed(self.cfg.master_seed, Purpose::Exchange, round as u64, 0);
        match self.cfg.strategy {
            Strategy::Clustered => build_clustered_plan(clusters, &self.state.exchange_history, seed),
            Strategy::RoundRobin => build_round_robin_plan(clusters.len(), self.state.exchange_rounds),
            Strategy::Random => build_random_plan(clusters.len(), seed),
            Strategy::FedavgOnly | Strategy::Fedprox => unreachable!("baselines never exchange"),
        }
    }

    fn push(&mut self, round: usize, decision: Decision, clusters: Option<ClusterAssignment>, plan: Option<ExchangePlan>) {
        self.state.trace.push(RoundRecord {
            phase: Phase::Protocol,
            round,
            decision,
            metrics: None,
            clusters,
            plan,
        });
    }

    /// Attaches evaluation results to the most recent trace entry.
    pub fn attach_metrics(&mut self, metrics: RoundMetrics) {
        if let Some(last) = self.state.trace.last_mut() {
            last.metrics = Some(metrics);
        }
    }
}

/// Shared starting decoder: small Gaussian weights.
pub fn initial_decoder(dim: usize, seed: u64) -> Result<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParamVector::new(
        (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.01 * z
            })
            .collect(),
    )
}

fn train_all(
    clients: &[ClientState],
    strategy: Strategy,
    anchor: Option<&ParamVector>,
    master_seed: u64,
    purpose: Purpose,
    round: usize,
) -> Result<Vec<ParamVector>> {
    clients
        .par_iter()
        .enumerate()
        .map(|(i, client)| {
            let seed = derive_seed(master_seed, purpose, round as u64, i as u64);
            match (strategy, anchor) {
                (Strategy::Fedprox, Some(anchor)) => {
                    local_train_fedprox(&client.decoder, client, anchor, client.local.prox_mu, seed)
                }
                _ => local_train(&client.decoder, client, seed),
            }
        })
        .collect()
}

fn redistribute(clients: &mut [ClientState], outcome: RoundOutcome) {
    for ((client, decoder), from) in clients.iter_mut().zip(outcome.deliveries).zip(outcome.provenance) {
        client.decoder = decoder;
        client.received_from = from;
    }
}

fn evaluate_global(global: &ParamVector, clients: &[ClientState]) -> RoundMetrics {
    RoundMetrics::new(true, clients.iter().map(|c| evaluate(global, c)).collect())
}

/// Warm-up followed by `cfg.rounds` protocol rounds; returns the full trace.
///
/// All clients start from one initial decoder derived from `master_seed`.
/// Aggregate rounds are scored with the global decoder on every domain;
/// exchange rounds score each client's own upload on its own domain.
pub fn run_simulation(cfg: &ServerConfig, clients: &mut [ClientState]) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    if clients.len() < 2 {
        return Err(Error::ConfigInvalid(format!("need at least 2 clients, got {}", clients.len())));
    }
    let manifest = clients[0].manifest();
    if clients.iter().any(|c| c.manifest() != manifest) {
        return Err(Error::ConfigInvalid("clients disagree on the decoder manifest".into()));
    }
    let weights = aggregation_weights(clients)?;
    let initial = initial_decoder(manifest.dim(), derive_seed(cfg.master_seed, Purpose::InitialDecoder, 0, 0))?;
    for client in clients.iter_mut() {
        client.decoder = initial.clone();
        client.received_from = Provenance::Initial;
    }
    let mut server = Server::with_global(*cfg, initial)?;

    for w in 1..=cfg.warmup_rounds {
        let anchor = server.state.latest_global_decoder.clone();
        let uploads = train_all(clients, cfg.strategy, anchor.as_ref(), cfg.master_seed, Purpose::WarmupTraining, w)
            .map_err(|e| e.in_round(0))?;
        let outcome = server.run_warmup_round(&uploads, &weights)?;
        redistribute(clients, outcome);
        let metrics = evaluate_global(&clients[0].decoder, clients);
        server.attach_metrics(metrics);
    }

    for r in 1..=cfg.rounds {
        let anchor = server.state.latest_global_decoder.clone();
        let uploads = train_all(clients, cfg.strategy, anchor.as_ref(), cfg.master_seed, Purpose::LocalTraining, r)
            .map_err(|e| e.in_round(r))?;
        let outcome = server.run_round(&uploads, &weights)?;
        let metrics = match outcome.decision {
            Decision::Aggregate => evaluate_global(&outcome.deliveries[0], clients),
            Decision::Exchange => RoundMetrics::new(
                false,
                uploads
                    .iter()
                    .zip(clients.iter())
                    .map(|(u, c)| evaluate(u, c))
                    .collect::<Vec<EvalMetrics>>(),
            ),
        };
        redistribute(clients, outcome);
        server.attach_metrics(metrics);
    }
    Ok(server.into_trace())
}
