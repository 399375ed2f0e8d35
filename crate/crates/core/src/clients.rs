//! Simulated cross-domain clients.
//!
//! Each client owns one synthetic domain. Inputs pass through a frozen random
//! feature map shared by every client; only the linear decoder head on top of
//! those features is trained, exchanged and aggregated.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{AggregationWeights, Manifest, ParamVector};
use crate::seed::{derive_seed, Purpose};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Regression,
    Classification,
}

fn default_test_count() -> usize {
    1000
}

/// Generative description of one client's domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: usize,
    pub sample_count: usize,
    #[serde(default = "default_test_count")]
    pub test_count: usize,
    pub input_dim: usize,
    /// Mean of the input distribution (feature shift).
    pub feature_shift: Vec<f64>,
    /// Magnitude of the domain's head perturbation (concept shift).
    pub concept_shift: f64,
    pub label_noise: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidSpec(format!("domain {}: {msg}", self.domain_id)));
        if self.sample_count == 0 || self.test_count == 0 {
            return fail("sample counts must be at least 1".into());
        }
        if self.input_dim == 0 {
            return fail("input_dim must be at least 1".into());
        }
        if self.feature_shift.len() != self.input_dim {
            return fail(format!(
                "feature_shift has {} entries, input_dim is {}",
                self.feature_shift.len(),
                self.input_dim
            ));
        }
        if self.feature_shift.iter().any(|v| !v.is_finite()) {
            return fail("feature_shift must be finite".into());
        }
        if !(self.concept_shift.is_finite() && self.concept_shift >= 0.0) {
            return fail("concept_shift must be finite and >= 0".into());
        }
        if !(self.label_noise.is_finite() && self.label_noise >= 0.0) {
            return fail("label_noise must be finite and >= 0".into());
        }
        Ok(())
    }

    /// Training samples kept at `fraction` of the full set, at least one.
    pub fn train_size(&self, fraction: f64) -> usize {
        ((self.sample_count as f64 * fraction).round() as usize).clamp(1, self.sample_count)
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Fixed random affine map followed by `tanh`. Never trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenBackbone {
    seed: u64,
    input_dim: usize,
    feature_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl FrozenBackbone {
    pub fn new(seed: u64, input_dim: usize, feature_dim: usize) -> Result<Self> {
        if input_dim == 0 || feature_dim == 0 {
            return Err(Error::InvalidSpec("backbone dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (input_dim as f64).sqrt();
        let weights = (0..input_dim * feature_dim)
            .map(|_| scale * gauss(&mut rng))
            .collect();
        let bias = (0..feature_dim)
            .map(|_| 0.5 * gauss(&mut rng))
            .collect();
        Ok(FrozenBackbone {
            seed,
            input_dim,
            feature_dim,
            weights,
            bias,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim);
        self.weights
            .chunks(self.input_dim)
            .zip(&self.bias)
            .map(|(row, b)| (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).tanh())
            .collect()
    }

    /// Manifest of the linear decoder head sitting on this backbone.
    pub fn head_manifest(&self) -> Manifest {
        Manifest::linear_head(self.feature_dim).expect("feature_dim is positive")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    /// Backbone features, cached since the backbone is frozen.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainData {
    pub train: Dataset,
    pub test: Dataset,
}

/// The true head `w_shared + delta * u_d` of a domain.
pub fn domain_concept(spec: &DomainSpec, feature_dim: usize, shared_concept_seed: u64, domain_seed: u64) -> Vec<f64> {
    let mut shared_rng = ChaCha8Rng::seed_from_u64(shared_concept_seed);
    let scale = 2.0 / (feature_dim as f64).sqrt();
    let shared: Vec<f64> = (0..feature_dim)
        .map(|_| scale * gauss(&mut shared_rng))
        .collect();

    let mut domain_rng = ChaCha8Rng::seed_from_u64(domain_seed);
    let mut direction: Vec<f64> = (0..feature_dim)
        .map(|_| gauss(&mut domain_rng))
        .collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    shared
        .iter()
        .zip(&direction)
        .map(|(s, u)| s + spec.concept_shift * u)
        .collect()
}

/// Draws `sample_count` training and `test_count` test samples, then keeps
/// `fraction` of the training samples.
pub fn generate_domain_dataset(
    spec: &DomainSpec,
    backbone: &FrozenBackbone,
    task: TaskKind,
    shared_concept_seed: u64,
    domain_seed: u64,
    fraction: f64,
) -> Result<DomainData> {
    spec.validate()?;
    if spec.input_dim != backbone.input_dim() {
        return Err(Error::InvalidSpec(format!(
            "domain {} input_dim {} does not match backbone input_dim {}",
            spec.domain_id,
            spec.input_dim,
            backbone.input_dim()
        )));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidSpec(format!("data fraction {fraction} not in (0, 1]")));
    }

    let concept = domain_concept(spec, backbone.feature_dim(), shared_concept_seed, domain_seed);
    // Offset so sampling does not reuse the stream that picked the concept direction.
    let mut rng = ChaCha8Rng::seed_from_u64(domain_seed ^ 0xD1B5_4A32_D192_ED03);
    let noise = Normal::new(0.0, spec.label_noise).map_err(|e| Error::InvalidSpec(e.to_string()))?;

    let mut draw = |count: usize| {
        let mut ds = Dataset::default();
        for _ in 0..count {
            let x: Vec<f64> = spec
                .feature_shift
                .iter()
                .map(|m| m + gauss(&mut rng))
                .collect();
            let phi = backbone.features(&x);
            let score: f64 = concept.iter().zip(&phi).map(|(w, f)| w * f).sum::<f64>() + noise.sample(&mut rng);
            let label = match task {
                TaskKind::Regression => score,
                TaskKind::Classification => f64::from(u8::from(score > 0.0)),
            };
            ds.inputs.push(x);
            ds.features.push(phi);
            ds.labels.push(label);
        }
        ds
    };
    let mut train = draw(spec.sample_count);
    let test = draw(spec.test_count);

    let keep = spec.train_size(fraction);
    train.inputs.truncate(keep);
    train.features.truncate(keep);
    train.labels.truncate(keep);
    Ok(DomainData { train, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// FedProx proximal coefficient; unused by plain local training.
    pub prox_mu: f64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            epochs: 5,
            learning_rate: 0.05,
            batch_size: 32,
            prox_mu: 0.01,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::ConfigInvalid("learning_rate must be positive".into()));
        }
        if !(self.prox_mu.is_finite() && self.prox_mu >= 0.0) {
            return Err(Error::ConfigInvalid("prox_mu must be >= 0".into()));
        }
        Ok(())
    }
}

/// Where a client's current decoder came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    Global,
    Client(usize),
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub domain: DomainSpec,
    pub task: TaskKind,
    pub backbone: Arc<FrozenBackbone>,
    pub data: DomainData,
    pub decoder: ParamVector,
    pub received_from: Provenance,
    pub local: LocalConfig,
}

impl ClientState {
    pub fn new(
        domain: DomainSpec,
        task: TaskKind,
        backbone: Arc<FrozenBackbone>,
        data: DomainData,
        local: LocalConfig,
    ) -> Result<Self> {
        if data.train.is_empty() || data.test.is_empty() {
            return Err(Error::InvalidSpec(format!("domain {} has an empty split", domain.domain_id)));
        }
        local.validate()?;
        let decoder = ParamVector::zeros(backbone.head_manifest().dim())?;
        Ok(ClientState {
            domain,
            task,
            backbone,
            data,
            decoder,
            received_from: Provenance::Initial,
            local,
        })
    }

    pub fn manifest(&self) -> Manifest {
        self.backbone.head_manifest()
    }

    pub fn train_size(&self) -> usize {
        self.data.train.len()
    }
}

/// Builds one client per domain on a shared backbone. Per-domain seeds are
/// derived from `data_seed`; `concept_seed` fixes the shared true head.
pub fn build_clients(
    domains: &[DomainSpec],
    task: TaskKind,
    backbone: Arc<FrozenBackbone>,
    concept_seed: u64,
    data_seed: u64,
    fraction: f64,
    local: LocalConfig,
) -> Result<Vec<ClientState>> {
    domains
        .iter()
        .map(|spec| {
            let domain_seed = derive_seed(data_seed, Purpose::DomainData, 0, spec.domain_id as u64);
            let data = generate_domain_dataset(spec, &backbone, task, concept_seed, domain_seed, fraction)?;
            ClientState::new(spec.clone(), task, Arc::clone(&backbone), data, local)
        })
        .collect()
}

/// Aggregation weights `n_i / n` over the clients' training splits.
pub fn aggregation_weights(clients: &[ClientState]) -> Result<AggregationWeights> {
    AggregationWeights::from_counts(&clients.iter().map(ClientState::train_size).collect::<Vec<_>>())
}

fn score(decoder: &[f64], phi: &[f64]) -> f64 {
    let (w, b) = decoder.split_at(phi.len());
    w.iter().zip(phi).map(|(a, f)| a * f).sum::<f64>() + b[0]
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean per-sample loss over `rows`: half squared error for regression,
/// log-loss for classification.
pub fn objective(task: TaskKind, decoder: &[f64], data: &Dataset, rows: &[usize]) -> f64 {
    let total: f64 = rows
        .iter()
        .map(|&r| {
            let z = score(decoder, &data.features[r]);
            let y = data.labels[r];
            match task {
                TaskKind::Regression => 0.5 * (z - y) * (z - y),
                TaskKind::Classification => softplus(z) - y * z,
            }
        })
        .sum();
    total / rows.len() as f64
}

/// Gradient of [`objective`] with respect to the decoder.
pub fn objective_gradient(task: TaskKind, decoder: &[f64], data: &Dataset, rows: &[usize]) -> Vec<f64> {
    let dim = decoder.len();
    let mut grad = vec![0.0; dim];
    for &r in rows {
        let phi = &data.features[r];
        let z = score(decoder, phi);
        let residual = match task {
            TaskKind::Regression => z - data.labels[r],
            TaskKind::Classification => sigmoid(z) - data.labels[r],
        };
        for (g, f) in grad.iter_mut().zip(phi) {
            *g += residual * f;
        }
        grad[dim - 1] += residual;
    }
    let m = rows.len() as f64;
    grad.iter_mut().for_each(|g| *g /= m);
    grad
}

/// [`objective`] plus `mu/2 * |decoder - anchor|^2`.
pub fn proximal_objective(
    task: TaskKind,
    decoder: &[f64],
    anchor: &[f64],
    mu: f64,
    data: &Dataset,
    rows: &[usize],
) -> f64 {
    let prox: f64 = decoder.iter().zip(anchor).map(|(d, a)| (d - a) * (d - a)).sum();
    objective(task, decoder, data, rows) + 0.5 * mu * prox
}

pub fn proximal_gradient(
    task: TaskKind,
    decoder: &[f64],
    anchor: &[f64],
    mu: f64,
    data: &Dataset,
    rows: &[usize],
) -> Vec<f64> {
    let mut grad = objective_gradient(task, decoder, data, rows);
    for ((g, d), a) in grad.iter_mut().zip(decoder).zip(anchor) {
        *g += mu * (d - a);
    }
    grad
}

/// Mini-batch gradient descent on the client's training split.
pub fn local_train(decoder: &ParamVector, client: &ClientState, derived_seed: u64) -> Result<ParamVector> {
    train(decoder, client, None, derived_seed)
}

/// Local training with the FedProx term `mu * (decoder - anchor)` added to
/// every step's gradient.
pub fn local_train_fedprox(
    decoder: &ParamVector,
    client: &ClientState,
    global_anchor: &ParamVector,
    mu: f64,
    derived_seed: u64,
) -> Result<ParamVector> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::ConfigInvalid(format!("proximal mu {mu} must be >= 0")));
    }
    client.manifest().check(global_anchor)?;
    train(decoder, client, Some((global_anchor, mu)), derived_seed)
}

fn train(
    decoder: &ParamVector,
    client: &ClientState,
    prox: Option<(&ParamVector, f64)>,
    seed: u64,
) -> Result<ParamVector> {
    client.manifest().check(decoder)?;
    let data = &client.data.train;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cfg = &client.local;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = decoder.as_slice().to_vec();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let grad = match prox {
                None => objective_gradient(client.task, &params, data, batch),
                Some((anchor, mu)) => proximal_gradient(client.task, &params, anchor.as_slice(), mu, data, batch),
            };
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFiniteLoss { step });
            }
            step += 1;
        }
    }
    ParamVector::new(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Mean squared error (regression) or mean log-loss (classification).
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Loss and accuracy of `decoder` on the client's test split.
pub fn evaluate(decoder: &ParamVector, client: &ClientState) -> EvalMetrics {
    let data = &client.data.test;
    let d = decoder.as_slice();
    let m = data.len() as f64;
    match client.task {
        TaskKind::Regression => {
            let mse = data
                .features
                .iter()
                .zip(&data.labels)
                .map(|(phi, y)| (score(d, phi) - y).powi(2))
                .sum::<f64>()
                / m;
            EvalMetrics {
                loss: mse,
                accuracy: None,
            }
        }
        TaskKind::Classification => {
            let mut loss = 0.0;
            let mut correct = 0usize;
            for (phi, &y) in data.features.iter().zip(&data.labels) {
                let z = score(d, phi);
                loss += softplus(z) - y * z;
                if (z > 0.0) == (y > 0.5) {
                    correct += 1;
                }
            }
            EvalMetrics {
                loss: loss / m,
                accuracy: Some(correct as f64 / m),
            }
        }
    }
}

/// Writes `domain_id, split, x_0.., label` rows for every client.
pub fn write_dataset_csv<W: Write>(out: W, clients: &[ClientState]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let input_dim = clients.first().map_or(0, |c| c.domain.input_dim);
    let mut header = vec!["domain_id".to_string(), "split".to_string()];
    header.extend((0..input_dim).map(|k| format!("x_{k}")));
    header.push("label".into());
    writer.write_record(&header)?;
    for client in clients {
        for (split, ds) in [("train", &client.data.train), ("test", &client.data.test)] {
            for (x, y) in ds.inputs.iter().zip(&ds.labels) {
                let mut row = vec![client.domain.domain_id.to_string(), split.to_string()];
                row.extend(x.iter().map(|v| v.to_string()));
                row.push(y.to_string());
                writer.write_record(&row)?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}
