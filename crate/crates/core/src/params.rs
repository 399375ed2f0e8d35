//! Flattened decoder parameters, the cosine distance between decoders, and
//! weighted (FedAvg) aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A decoder flattened into a fixed canonical order.
///
/// Always non-empty and finite. Every vector inside one simulation shares the
/// same length and flattening order, declared by a [`Manifest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(position) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { position });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Per-client aggregation weights `n_i / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights(Vec<f64>);

impl AggregationWeights {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(AggregationWeights(weights))
    }

    /// Weights proportional to local dataset sizes.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidWeights("sample counts sum to zero".into()));
        }
        let total = total as f64;
        Self::new(counts.iter().map(|&n| n as f64 / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Cosine distance `1 - a.b / (|a| |b|)`, in `[0, 2]`.
///
/// Zero-magnitude inputs are rejected rather than mapped to a default value.
pub fn cosine_distance(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 {
        return Err(Error::ZeroNormVector { index: None });
    }
    if nb == 0.0 {
        return Err(Error::ZeroNormVector { index: None });
    }
    let cos = a.dot(b)? / (na * nb);
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

/// Elementwise `sum_i w_i * g_i`.
pub fn weighted_average(decoders: &[ParamVector], weights: &AggregationWeights) -> Result<ParamVector> {
    let first = decoders.first().ok_or(Error::EmptyInput)?;
    check_dim(decoders.len(), weights.len())?;
    let dim = first.dim();
    let mut out = vec![0.0; dim];
    for (decoder, &w) in decoders.iter().zip(weights.as_slice()) {
        check_dim(dim, decoder.dim())?;
        for (acc, v) in out.iter_mut().zip(decoder.as_slice()) {
            *acc += w * v;
        }
    }
    ParamVector::new(out)
}

/// A named dense tensor of a decoder head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl LayerTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(LayerTensor {
            name: name.into(),
            shape,
            data,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayerShape {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        LayerShape {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered layer shapes that fix the canonical flattening order of a decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    layers: Vec<LayerShape>,
}

impl Manifest {
    pub fn new(layers: Vec<LayerShape>) -> Result<Self> {
        if layers.is_empty() || layers.iter().any(|l| l.numel() == 0) {
            return Err(Error::EmptyInput);
        }
        Ok(Manifest { layers })
    }

    /// Single-output linear head: a `1 x feature_dim` weight and a scalar bias.
    pub fn linear_head(feature_dim: usize) -> Result<Self> {
        Self::new(vec![
            LayerShape::new("weight", vec![1, feature_dim]),
            LayerShape::new("bias", vec![1]),
        ])
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn dim(&self) -> usize {
        self.layers.iter().map(LayerShape::numel).sum()
    }

    pub fn check(&self, v: &ParamVector) -> Result<()> {
        if v.dim() != self.dim() {
            return Err(Error::ManifestMismatch {
                expected: self.dim(),
                found: v.dim(),
            });
        }
        Ok(())
    }

    pub fn flatten(&self, tensors: &[LayerTensor]) -> Result<ParamVector> {
        if tensors.len() != self.layers.len() {
            return Err(Error::ManifestMismatch {
                expected: self.layers.len(),
                found: tensors.len(),
            });
        }
        let mut values = Vec::with_capacity(self.dim());
        for (layer, tensor) in self.layers.iter().zip(tensors) {
            if layer.shape != tensor.shape || layer.name != tensor.name {
                return Err(Error::ManifestMismatch {
                    expected: layer.numel(),
                    found: tensor.data.len(),
                });
            }
            values.extend_from_slice(&tensor.data);
        }
        ParamVector::new(values)
    }

    pub fn unflatten(&self, v: &ParamVector) -> Result<Vec<LayerTensor>> {
        self.check(v)?;
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let n = layer.numel();
            out.push(LayerTensor {
                name: layer.name.clone(),
                shape: layer.shape.clone(),
                data: v.as_slice()[offset..offset + n].to_vec(),
            });
            offset += n;
        }
        Ok(out)
    }
}
