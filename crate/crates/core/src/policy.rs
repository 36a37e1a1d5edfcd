//! Fully connected tanh controller plus frozen observation normalization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, MeesError};

/// Smallest allowed per-dimension observation std; keeps constant
/// dimensions from dividing by zero.
pub const STD_FLOOR: f64 = 1e-3;

/// Architecture of the controller: layer widths only, no weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
}

impl PolicySpec {
    /// Default architecture: two hidden layers of 256 units.
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self { obs_dim, act_dim, hidden: vec![256, 256] }
    }

    pub fn with_hidden(obs_dim: usize, act_dim: usize, hidden: Vec<usize>) -> Self {
        Self { obs_dim, act_dim, hidden }
    }

    /// (in_dim, out_dim) for each layer, input to output.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.obs_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.act_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total parameter count: Σ (in+1)·out over layers.
    pub fn param_count(&self) -> usize {
        self.shapes().iter().map(|&(i, o)| (i + 1) * o).sum()
    }

    fn validate(&self) -> Result<(), MeesError> {
        if self.obs_dim == 0 || self.act_dim == 0 {
            return Err(MeesError::InvalidArgument(
                "policy dimensions must be >= 1".into(),
            ));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(MeesError::InvalidArgument(
                "hidden layer widths must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Controller parameters: a flat vector of weights and biases, laid out
/// layer by layer (per layer: all weights, each output unit's incoming
/// weights contiguous, then all biases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub spec: PolicySpec,
    pub flat: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(spec: PolicySpec) -> Self {
        let n = spec.param_count();
        Self { spec, flat: vec![0.0; n] }
    }

    pub fn from_flat(spec: PolicySpec, flat: Vec<f64>) -> Result<Self, MeesError> {
        if flat.len() != spec.param_count() {
            return Err(MeesError::InvalidArgument(format!(
                "flat vector has {} entries, architecture needs {}",
                flat.len(),
                spec.param_count()
            )));
        }
        Ok(Self { spec, flat })
    }
}

/// Initialization scheme for `init_policy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Each output unit's incoming weight vector is a Gaussian sample
    /// rescaled to unit Euclidean norm; biases zero.
    NormColumns,
    /// Uniform in ±sqrt(6/(in+out)); biases zero.
    Xavier,
}

/// Draws initial controller parameters. Deterministic given the seed.
pub fn init_policy(
    spec: &PolicySpec,
    seed: u64,
    scheme: InitScheme,
) -> Result<PolicyParams, MeesError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(spec.param_count());
    for (in_dim, out_dim) in spec.shapes() {
        match scheme {
            InitScheme::NormColumns => {
                for _ in 0..out_dim {
                    let mut col: Vec<f64> =
                        (0..in_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = col.iter().map(|w| w * w).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        for w in &mut col {
                            *w /= norm;
                        }
                    }
                    flat.extend_from_slice(&col);
                }
            }
            InitScheme::Xavier => {
                let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
                for _ in 0..in_dim * out_dim {
                    let u: f64 = rand::Rng::gen(&mut rng);
                    flat.push((2.0 * u - 1.0) * bound);
                }
            }
        }
        flat.extend(std::iter::repeat(0.0).take(out_dim));
    }
    Ok(PolicyParams { spec: spec.clone(), flat })
}

/// Frozen per-dimension observation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ObsNormalizer {
    /// Pass-through normalizer (mean 0, std 1).
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Builds a normalizer from raw per-dimension mean and std, flooring
    /// std at `STD_FLOOR`.
    pub fn from_stats(mean: Vec<f64>, std: Vec<f64>) -> Self {
        let std = std.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    /// Computes mean/std over a batch of observations (rows).
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self, MeesError> {
        let dim = samples
            .first()
            .ok_or_else(|| MeesError::InvalidArgument("no observation samples".into()))?
            .len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in samples {
            if s.len() != dim {
                return Err(MeesError::InvalidArgument(
                    "observation samples have inconsistent dimension".into(),
                ));
            }
            for (m, &x) in mean.iter_mut().zip(s) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for s in samples {
            for ((v, &x), &m) in var.iter_mut().zip(s).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self::from_stats(mean, std))
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect()
    }
}

/// Runs the controller: normalized obs through tanh layers, final layer
/// also tanh so every action entry lies in (-1, 1).
pub fn forward(
    params: &PolicyParams,
    norm: &ObsNormalizer,
    obs: &[f64],
) -> Result<Vec<f64>, MeesError> {
    if obs.len() != params.spec.obs_dim || norm.mean.len() != params.spec.obs_dim {
        return Err(MeesError::InvalidArgument(format!(
            "obs has {} entries, policy expects {}",
            obs.len(),
            params.spec.obs_dim
        )));
    }
    check_finite("obs", obs)?;
    let mut x = norm.normalize(obs);
    let mut offset = 0;
    for (in_dim, out_dim) in params.spec.shapes() {
        let weights = &params.flat[offset..offset + in_dim * out_dim];
        let biases = &params.flat[offset + in_dim * out_dim..offset + (in_dim + 1) * out_dim];
        offset += (in_dim + 1) * out_dim;
        let mut y = Vec::with_capacity(out_dim);
        for j in 0..out_dim {
            let row = &weights[j * in_dim..(j + 1) * in_dim];
            let z: f64 = row.iter().zip(&x).map(|(&w, &xi)| w * xi).sum::<f64>() + biases[j];
            y.push(z.tanh());
        }
        x = y;
    }
    Ok(x)
}
