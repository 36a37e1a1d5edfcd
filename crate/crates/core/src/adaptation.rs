//! Damage recovery by Bayesian optimization over a filled behavior map:
//! the stored fitnesses act as the Gaussian-process prior mean, and an
//! upper-confidence-bound loop picks which archived controller to test
//! on the damaged system next.

use serde::{Deserialize, Serialize};

use crate::error::MeesError;
use crate::evaluate::{evaluate_robust, EpisodeEvaluator};
use crate::map::BehaviorMap;
use crate::policy::PolicyParams;
use crate::seeds;

/// Matern 5/2 covariance, unit signal variance.
pub fn matern52(distance: f64, rho: f64) -> f64 {
    let a = 5.0_f64.sqrt() * distance / rho;
    (1.0 + a + 5.0 * distance * distance / (3.0 * rho * rho)) * (-a).exp()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// matrix, with escalating diagonal jitter on near-singular input.
fn cholesky_with_jitter(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MeesError> {
    let n = a.len();
    for jitter in [0.0, 1e-10, 1e-8, 1e-6] {
        let mut l = vec![vec![0.0; n]; n];
        let mut ok = true;
        'factor: for i in 0..n {
            for j in 0..=i {
                let mut sum = a[i][j];
                if i == j {
                    sum += jitter;
                }
                for k in 0..j {
                    sum -= l[i][k] * l[j][k];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        ok = false;
                        break 'factor;
                    }
                    l[i][j] = sum.sqrt();
                } else {
                    l[i][j] = sum / l[j][j];
                }
            }
        }
        if ok {
            return Ok(l);
        }
    }
    Err(MeesError::LinAlg(
        "kernel matrix not positive definite even after diagonal jitter up to 1e-6".into(),
    ))
}

/// Solves L v = b.
fn forward_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut v = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * v[k];
        }
        v[i] = sum / l[i][i];
    }
    v
}

/// Solves L L^T x = b.
fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = forward_solve(l, b);
    for i in (0..n).rev() {
        let mut sum = x[i];
        for k in i + 1..n {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    x
}

/// Gaussian-process regressor over normalized BC space with a caller
/// supplied prior mean and unit signal variance.
pub struct GpModel {
    pub rho: f64,
    pub noise_variance: f64,
    xs: Vec<Vec<f64>>,
    residuals: Vec<f64>,
    chol: Option<Vec<Vec<f64>>>,
    alpha: Vec<f64>,
}

impl GpModel {
    pub fn new(rho: f64, noise_variance: f64) -> Result<Self, MeesError> {
        if !(rho > 0.0) {
            return Err(MeesError::InvalidArgument("kernel length scale must be > 0".into()));
        }
        if !(noise_variance >= 0.0) {
            return Err(MeesError::InvalidArgument("noise variance must be >= 0".into()));
        }
        Ok(Self { rho, noise_variance, xs: Vec::new(), residuals: Vec::new(), chol: None, alpha: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Records (x, y - prior(x)) and refactors the kernel system.
    pub fn add_observation(&mut self, x: Vec<f64>, residual: f64) -> Result<(), MeesError> {
        if !residual.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(MeesError::NonFinite("gp observation".into()));
        }
        if let Some(prev) = self.xs.first() {
            if prev.len() != x.len() {
                return Err(MeesError::InvalidArgument("gp observation dimension changed".into()));
            }
        }
        self.xs.push(x);
        self.residuals.push(residual);
        let n = self.xs.len();
        let mut k = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = matern52(euclidean(&self.xs[i], &self.xs[j]), self.rho);
                k[i][j] = v;
                k[j][i] = v;
            }
            k[i][i] += self.noise_variance;
        }
        let l = cholesky_with_jitter(&k)?;
        self.alpha = cholesky_solve(&l, &self.residuals);
        self.chol = Some(l);
        Ok(())
    }

    /// Posterior (mean, variance) at a query point, in the same units as
    /// the supplied prior. Variance is floored at zero.
    pub fn posterior(&self, query: &[f64], prior_at_query: f64) -> (f64, f64) {
        let Some(l) = &self.chol else {
            return (prior_at_query, matern52(0.0, self.rho));
        };
        let k_q: Vec<f64> =
            self.xs.iter().map(|x| matern52(euclidean(x, query), self.rho)).collect();
        let mean = prior_at_query + k_q.iter().zip(&self.alpha).map(|(k, a)| k * a).sum::<f64>();
        let v = forward_solve(l, &k_q);
        let variance = matern52(0.0, self.rho) - v.iter().map(|x| x * x).sum::<f64>();
        (mean, variance.max(0.0))
    }
}

/// Index of the candidate maximizing mean + kappa * sqrt(variance);
/// ties keep the lowest index.
pub fn ucb_select(posteriors: &[(f64, f64)], kappa: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &(mean, variance)) in posteriors.iter().enumerate() {
        let score = mean + kappa * variance.max(0.0).sqrt();
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MboaConfig {
    pub rho: f64,
    pub kappa: f64,
    pub noise_variance: f64,
    pub n_eval: usize,
    pub max_trials: u64,
    pub stop_margin: f64,
    pub seed: u64,
}

impl Default for MboaConfig {
    fn default() -> Self {
        Self {
            rho: 0.03,
            kappa: 0.3,
            noise_variance: 0.01,
            n_eval: 30,
            max_trials: 20,
            stop_margin: 0.0,
            seed: 0,
        }
    }
}

impl MboaConfig {
    pub fn validate(&self) -> Result<(), MeesError> {
        if !(self.rho > 0.0) {
            return Err(MeesError::InvalidArgument("rho must be > 0".into()));
        }
        if !(self.kappa >= 0.0) {
            return Err(MeesError::InvalidArgument("kappa must be >= 0".into()));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(MeesError::InvalidArgument("noise_variance must be >= 0".into()));
        }
        if self.n_eval == 0 {
            return Err(MeesError::InvalidArgument("n_eval must be >= 1".into()));
        }
        if !(self.stop_margin >= 0.0) {
            return Err(MeesError::InvalidArgument("stop_margin must be >= 0".into()));
        }
        Ok(())
    }
}

/// One adaptation trial as written to the log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub trial: u64,
    pub cell: Vec<usize>,
    pub prior_mean: f64,
    pub posterior_mean: f64,
    /// None when the controller was returned untested (zero budget).
    pub measured_fitness: Option<f64>,
}

/// The controller the adaptation loop settled on.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub params: PolicyParams,
    pub cell: Vec<usize>,
    /// Measured on the damaged system; None when returned untested.
    pub measured_fitness: Option<f64>,
    pub episodes: u64,
}

/// Bayesian-optimization recovery loop over the map's populated cells.
pub fn mboa_run(
    map: &BehaviorMap,
    evaluator: &dyn EpisodeEvaluator,
    cfg: &MboaConfig,
) -> Result<(Recovery, Vec<TrialRow>), MeesError> {
    cfg.validate()?;
    if map.len() == 0 {
        return Err(MeesError::InvalidArgument("adaptation needs a non-empty map".into()));
    }
    struct Candidate<'a> {
        cell: Vec<usize>,
        x: Vec<f64>,
        prior_raw: f64,
        prior_std: f64,
        params: &'a PolicyParams,
    }
    let fitnesses: Vec<f64> = map.elites().map(|(_, e)| e.fitness).collect();
    let f_mean = fitnesses.iter().sum::<f64>() / fitnesses.len() as f64;
    let var = fitnesses.iter().map(|f| (f - f_mean) * (f - f_mean)).sum::<f64>()
        / fitnesses.len() as f64;
    let f_spread = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    let candidates: Vec<Candidate> = map
        .elites()
        .map(|(cell, e)| Candidate {
            cell: cell.clone(),
            x: map.spec().normalize_bc(&e.bc),
            prior_raw: e.fitness,
            prior_std: (e.fitness - f_mean) / f_spread,
            params: &e.params,
        })
        .collect();

    let mut model = GpModel::new(cfg.rho, cfg.noise_variance)?;
    let mut log = Vec::new();
    let mut best: Option<(usize, f64)> = None;

    if cfg.max_trials == 0 {
        let prior_best = ucb_select(
            &candidates.iter().map(|c| (c.prior_std, 0.0)).collect::<Vec<_>>(),
            0.0,
        );
        let c = &candidates[prior_best];
        log.push(TrialRow {
            trial: 0,
            cell: c.cell.clone(),
            prior_mean: c.prior_raw,
            posterior_mean: c.prior_raw,
            measured_fitness: None,
        });
        return Ok((
            Recovery {
                params: c.params.clone(),
                cell: c.cell.clone(),
                measured_fitness: None,
                episodes: 0,
            },
            log,
        ));
    }

    for trial in 0..cfg.max_trials {
        let posteriors: Vec<(f64, f64)> =
            candidates.iter().map(|c| model.posterior(&c.x, c.prior_std)).collect();
        let pick = ucb_select(&posteriors, cfg.kappa);
        let c = &candidates[pick];
        let (measured, _bc) = evaluate_robust(
            evaluator,
            &c.params.flat,
            cfg.n_eval,
            seeds::derive_indexed(cfg.seed, "adapt_trial", trial),
        )?;
        log.push(TrialRow {
            trial,
            cell: c.cell.clone(),
            prior_mean: c.prior_raw,
            posterior_mean: f_mean + f_spread * posteriors[pick].0,
            measured_fitness: Some(measured),
        });
        if best.map_or(true, |(_, f)| measured > f) {
            best = Some((pick, measured));
        }
        model.add_observation(c.x.clone(), (measured - f_mean) / f_spread - c.prior_std)?;
        let max_mean_raw = candidates
            .iter()
            .map(|c| f_mean + f_spread * model.posterior(&c.x, c.prior_std).0)
            .fold(f64::NEG_INFINITY, f64::max);
        let best_f = best.expect("at least one trial ran").1;
        if best_f >= max_mean_raw - cfg.stop_margin {
            break;
        }
    }

    let (idx, fitness) = best.expect("max_trials >= 1 ran at least one trial");
    let c = &candidates[idx];
    Ok((
        Recovery {
            params: c.params.clone(),
            cell: c.cell.clone(),
            measured_fitness: Some(fitness),
            episodes: log.len() as u64 * cfg.n_eval as u64,
        },
        log,
    ))
}
