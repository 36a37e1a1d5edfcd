//! Evolution-strategies update step: sample Gaussian offspring around a
//! center, score them with a pluggable objective, estimate the search
//! gradient, and apply an Adam ascent step with L2 decay.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MeesError;
use crate::seeds;

/// Score shaping applied before the gradient estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessShaping {
    RankNormalize,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ESConfig {
    pub pop_size: usize,
    pub noise_std: f64,
    pub learning_rate: f64,
    pub l2_coeff: f64,
    pub fitness_shaping: FitnessShaping,
    /// Antithetic pairs (+ε, −ε). Off by default: plain sampling.
    pub mirrored: bool,
}

impl Default for ESConfig {
    fn default() -> Self {
        Self {
            pop_size: 100,
            noise_std: 0.02,
            learning_rate: 0.01,
            l2_coeff: 0.005,
            fitness_shaping: FitnessShaping::RankNormalize,
            mirrored: false,
        }
    }
}

impl ESConfig {
    pub fn validate(&self) -> Result<(), MeesError> {
        if self.pop_size < 2 {
            return Err(MeesError::InvalidArgument("pop_size must be >= 2".into()));
        }
        if !(self.noise_std > 0.0) {
            return Err(MeesError::InvalidArgument("noise_std must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(MeesError::InvalidArgument("learning_rate must be > 0".into()));
        }
        if !(self.l2_coeff >= 0.0) {
            return Err(MeesError::InvalidArgument("l2_coeff must be >= 0".into()));
        }
        if self.mirrored && self.pop_size % 2 != 0 {
            return Err(MeesError::InvalidArgument(
                "mirrored sampling needs an even pop_size".into(),
            ));
        }
        Ok(())
    }
}

/// Source of standard-normal perturbation vectors addressed by index.
/// Implementations must be pure: the same (index, dim) always yields the
/// same vector.
pub trait NoiseSource: Sync {
    fn perturbation(&self, index: u64, dim: usize) -> Vec<f64>;

    /// How many vectors a gradient pass may materialize at once.
    /// Memory/batching knob only; results never depend on it.
    fn block_hint(&self) -> usize {
        64
    }
}

/// On-demand deterministic noise stream. Perturbation `i` is a pure
/// function of (master_seed, i, dim); nothing is materialized up front, so
/// memory stays O(dim) per worker no matter how many indices are drawn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseTable {
    pub master_seed: u64,
    /// How many perturbation vectors a gradient pass materializes at a
    /// time. Batching only; has no effect on any produced value.
    pub block_length: usize,
}

impl NoiseTable {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed, block_length: 64 }
    }
}

impl NoiseSource for NoiseTable {
    fn perturbation(&self, index: u64, dim: usize) -> Vec<f64> {
        let seed = seeds::derive_indexed(self.master_seed, "perturbation", index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn block_hint(&self) -> usize {
        self.block_length
    }
}

/// θ + σ·ε_index.
pub fn sample_offspring(
    center: &[f64],
    table: &impl NoiseSource,
    index: u64,
    sigma: f64,
) -> Vec<f64> {
    let eps = table.perturbation(index, center.len());
    center.iter().zip(&eps).map(|(&c, &e)| c + sigma * e).collect()
}

/// Centered ranks: worst score maps to −0.5, best to +0.5, ties receive
/// the mean of their positions. Output always sums to zero.
pub fn rank_normalize(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mean_pos = (start + end - 1) as f64 / 2.0;
        let value = mean_pos / (n - 1) as f64 - 0.5;
        for &i in &order[start..end] {
            out[i] = value;
        }
        start = end;
    }
    out
}

/// (1/(nσ)) Σ_i weights[i]·ε_{indices[i]}. Ascent direction; the caller
/// negates for minimization. Accumulation runs in index order so the
/// result is independent of thread count.
pub fn estimate_gradient(
    weights: &[f64],
    table: &impl NoiseSource,
    indices: &[u64],
    sigma: f64,
    dim: usize,
    block_length: usize,
) -> Result<Vec<f64>, MeesError> {
    if weights.len() != indices.len() {
        return Err(MeesError::InvalidArgument(
            "weights and indices lengths differ".into(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(MeesError::InvalidArgument("sigma must be > 0".into()));
    }
    crate::error::check_finite("weights", weights)?;
    let n = weights.len();
    let block = block_length.max(1);
    let mut grad = vec![0.0; dim];
    let mut pos = 0;
    while pos < n {
        let end = (pos + block).min(n);
        let eps: Vec<Vec<f64>> = indices[pos..end]
            .par_iter()
            .map(|&i| table.perturbation(i, dim))
            .collect();
        for (off, e) in eps.iter().enumerate() {
            let w = weights[pos + off];
            for (g, &x) in grad.iter_mut().zip(e) {
                *g += w * x;
            }
        }
        pos = end;
    }
    let scale = 1.0 / (n as f64 * sigma);
    for g in &mut grad {
        *g *= scale;
    }
    Ok(grad)
}

/// Adam moments. Fresh state has zero moments and step_count 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam ascent step. L2 enters as gradient decay toward zero:
/// grad' = grad − l2·center.
pub fn adam_step(
    state: &mut AdamState,
    center: &[f64],
    grad: &[f64],
    learning_rate: f64,
    l2_coeff: f64,
) -> Result<Vec<f64>, MeesError> {
    if center.len() != grad.len() || center.len() != state.first_moment.len() {
        return Err(MeesError::InvalidArgument("adam shapes differ".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let mut out = Vec::with_capacity(center.len());
    for i in 0..center.len() {
        let g = grad[i] - l2_coeff * center[i];
        state.first_moment[i] = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
        state.second_moment[i] =
            state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.first_moment[i] / bc1;
        let v_hat = state.second_moment[i] / bc2;
        out.push(center[i] + learning_rate * m_hat / (v_hat.sqrt() + state.eps));
    }
    Ok(out)
}

/// Result of one ES generation: the moved center and the raw offspring
/// scores (index-ordered), for logging.
#[derive(Debug, Clone)]
pub struct EsStep {
    pub center: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Offspring slots for one generation: (noise index, sign). Plain
/// sampling gives each slot its own index; mirrored sampling pairs slots
/// on a shared index with opposite signs.
fn offspring_slots(gen: u64, cfg: &ESConfig) -> Vec<(u64, f64)> {
    let base = gen * cfg.pop_size as u64;
    (0..cfg.pop_size)
        .map(|j| {
            if cfg.mirrored {
                let idx = base + (j as u64 / 2) * 2;
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                (idx, sign)
            } else {
                (base + j as u64, 1.0)
            }
        })
        .collect()
}

fn build_offspring(center: &[f64], table: &impl NoiseSource, slot: (u64, f64), sigma: f64) -> Vec<f64> {
    let eps = table.perturbation(slot.0, center.len());
    center
        .iter()
        .zip(&eps)
        .map(|(&c, &e)| c + sigma * slot.1 * e)
        .collect()
}

fn first_error<T>(results: Vec<Result<T, MeesError>>) -> Result<Vec<T>, MeesError> {
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

fn finalize_step(
    center: &[f64],
    cfg: &ESConfig,
    table: &impl NoiseSource,
    adam: &mut AdamState,
    slots: &[(u64, f64)],
    shaped: Vec<f64>,
    scores: Vec<f64>,
) -> Result<EsStep, MeesError> {
    let weights: Vec<f64> = shaped.iter().zip(slots).map(|(&w, &(_, s))| w * s).collect();
    let indices: Vec<u64> = slots.iter().map(|&(i, _)| i).collect();
    let grad = estimate_gradient(
        &weights,
        table,
        &indices,
        cfg.noise_std,
        center.len(),
        table.block_hint(),
    )?;
    let new_center = adam_step(adam, center, &grad, cfg.learning_rate, cfg.l2_coeff)?;
    Ok(EsStep { center: new_center, scores })
}

/// One ES generation against a scalar objective. The objective sees the
/// offspring slot (for deriving per-offspring episode seeds) and the
/// perturbed parameters; it must be a pure function of both.
pub fn es_generation<F>(
    center: &[f64],
    cfg: &ESConfig,
    table: &impl NoiseSource,
    adam: &mut AdamState,
    gen: u64,
    objective: F,
) -> Result<EsStep, MeesError>
where
    F: Fn(usize, &[f64]) -> Result<f64, MeesError> + Sync,
{
    cfg.validate()?;
    let slots = offspring_slots(gen, cfg);
    let results: Vec<Result<f64, MeesError>> = slots
        .par_iter()
        .enumerate()
        .map(|(j, &slot)| {
            let theta = build_offspring(center, table, slot, cfg.noise_std);
            let s = objective(j, &theta)?;
            if !s.is_finite() {
                return Err(MeesError::NonFinite(format!("offspring score [{j}] = {s}")));
            }
            Ok(s)
        })
        .collect();
    let scores = first_error(results)?;
    let shaped = match cfg.fitness_shaping {
        FitnessShaping::RankNormalize => rank_normalize(&scores),
        FitnessShaping::Raw => scores.clone(),
    };
    finalize_step(center, cfg, table, adam, &slots, shaped, scores)
}

/// One ES generation against a two-score objective (fitness, novelty).
/// Each score vector is rank-normalized separately, then mixed as
/// w·fitness + (1−w)·novelty. w=1 reduces to plain fitness ES, w=0 to
/// pure novelty search.
pub fn es_generation_mixed<F>(
    center: &[f64],
    cfg: &ESConfig,
    table: &impl NoiseSource,
    adam: &mut AdamState,
    gen: u64,
    weight: f64,
    objective: F,
) -> Result<EsStep, MeesError>
where
    F: Fn(usize, &[f64]) -> Result<(f64, f64), MeesError> + Sync,
{
    cfg.validate()?;
    if !(0.0..=1.0).contains(&weight) {
        return Err(MeesError::InvalidArgument("mix weight must lie in [0,1]".into()));
    }
    let slots = offspring_slots(gen, cfg);
    let results: Vec<Result<(f64, f64), MeesError>> = slots
        .par_iter()
        .enumerate()
        .map(|(j, &slot)| {
            let theta = build_offspring(center, table, slot, cfg.noise_std);
            let (f, nov) = objective(j, &theta)?;
            if !f.is_finite() || !nov.is_finite() {
                return Err(MeesError::NonFinite(format!(
                    "offspring scores [{j}] = ({f}, {nov})"
                )));
            }
            Ok((f, nov))
        })
        .collect();
    let pairs = first_error(results)?;
    let fit: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let nov: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let rf = rank_normalize(&fit);
    let rn = rank_normalize(&nov);
    let shaped: Vec<f64> = rf
        .iter()
        .zip(&rn)
        .map(|(&a, &b)| weight * a + (1.0 - weight) * b)
        .collect();
    finalize_step(center, cfg, table, adam, &slots, shaped, fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct StubNoise {
        vectors: Vec<Vec<f64>>,
    }

    impl NoiseSource for StubNoise {
        fn perturbation(&self, index: u64, dim: usize) -> Vec<f64> {
            let v = &self.vectors[index as usize % self.vectors.len()];
            assert_eq!(v.len(), dim);
            v.clone()
        }
    }

    #[test]
    fn rank_normalize_hand_example() {
        assert_eq!(rank_normalize(&[3.0, 1.0, 2.0]), vec![0.5, -0.5, 0.0]);
        assert_eq!(rank_normalize(&[7.0, 2.0]), vec![0.5, -0.5]);
    }

    #[test]
    fn rank_normalize_constant_is_zero() {
        let r = rank_normalize(&[4.0; 6]);
        assert!(r.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rank_normalize_tie_pair_shares_mean_rank() {
        // scores [1, 1, 5]: the tied pair takes positions (0+1)/2 = 0.5.
        let r = rank_normalize(&[1.0, 1.0, 5.0]);
        assert_eq!(r, vec![-0.25, -0.25, 0.5]);
    }

    proptest! {
        #[test]
        fn rank_normalize_zero_sum_bounded(scores in proptest::collection::vec(-1e6..1e6f64, 2..40)) {
            let r = rank_normalize(&scores);
            let sum: f64 = r.iter().sum();
            prop_assert!(sum.abs() < 1e-12);
            prop_assert!(r.iter().all(|&x| (-0.5..=0.5).contains(&x)));
        }

        #[test]
        fn rank_normalize_permutation_equivariant(scores in proptest::collection::vec(-100.0..100.0f64, 3..20)) {
            let r = rank_normalize(&scores);
            let mut rev = scores.clone();
            rev.reverse();
            let mut rr = rank_normalize(&rev);
            rr.reverse();
            prop_assert_eq!(r, rr);
        }
    }

    #[test]
    fn gradient_hand_example() {
        let u = vec![0.3, -1.0, 2.0];
        let stub = StubNoise { vectors: vec![u.clone(), u.iter().map(|x| -x).collect()] };
        let g = estimate_gradient(&[0.5, -0.5], &stub, &[0, 1], 0.5, 3, 64).unwrap();
        for (a, b) in g.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_zero_weights() {
        let stub = StubNoise { vectors: vec![vec![1.0, 2.0]] };
        let g = estimate_gradient(&[0.0, 0.0, 0.0], &stub, &[0, 0, 0], 1.0, 2, 64).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_rejects_nan_weight() {
        let stub = StubNoise { vectors: vec![vec![1.0]] };
        let err = estimate_gradient(&[f64::NAN], &stub, &[0], 1.0, 1, 64).unwrap_err();
        assert!(err.to_string().contains("weights[0]"));
    }

    #[test]
    fn gradient_block_length_does_not_change_result() {
        let table = NoiseTable::new(5);
        let weights: Vec<f64> = (0..17).map(|i| (i as f64) - 8.0).collect();
        let indices: Vec<u64> = (0..17).collect();
        let a = estimate_gradient(&weights, &table, &indices, 0.1, 12, 1).unwrap();
        let b = estimate_gradient(&weights, &table, &indices, 0.1, 12, 7).unwrap();
        let c = estimate_gradient(&weights, &table, &indices, 0.1, 12, 1000).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn offspring_decomposition() {
        let table = NoiseTable::new(9);
        let center = vec![1.0, 2.0, 3.0];
        let zero_sigma = sample_offspring(&center, &table, 4, 0.0);
        assert_eq!(zero_sigma, center);
        let a = sample_offspring(&center, &table, 4, 0.02);
        let b = sample_offspring(&center, &table, 4, 0.02);
        assert_eq!(a, b);
        let eps = sample_offspring(&vec![0.0; 3], &table, 4, 1.0);
        assert_eq!(eps, table.perturbation(4, 3));
    }

    #[test]
    fn adam_first_step_has_lr_magnitude() {
        let mut st = AdamState::new(3);
        let center = vec![0.0; 3];
        let g = vec![0.5, -2.0, 1e-3];
        let out = adam_step(&mut st, &center, &g, 0.01, 0.0).unwrap();
        for (o, gi) in out.iter().zip(&g) {
            let expected = 0.01 * gi.signum();
            assert!((o - expected).abs() < 1e-5, "step {o} vs {expected}");
        }
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_zero_grad_zero_l2_is_identity() {
        let mut st = AdamState::new(2);
        let center = vec![3.0, -4.0];
        let out = adam_step(&mut st, &center, &[0.0, 0.0], 0.01, 0.0).unwrap();
        assert_eq!(out, center);
    }

    #[test]
    fn adam_deterministic() {
        let g = vec![0.3, -0.7];
        let center = vec![1.0, 1.0];
        let mut s1 = AdamState::new(2);
        let mut s2 = AdamState::new(2);
        let a = adam_step(&mut s1, &center, &g, 0.05, 0.01).unwrap();
        let b = adam_step(&mut s2, &center, &g, 0.05, 0.01).unwrap();
        assert_eq!(a, b);
        assert_eq!(s1, s2);
    }

    #[test]
    fn constant_objective_leaves_center_in_place() {
        let table = NoiseTable::new(1);
        let cfg = ESConfig { pop_size: 8, l2_coeff: 0.0, ..ESConfig::default() };
        let mut adam = AdamState::new(4);
        let center = vec![0.5, -0.5, 1.0, 0.0];
        let step =
            es_generation(&center, &cfg, &table, &mut adam, 0, |_, _| Ok(7.0)).unwrap();
        assert_eq!(step.center, center);
    }

    #[test]
    fn generation_deterministic_across_calls() {
        let table = NoiseTable::new(3);
        let cfg = ESConfig { pop_size: 16, ..ESConfig::default() };
        let center = vec![0.1; 10];
        let obj = |_: usize, th: &[f64]| Ok(-th.iter().map(|x| x * x).sum::<f64>());
        let mut a1 = AdamState::new(10);
        let mut a2 = AdamState::new(10);
        let s1 = es_generation(&center, &cfg, &table, &mut a1, 0, obj).unwrap();
        let s2 = es_generation(&center, &cfg, &table, &mut a2, 0, obj).unwrap();
        assert_eq!(s1.center, s2.center);
        assert_eq!(s1.scores, s2.scores);
    }

    #[test]
    fn mixed_weight_one_matches_scalar_generation() {
        let table = NoiseTable::new(17);
        let cfg = ESConfig { pop_size: 12, ..ESConfig::default() };
        let center = vec![0.2; 6];
        let fit = |th: &[f64]| -th.iter().map(|x| (x - 1.0) * (x - 1.0)).sum::<f64>();
        let mut a1 = AdamState::new(6);
        let s1 = es_generation(&center, &cfg, &table, &mut a1, 2, |_, th| Ok(fit(th))).unwrap();
        let mut a2 = AdamState::new(6);
        let s2 = es_generation_mixed(&center, &cfg, &table, &mut a2, 2, 1.0, |j, th| {
            Ok((fit(th), j as f64))
        })
        .unwrap();
        assert_eq!(s1.center, s2.center);
    }

    #[test]
    fn mixed_weight_zero_matches_novelty_only() {
        let table = NoiseTable::new(18);
        let cfg = ESConfig { pop_size: 12, ..ESConfig::default() };
        let center = vec![0.2; 6];
        let nov = |th: &[f64]| th[0];
        let mut a1 = AdamState::new(6);
        let s1 = es_generation(&center, &cfg, &table, &mut a1, 2, |_, th| Ok(nov(th))).unwrap();
        let mut a2 = AdamState::new(6);
        let s2 = es_generation_mixed(&center, &cfg, &table, &mut a2, 2, 0.0, |j, th| {
            Ok((j as f64, nov(th)))
        })
        .unwrap();
        assert_eq!(s1.center, s2.center);
    }

    #[test]
    fn mixed_invariant_to_fitness_rescaling() {
        let table = NoiseTable::new(19);
        let cfg = ESConfig { pop_size: 10, ..ESConfig::default() };
        let center = vec![0.0; 5];
        let run = |scale: f64, shift: f64| {
            let mut adam = AdamState::new(5);
            es_generation_mixed(&center, &cfg, &table, &mut adam, 1, 0.5, |_, th| {
                Ok((scale * th[0] + shift, th[1]))
            })
            .unwrap()
            .center
        };
        assert_eq!(run(1.0, 0.0), run(250.0, -3.0));
    }

    #[test]
    fn objective_failure_reports_lowest_index() {
        let table = NoiseTable::new(2);
        let cfg = ESConfig { pop_size: 8, ..ESConfig::default() };
        let mut adam = AdamState::new(3);
        let err = es_generation(&vec![0.0; 3], &cfg, &table, &mut adam, 0, |j, _| {
            if j >= 3 {
                Err(MeesError::InvalidArgument(format!("boom at {j}")))
            } else {
                Ok(0.0)
            }
        })
        .unwrap_err();
        assert!(err.to_string().contains("boom at 3"));
    }

    #[test]
    fn mirrored_slots_pair_indices() {
        let cfg = ESConfig { pop_size: 6, mirrored: true, ..ESConfig::default() };
        let slots = offspring_slots(1, &cfg);
        assert_eq!(
            slots,
            vec![(6, 1.0), (6, -1.0), (8, 1.0), (8, -1.0), (10, 1.0), (10, -1.0)]
        );
    }

    #[test]
    fn small_sphere_converges() {
        let table = NoiseTable::new(7);
        let cfg = ESConfig { pop_size: 50, ..ESConfig::default() };
        let target = vec![0.3; 20];
        let obj = |_: usize, th: &[f64]| {
            Ok(-th.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        };
        let mut center = vec![0.0; 20];
        let mut adam = AdamState::new(20);
        let mut best = f64::NEG_INFINITY;
        for gen in 0..300 {
            let step = es_generation(&center, &cfg, &table, &mut adam, gen, obj).unwrap();
            center = step.center;
            let v: f64 =
                -center.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            best = best.max(v);
        }
        assert!(best > -0.01, "best sphere objective {best}");
    }
}
