//! Episode evaluation: rollouts, robust multi-episode scoring, and
//! observation-statistics collection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::env::{EnvDef, Environment};
use crate::error::{check_finite, MeesError};
use crate::policy::{forward, ObsNormalizer, PolicyParams, PolicySpec};
use crate::seeds;

/// Outcome of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub fitness: f64,
    pub bc: Vec<f64>,
    pub steps: usize,
}

/// Anything that can score a flat parameter vector with one episode.
/// Implementations must be pure in (params, seed).
pub trait EpisodeEvaluator: Sync + Send {
    fn param_count(&self) -> usize;
    fn bc_dim(&self) -> usize;
    fn evaluate(&self, flat: &[f64], seed: u64) -> Result<Episode, MeesError>;
}

/// Runs the reset/step loop until done or max_steps.
pub fn rollout(
    env: &mut dyn Environment,
    params: &PolicyParams,
    norm: &ObsNormalizer,
    seed: u64,
) -> Result<Episode, MeesError> {
    let mut obs = env.reset(seed);
    let mut steps = 0;
    while steps < env.max_steps() {
        check_finite("obs", &obs)
            .map_err(|e| MeesError::NonFinite(format!("step {steps}: {e}")))?;
        let action = forward(params, norm, &obs)?;
        check_finite("action", &action)
            .map_err(|e| MeesError::NonFinite(format!("step {steps}: {e}")))?;
        let st = env.step(&action)?;
        steps += 1;
        obs = st.obs;
        if st.done {
            break;
        }
    }
    let (fitness, bc) = env.descriptors();
    Ok(Episode { fitness, bc, steps })
}

/// Policy-in-environment evaluator: a fresh environment instance per
/// episode, so calls are independent and safe to run in parallel.
#[derive(Debug, Clone)]
pub struct RolloutEvaluator {
    pub def: EnvDef,
    pub spec: PolicySpec,
    pub norm: ObsNormalizer,
}

impl RolloutEvaluator {
    pub fn new(def: EnvDef, spec: PolicySpec, norm: ObsNormalizer) -> Result<Self, MeesError> {
        if spec.obs_dim != def.obs_dim() || spec.act_dim != def.act_dim() {
            return Err(MeesError::InvalidArgument(format!(
                "policy is {}->{} but environment wants {}->{}",
                spec.obs_dim,
                spec.act_dim,
                def.obs_dim(),
                def.act_dim()
            )));
        }
        Ok(Self { def, spec, norm })
    }
}

impl EpisodeEvaluator for RolloutEvaluator {
    fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    fn bc_dim(&self) -> usize {
        self.def.bc_dim()
    }

    fn evaluate(&self, flat: &[f64], seed: u64) -> Result<Episode, MeesError> {
        let params = PolicyParams::from_flat(self.spec.clone(), flat.to_vec())?;
        let mut env = self.def.instantiate();
        rollout(env.as_mut(), &params, &self.norm, seed)
    }
}

/// Closed-form stand-in used by optimizer tests: fitness is the negative
/// squared distance to a target vector, the behavior descriptor is the
/// first two parameters.
#[derive(Debug, Clone)]
pub struct SphereEvaluator {
    pub target: Vec<f64>,
}

impl EpisodeEvaluator for SphereEvaluator {
    fn param_count(&self) -> usize {
        self.target.len()
    }

    fn bc_dim(&self) -> usize {
        2
    }

    fn evaluate(&self, flat: &[f64], _seed: u64) -> Result<Episode, MeesError> {
        if flat.len() != self.target.len() {
            return Err(MeesError::InvalidArgument("sphere dimension mismatch".into()));
        }
        let fitness =
            -flat.iter().zip(&self.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        Ok(Episode { fitness, bc: flat[..2].to_vec(), steps: 1 })
    }
}

/// Averages fitness and BC over n_eval episodes with consecutive derived
/// seeds (base_seed + e).
pub fn evaluate_robust(
    evaluator: &dyn EpisodeEvaluator,
    flat: &[f64],
    n_eval: usize,
    base_seed: u64,
) -> Result<(f64, Vec<f64>), MeesError> {
    if n_eval == 0 {
        return Err(MeesError::InvalidArgument("n_eval must be >= 1".into()));
    }
    let results: Vec<Result<Episode, MeesError>> = (0..n_eval)
        .into_par_iter()
        .map(|e| evaluator.evaluate(flat, base_seed.wrapping_add(e as u64)))
        .collect();
    let mut fitness = 0.0;
    let mut bc = vec![0.0; evaluator.bc_dim()];
    let mut episodes = Vec::with_capacity(n_eval);
    for r in results {
        episodes.push(r?);
    }
    for ep in &episodes {
        fitness += ep.fitness;
        for (acc, &x) in bc.iter_mut().zip(&ep.bc) {
            *acc += x;
        }
    }
    fitness /= n_eval as f64;
    for x in &mut bc {
        *x /= n_eval as f64;
    }
    Ok((fitness, bc))
}

/// Gathers frozen observation statistics from random-action rollouts.
pub fn collect_vbn_stats(
    def: &EnvDef,
    n_rollouts: usize,
    seed: u64,
) -> Result<ObsNormalizer, MeesError> {
    if n_rollouts == 0 {
        return Err(MeesError::InvalidArgument("n_rollouts must be >= 1".into()));
    }
    let mut env = def.instantiate();
    let mut samples = Vec::new();
    for r in 0..n_rollouts {
        let ep_seed = seeds::derive_indexed(seed, "vbn", r as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
        let obs = env.reset(ep_seed);
        samples.push(obs);
        for _ in 0..env.max_steps() {
            let action: Vec<f64> =
                (0..env.act_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let st = env.step(&action)?;
            samples.push(st.obs);
            if st.done {
                break;
            }
        }
    }
    ObsNormalizer::from_samples(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ArmConfig, FieldConfig};
    use crate::policy::{init_policy, InitScheme, STD_FLOOR};

    struct SeedEcho {
        base: u64,
    }

    impl EpisodeEvaluator for SeedEcho {
        fn param_count(&self) -> usize {
            1
        }

        fn bc_dim(&self) -> usize {
            2
        }

        fn evaluate(&self, _flat: &[f64], seed: u64) -> Result<Episode, MeesError> {
            let e = seed.wrapping_sub(self.base) as f64;
            Ok(Episode { fitness: e, bc: vec![e, -e], steps: 1 })
        }
    }

    #[test]
    fn robust_eval_means() {
        let ev = SeedEcho { base: 100 };
        let (f, bc) = evaluate_robust(&ev, &[0.0], 3, 100).unwrap();
        assert_eq!(f, 1.0);
        assert_eq!(bc, vec![1.0, -1.0]);
    }

    #[test]
    fn robust_eval_rejects_zero_episodes() {
        let ev = SeedEcho { base: 0 };
        assert!(evaluate_robust(&ev, &[0.0], 0, 0).is_err());
    }

    #[test]
    fn robust_eval_on_deterministic_env_equals_single_episode() {
        let def = EnvDef::deceptive_field(FieldConfig::default()).unwrap();
        let spec = PolicySpec::with_hidden(4, 2, vec![8]);
        let norm = ObsNormalizer::identity(4);
        let ev = RolloutEvaluator::new(def, spec.clone(), norm).unwrap();
        let params = init_policy(&spec, 3, InitScheme::NormColumns).unwrap();
        let single = ev.evaluate(&params.flat, 77).unwrap();
        let (f, bc) = evaluate_robust(&ev, &params.flat, 30, 77).unwrap();
        assert!((f - single.fitness).abs() < 1e-12);
        for (a, b) in bc.iter().zip(&single.bc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_policy_stays_at_start() {
        let def = EnvDef::deceptive_field(FieldConfig::default()).unwrap();
        let spec = PolicySpec::with_hidden(4, 2, vec![8]);
        let ev =
            RolloutEvaluator::new(def, spec.clone(), ObsNormalizer::identity(4)).unwrap();
        let zeros = vec![0.0; spec.param_count()];
        let ep = ev.evaluate(&zeros, 0).unwrap();
        assert_eq!(ep.fitness, 0.0);
        assert_eq!(ep.bc, vec![0.0, 0.0]);
        assert_eq!(ep.steps, 200);
    }

    #[test]
    fn rollout_dimension_check() {
        let def = EnvDef::deceptive_field(FieldConfig::default()).unwrap();
        let spec = PolicySpec::with_hidden(3, 2, vec![4]);
        assert!(RolloutEvaluator::new(def, spec, ObsNormalizer::identity(3)).is_err());
    }

    #[test]
    fn vbn_stats_on_constant_obs_env() {
        let def = EnvDef::redundant_arm(ArmConfig::default()).unwrap();
        let norm = collect_vbn_stats(&def, 5, 1).unwrap();
        assert_eq!(norm.mean, vec![1.0; 8]);
        assert_eq!(norm.std, vec![STD_FLOOR; 8]);
    }

    #[test]
    fn vbn_stats_deterministic() {
        let def = EnvDef::deceptive_field(FieldConfig::default()).unwrap();
        let a = collect_vbn_stats(&def, 3, 42).unwrap();
        let b = collect_vbn_stats(&def, 3, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.std.iter().all(|&s| s >= STD_FLOOR));
    }

    #[test]
    fn sphere_evaluator_descriptors() {
        let ev = SphereEvaluator { target: vec![1.0, 2.0, 3.0] };
        let ep = ev.evaluate(&[1.0, 2.0, 3.0], 0).unwrap();
        assert_eq!(ep.fitness, 0.0);
        assert_eq!(ep.bc, vec![1.0, 2.0]);
        let ep2 = ev.evaluate(&[0.0, 2.0, 3.0], 0).unwrap();
        assert_eq!(ep2.fitness, -1.0);
    }
}
