//! Turns a validated run config into a finished experiment: builds the
//! environment, policy, and evaluator, drives the selected algorithm
//! generation by generation, and writes metrics, checkpoints, and the
//! final elite archive. Also hosts the damage-adaptation entry point.

use std::fs;
use std::path::{Path, PathBuf};

use crate::adaptation::{mboa_run, MboaConfig, Recovery, TrialRow};
use crate::baselines::{MegaState, NsState};
use crate::config::{Algorithm, RunConfig};
use crate::env::DamageSpec;
use crate::error::MeesError;
use crate::evaluate::{collect_vbn_stats, evaluate_robust, RolloutEvaluator};
use crate::map::BehaviorMap;
use crate::persist::{
    self, ArchiveFile, MetricsRow, MetricsWriter,
};
use crate::policy::init_policy;
use crate::scheduler::Scheduler;
use crate::seeds;

/// Where a finished run left its outputs, plus headline stats.
#[derive(Debug)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub archive_path: PathBuf,
    pub metrics_path: PathBuf,
    pub coverage: usize,
    pub best_fitness: f64,
    pub rows: Vec<MetricsRow>,
}

/// Runs a closure inside a worker pool of the requested size; 0 keeps
/// the machine default.
pub fn in_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool")
            .install(f)
    }
}

enum AlgoState {
    Mees(Scheduler),
    Mega(MegaState),
    Ns(NsState),
}

impl AlgoState {
    fn init(cfg: &RunConfig, evaluator: &RolloutEvaluator) -> Result<Self, MeesError> {
        let spec = cfg.policy_spec()?;
        let grid = cfg.grid_spec()?;
        match cfg.algorithm {
            Algorithm::MeEsExploit | Algorithm::MeEsExplore | Algorithm::MeEsExploreExploit => {
                let theta0 =
                    init_policy(&spec, seeds::derive(cfg.seed, "init"), cfg.policy.init)?.flat;
                Ok(Self::Mees(Scheduler::init(cfg.mees_config(), spec, grid, evaluator, theta0)?))
            }
            Algorithm::MeGa => {
                let theta0 =
                    init_policy(&spec, seeds::derive(cfg.seed, "init"), cfg.policy.init)?.flat;
                Ok(Self::Mega(MegaState::init(cfg.mega_config(), spec, grid, evaluator, theta0)?))
            }
            Algorithm::NsEs | Algorithm::NsrEs | Algorithm::NsraEs => {
                let mode = cfg.algorithm.ns_mode().expect("ns algorithm");
                let ns_cfg = cfg.ns_config(mode);
                let members: Vec<Vec<f64>> = (0..ns_cfg.population)
                    .map(|m| {
                        init_policy(
                            &spec,
                            seeds::derive_indexed(cfg.seed, "member_init", m as u64),
                            cfg.policy.init,
                        )
                        .map(|p| p.flat)
                    })
                    .collect::<Result<_, _>>()?;
                Ok(Self::Ns(NsState::init(ns_cfg, spec, grid, evaluator, members)?))
            }
        }
    }

    fn load(cfg: &RunConfig, path: &Path, hash: u64) -> Result<Self, MeesError> {
        match cfg.algorithm {
            Algorithm::MeEsExploit | Algorithm::MeEsExplore | Algorithm::MeEsExploreExploit => Ok(
                Self::Mees(persist::load_scheduler_checkpoint(path, cfg.mees_config(), hash)?),
            ),
            Algorithm::MeGa => {
                Ok(Self::Mega(persist::load_mega_checkpoint(path, cfg.mega_config(), hash)?))
            }
            Algorithm::NsEs | Algorithm::NsrEs | Algorithm::NsraEs => {
                let mode = cfg.algorithm.ns_mode().expect("ns algorithm");
                Ok(Self::Ns(persist::load_ns_checkpoint(path, cfg.ns_config(mode), hash)?))
            }
        }
    }

    fn save(&self, path: &Path, hash: u64) -> Result<(), MeesError> {
        match self {
            Self::Mees(s) => persist::save_scheduler_checkpoint(path, s, hash),
            Self::Mega(s) => persist::save_mega_checkpoint(path, s, hash),
            Self::Ns(s) => persist::save_ns_checkpoint(path, s, hash),
        }
    }

    fn generation(&self) -> u64 {
        match self {
            Self::Mees(s) => s.generation,
            Self::Mega(s) => s.generation,
            Self::Ns(s) => s.generation,
        }
    }

    fn step(&mut self, evaluator: &RolloutEvaluator) -> Result<MetricsRow, MeesError> {
        match self {
            Self::Mees(s) => Ok((&s.generation(evaluator)?).into()),
            Self::Mega(s) => Ok((&s.generation(evaluator)?).into()),
            Self::Ns(s) => Ok((&s.generation(evaluator)?).into()),
        }
    }

    fn map(&self) -> &BehaviorMap {
        match self {
            Self::Mees(s) => &s.map,
            Self::Mega(s) => &s.map,
            Self::Ns(s) => &s.map,
        }
    }
}

/// Executes the configured run from scratch, or continues it from a
/// checkpoint file. Everything lands under `cfg.output_dir`.
pub fn run(cfg: &RunConfig, resume_from: Option<&Path>) -> Result<RunArtifacts, MeesError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let out = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.canonical_toml())?;
    let metrics_path = out.join("metrics.csv");
    let archive_path = out.join("archive.txt");
    let checkpoint_path = out.join("checkpoint.txt");
    let def = cfg.env_def()?;
    let spec = cfg.policy_spec()?;
    let env = cfg.env;

    in_pool(cfg.workers, move || {
        let norm = collect_vbn_stats(&def, cfg.policy.vbn_rollouts, seeds::derive(cfg.seed, "vbn"))?;
        let evaluator = RolloutEvaluator::new(def, spec.clone(), norm)?;
        let (mut state, mut metrics) = match resume_from {
            Some(p) => {
                let st = AlgoState::load(cfg, p, hash)?;
                let w = if st.generation() == 0 {
                    MetricsWriter::create(&metrics_path)?
                } else {
                    MetricsWriter::resume(&metrics_path, st.generation() - 1)?
                };
                (st, w)
            }
            None => (AlgoState::init(cfg, &evaluator)?, MetricsWriter::create(&metrics_path)?),
        };
        let mut rows = Vec::new();
        while state.generation() < cfg.n_gens {
            let row = state.step(&evaluator)?;
            metrics.append(&row)?;
            rows.push(row);
            if cfg.checkpoint_every > 0 && state.generation() % cfg.checkpoint_every == 0 {
                state.save(&checkpoint_path, hash)?;
            }
        }
        persist::write_archive(&archive_path, state.map(), env, hash, &spec)?;
        if cfg.checkpoint_every > 0 {
            state.save(&checkpoint_path, hash)?;
        }
        let stats = state.map().stats();
        Ok(RunArtifacts {
            output_dir: out,
            archive_path,
            metrics_path,
            coverage: stats.coverage,
            best_fitness: stats.best_fitness,
            rows,
        })
    })
}

/// Everything the adaptation command reports.
#[derive(Debug)]
pub struct AdaptArtifacts {
    pub recovery: Recovery,
    pub trials: Vec<TrialRow>,
    /// Stored fitness of the map's best cell before damage.
    pub pre_damage_best_fitness: f64,
    /// The same controller measured on the damaged system.
    pub damaged_baseline_fitness: f64,
    /// The recovered controller on the damaged system; None with a zero
    /// trial budget.
    pub post_adaptation_fitness: Option<f64>,
}

/// Adaptation loop against a damaged environment, driven by a stored
/// archive and the config that produced it.
pub fn adapt(
    cfg: &RunConfig,
    archive: &ArchiveFile,
    damage: DamageSpec,
    mboa: &MboaConfig,
    workers: usize,
) -> Result<AdaptArtifacts, MeesError> {
    cfg.validate()?;
    if cfg.hash() != archive.config_hash {
        return Err(MeesError::Persist(format!(
            "archive was written by a different configuration \
             (archive {:016x}, current {:016x})",
            archive.config_hash,
            cfg.hash()
        )));
    }
    let damaged = cfg.env_def()?.with_damage(damage)?;
    in_pool(workers, move || {
        let norm =
            collect_vbn_stats(&cfg.env_def()?, cfg.policy.vbn_rollouts, seeds::derive(cfg.seed, "vbn"))?;
        let evaluator = RolloutEvaluator::new(damaged, archive.policy_spec.clone(), norm)?;
        let stats = archive.map.stats();
        let best_cell = stats.best_cell.as_ref().expect("archive is non-empty").clone();
        let best = archive.map.get(&best_cell).expect("best cell is populated");
        let (damaged_baseline_fitness, _) = evaluate_robust(
            &evaluator,
            &best.params.flat,
            mboa.n_eval,
            seeds::derive(mboa.seed, "baseline"),
        )?;
        let (recovery, trials) = mboa_run(&archive.map, &evaluator, mboa)?;
        Ok(AdaptArtifacts {
            pre_damage_best_fitness: best.fitness,
            damaged_baseline_fitness,
            post_adaptation_fitness: recovery.measured_fitness,
            recovery,
            trials,
        })
    })
}

/// Renders an adaptation trial log as CSV.
pub fn trials_to_csv(trials: &[TrialRow]) -> String {
    let mut out = String::from("trial,cell,prior_mean,posterior_mean,measured_fitness\n");
    for t in trials {
        let cell =
            t.cell.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("|");
        let measured = t.measured_fitness.map(|f| f.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            t.trial, cell, t.prior_mean, t.posterior_mean, measured
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn arm_config(dir: &Path, algorithm: &str, n_gens: u64) -> RunConfig {
        let text = format!(
            "algorithm = \"{algorithm}\"\n\
             env = \"redundant_arm\"\n\
             seed = 3\n\
             n_gens = {n_gens}\n\
             output_dir = \"{}\"\n\
             [policy]\n\
             hidden = [4]\n\
             vbn_rollouts = 2\n\
             [es]\n\
             pop_size = 8\n\
             [mees]\n\
             n_optim_gens = 2\n\
             n_eval = 2\n\
             [ns]\n\
             n_eval = 2\n\
             [mega]\n\
             controllers_per_gen = 6\n\
             n_eval = 2\n",
            dir.display()
        );
        RunConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn zero_generation_run_archives_the_initial_elite() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = arm_config(dir.path(), "me_es_explore_exploit", 0);
        let art = run(&cfg, None).unwrap();
        assert_eq!(art.rows.len(), 0);
        assert_eq!(art.coverage, 1);
        let archive = persist::read_archive(&art.archive_path).unwrap();
        assert_eq!(archive.map.len(), 1);
        assert_eq!(archive.config_hash, cfg.hash());
    }

    #[test]
    fn run_produces_consistent_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = arm_config(dir.path(), "me_es_explore_exploit", 4);
        let art = run(&cfg, None).unwrap();
        assert_eq!(art.rows.len(), 4);
        let metrics = persist::read_metrics(&art.metrics_path).unwrap();
        assert_eq!(metrics, art.rows);
        let archive = persist::read_archive(&art.archive_path).unwrap();
        assert_eq!(archive.map.stats().coverage, art.coverage);
        assert!(art.rows.iter().all(|r| r.episodes_total % 10 == 0));
    }

    #[test]
    fn identical_configs_yield_identical_metrics_bytes() {
        let run_once = |workers: usize| {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = arm_config(dir.path(), "nsra_es", 3);
            cfg.workers = workers;
            let art = run(&cfg, None).unwrap();
            std::fs::read_to_string(&art.metrics_path).unwrap()
        };
        let a = run_once(1);
        let b = run_once(4);
        let c = run_once(8);
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn workers_do_not_change_config_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = arm_config(dir.path(), "me_ga", 2);
        let mut b = a.clone();
        a.workers = 1;
        b.workers = 8;
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        for algorithm in ["me_es_explore_exploit", "me_ga", "nsra_es"] {
            let full_dir = tempfile::tempdir().unwrap();
            let full_cfg = arm_config(full_dir.path(), algorithm, 6);
            let full = run(&full_cfg, None).unwrap();
            let full_bytes = std::fs::read_to_string(&full.metrics_path).unwrap();
            let full_archive = std::fs::read_to_string(&full.archive_path).unwrap();

            let part_dir = tempfile::tempdir().unwrap();
            let mut part_cfg = arm_config(part_dir.path(), algorithm, 3);
            part_cfg.checkpoint_every = 3;
            run(&part_cfg, None).unwrap();
            let checkpoint = part_dir.path().join("checkpoint.txt");
            let mut resumed_cfg = part_cfg.clone();
            resumed_cfg.n_gens = 6;
            let resumed = run(&resumed_cfg, Some(&checkpoint)).unwrap();
            let resumed_bytes = std::fs::read_to_string(&resumed.metrics_path).unwrap();
            let resumed_archive = std::fs::read_to_string(&resumed.archive_path).unwrap();

            assert_eq!(full_bytes, resumed_bytes, "{algorithm} metrics diverged");
            assert_eq!(full_archive, resumed_archive, "{algorithm} archive diverged");
        }
    }

    #[test]
    fn adapt_recovers_on_the_arm() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = arm_config(dir.path(), "me_es_explore_exploit", 6);
        let art = run(&cfg, None).unwrap();
        let archive = persist::read_archive(&art.archive_path).unwrap();
        let damage = DamageSpec::single(0, 0.6);
        let mboa = MboaConfig { n_eval: 2, max_trials: 10, seed: 5, ..MboaConfig::default() };
        let result = adapt(&cfg, &archive, damage, &mboa, 0).unwrap();
        assert!(!result.trials.is_empty());
        let post = result.post_adaptation_fitness.unwrap();
        assert!(post >= result.trials.iter().filter_map(|t| t.measured_fitness).fold(f64::NEG_INFINITY, f64::max) - 1e-12);
        let csv = trials_to_csv(&result.trials);
        assert!(csv.starts_with("trial,cell,prior_mean,posterior_mean,measured_fitness\n"));
        assert_eq!(csv.lines().count(), result.trials.len() + 1);
    }

    #[test]
    fn adapt_rejects_mismatched_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = arm_config(dir.path(), "me_es_explore_exploit", 1);
        let art = run(&cfg, None).unwrap();
        let archive = persist::read_archive(&art.archive_path).unwrap();
        let mut other = cfg.clone();
        other.seed = 77;
        let err = adapt(&other, &archive, DamageSpec::single(0, 0.6), &MboaConfig::default(), 0)
            .err()
            .expect("mismatched config must fail");
        assert!(err.to_string().contains("configuration"), "{err}");
    }

    #[test]
    fn no_op_damage_reproduces_stored_fitness() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = arm_config(dir.path(), "me_es_explore_exploit", 4);
        let art = run(&cfg, None).unwrap();
        let archive = persist::read_archive(&art.archive_path).unwrap();
        let damage = DamageSpec { frozen_joints: Default::default(), frozen_value: 0.0 };
        let mboa = MboaConfig { n_eval: 2, max_trials: 5, seed: 9, ..MboaConfig::default() };
        let result = adapt(&cfg, &archive, damage, &mboa, 0).unwrap();
        let stored_best = archive.map.stats().best_fitness;
        assert!(
            (result.damaged_baseline_fitness - stored_best).abs() < 1e-9,
            "undamaged arm must reproduce stored fitness: {} vs {stored_best}",
            result.damaged_baseline_fitness
        );
        let post = result.post_adaptation_fitness.unwrap();
        assert!((post - stored_best).abs() < 1e-9);
        assert!(result.trials.len() <= 2);
    }
}
