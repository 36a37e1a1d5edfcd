//! Comparison algorithms sharing the ES building blocks: a map-based GA
//! and the novelty-search ES family (pure novelty, fixed mix, adaptive
//! mix).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MeesError;
use crate::es::{es_generation, es_generation_mixed, AdamState, ESConfig, NoiseTable};
use crate::evaluate::{evaluate_robust, EpisodeEvaluator};
use crate::map::{BehaviorMap, Elite, GridSpec};
use crate::novelty::NoveltyArchive;
use crate::policy::{PolicyParams, PolicySpec};
use crate::seeds;

/// Map-based GA settings. Mutation matches the ES noise scale so the two
/// archive-filling algorithms differ only in their optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MegaConfig {
    pub controllers_per_gen: usize,
    pub mutation_std: f64,
    pub n_eval: usize,
    pub n_gens: u64,
    pub seed: u64,
}

impl Default for MegaConfig {
    fn default() -> Self {
        Self { controllers_per_gen: 334, mutation_std: 0.02, n_eval: 30, n_gens: 0, seed: 0 }
    }
}

impl MegaConfig {
    pub fn validate(&self) -> Result<(), MeesError> {
        if self.controllers_per_gen == 0 {
            return Err(MeesError::InvalidArgument("controllers_per_gen must be >= 1".into()));
        }
        if !(self.mutation_std > 0.0) {
            return Err(MeesError::InvalidArgument("mutation_std must be > 0".into()));
        }
        if self.n_eval == 0 {
            return Err(MeesError::InvalidArgument("n_eval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Metrics row shared by the baseline drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub generation: u64,
    pub mode: &'static str,
    pub episodes_total: u64,
    pub coverage: usize,
    pub best_fitness: f64,
    pub center_fitness: f64,
    pub center_novelty: f64,
    pub nsra_weight: Option<f64>,
}

/// Map-based GA run state.
pub struct MegaState {
    pub cfg: MegaConfig,
    pub policy_spec: PolicySpec,
    pub map: BehaviorMap,
    pub generation: u64,
    pub episode_counter: u64,
    pub rng: ChaCha8Rng,
}

impl MegaState {
    pub fn init(
        cfg: MegaConfig,
        policy_spec: PolicySpec,
        grid: GridSpec,
        evaluator: &dyn EpisodeEvaluator,
        theta0: Vec<f64>,
    ) -> Result<Self, MeesError> {
        cfg.validate()?;
        let mut map = BehaviorMap::new(grid);
        let (fitness, bc) =
            evaluate_robust(evaluator, &theta0, cfg.n_eval, seeds::derive(cfg.seed, "init_eval"))?;
        map.try_insert(Elite {
            params: PolicyParams::from_flat(policy_spec.clone(), theta0)?,
            fitness,
            bc,
            novelty: 0.0,
            gen_added: 0,
        })?;
        let rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, "sampler"));
        Ok(Self { cfg, policy_spec, map, generation: 0, episode_counter: 0, rng })
    }

    /// One generation: mutate uniformly sampled elites, robustly evaluate
    /// each child, offer all of them to the map.
    pub fn generation(&mut self, evaluator: &dyn EpisodeEvaluator) -> Result<BaselineRow, MeesError> {
        let gen = self.generation;
        let n = self.cfg.controllers_per_gen;
        let cells: Vec<Vec<usize>> = self.map.elites().map(|(c, _)| c.clone()).collect();
        let parents: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let cell = &cells[self.rng.gen_range(0..cells.len())];
                self.map.get(cell).expect("listed cell").params.flat.clone()
            })
            .collect();
        let seed = self.cfg.seed;
        let n_eval = self.cfg.n_eval;
        let results: Vec<Result<(Vec<f64>, f64, Vec<f64>), MeesError>> = parents
            .into_par_iter()
            .enumerate()
            .map(|(c, parent)| {
                let idx = gen * n as u64 + c as u64;
                let mut noise =
                    ChaCha8Rng::seed_from_u64(seeds::derive_indexed(seed, "mutation", idx));
                let child: Vec<f64> = parent
                    .iter()
                    .map(|&p| {
                        let e: f64 = StandardNormal.sample(&mut noise);
                        p + self.cfg.mutation_std * e
                    })
                    .collect();
                let (fitness, bc) = evaluate_robust(
                    evaluator,
                    &child,
                    n_eval,
                    seeds::derive_indexed(seed, "mega_eval", idx),
                )?;
                Ok((child, fitness, bc))
            })
            .collect();
        let mut gen_best = f64::NEG_INFINITY;
        for r in results {
            let (child, fitness, bc) = r?;
            gen_best = gen_best.max(fitness);
            self.map.try_insert(Elite {
                params: PolicyParams::from_flat(self.policy_spec.clone(), child)?,
                fitness,
                bc,
                novelty: 0.0,
                gen_added: gen,
            })?;
        }
        self.episode_counter += (n * n_eval) as u64;
        self.generation += 1;
        let stats = self.map.stats();
        Ok(BaselineRow {
            generation: gen,
            mode: "mega",
            episodes_total: self.episode_counter,
            coverage: stats.coverage,
            best_fitness: stats.best_fitness,
            center_fitness: gen_best,
            center_novelty: 0.0,
            nsra_weight: None,
        })
    }

    pub fn run(&mut self, evaluator: &dyn EpisodeEvaluator) -> Result<Vec<BaselineRow>, MeesError> {
        let mut rows = Vec::new();
        while self.generation < self.cfg.n_gens {
            rows.push(self.generation(evaluator)?);
        }
        Ok(rows)
    }
}

/// Which objective mix the ES family member uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsMode {
    /// Pure novelty.
    Ns,
    /// Even fitness/novelty mix.
    Nsr,
    /// Adaptive fitness/novelty mix.
    Nsra,
}

impl NsMode {
    fn label(self) -> &'static str {
        match self {
            NsMode::Ns => "ns",
            NsMode::Nsr => "nsr",
            NsMode::Nsra => "nsra",
        }
    }
}

/// Adaptive mixing weight: leans toward fitness while progress is made,
/// drifts back toward novelty after 20 stagnant generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsraWeight {
    pub w: f64,
    pub best_fitness_so_far: f64,
    pub gens_since_improvement: u32,
}

impl Default for NsraWeight {
    fn default() -> Self {
        Self { w: 0.5, best_fitness_so_far: f64::NEG_INFINITY, gens_since_improvement: 0 }
    }
}

impl NsraWeight {
    pub fn update(&mut self, current_best_fitness: f64) {
        if current_best_fitness > self.best_fitness_so_far {
            self.best_fitness_so_far = current_best_fitness;
            self.w = (self.w + 0.05).min(1.0);
            self.gens_since_improvement = 0;
        } else {
            self.gens_since_improvement += 1;
            if self.gens_since_improvement >= 20 {
                self.w = (self.w - 0.05).max(0.0);
                self.gens_since_improvement = 0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsConfig {
    pub mode: NsMode,
    pub population: usize,
    pub es: ESConfig,
    pub n_eval: usize,
    pub novelty_k: usize,
    pub n_gens: u64,
    pub seed: u64,
}

impl NsConfig {
    pub fn new(mode: NsMode, es: ESConfig, seed: u64) -> Self {
        Self { mode, population: 5, es, n_eval: 30, novelty_k: 10, n_gens: 0, seed }
    }

    pub fn validate(&self) -> Result<(), MeesError> {
        if self.population == 0 {
            return Err(MeesError::InvalidArgument("population must be >= 1".into()));
        }
        if self.n_eval == 0 {
            return Err(MeesError::InvalidArgument("n_eval must be >= 1".into()));
        }
        if self.novelty_k == 0 {
            return Err(MeesError::InvalidArgument("novelty_k must be >= 1".into()));
        }
        self.es.validate()
    }
}

/// One member of the meta-population: parameters, its own optimizer
/// moments, and its latest robust evaluation.
#[derive(Debug, Clone)]
pub struct NsMember {
    pub flat: Vec<f64>,
    pub adam: AdamState,
    pub latest_fitness: f64,
    pub latest_bc: Vec<f64>,
    pub latest_novelty: f64,
}

/// Novelty-search ES family run state. A behavior map is filled passively
/// with every robust-evaluated member so coverage and best-fitness
/// metrics stay comparable with the map-based algorithms; it never feeds
/// back into the search.
pub struct NsState {
    pub cfg: NsConfig,
    pub policy_spec: PolicySpec,
    pub members: Vec<NsMember>,
    pub archive: NoveltyArchive,
    pub weight: NsraWeight,
    pub map: BehaviorMap,
    pub generation: u64,
    pub episode_counter: u64,
    pub noise: NoiseTable,
    pub rng: ChaCha8Rng,
}

impl NsState {
    pub fn init(
        cfg: NsConfig,
        policy_spec: PolicySpec,
        grid: GridSpec,
        evaluator: &dyn EpisodeEvaluator,
        initial_members: Vec<Vec<f64>>,
    ) -> Result<Self, MeesError> {
        cfg.validate()?;
        if initial_members.len() != cfg.population {
            return Err(MeesError::InvalidArgument(format!(
                "expected {} initial members, got {}",
                cfg.population,
                initial_members.len()
            )));
        }
        let mut archive = NoveltyArchive::new(cfg.novelty_k)?;
        let mut map = BehaviorMap::new(grid);
        let mut evals = Vec::with_capacity(initial_members.len());
        for (m, flat) in initial_members.iter().enumerate() {
            let (fitness, bc) = evaluate_robust(
                evaluator,
                flat,
                cfg.n_eval,
                seeds::derive_indexed(cfg.seed, "init_eval", m as u64),
            )?;
            evals.push((fitness, bc));
        }
        // Every starting BC lands in the archive before any novelty is
        // read; no member sees the empty-archive infinity.
        for (_, bc) in &evals {
            archive.add_bc(bc.clone())?;
        }
        let mut members = Vec::with_capacity(initial_members.len());
        let mut weight = NsraWeight::default();
        for (flat, (fitness, bc)) in initial_members.into_iter().zip(evals) {
            let dim = flat.len();
            weight.best_fitness_so_far = weight.best_fitness_so_far.max(fitness);
            map.try_insert(Elite {
                params: PolicyParams::from_flat(policy_spec.clone(), flat.clone())?,
                fitness,
                bc: bc.clone(),
                novelty: 0.0,
                gen_added: 0,
            })?;
            members.push(NsMember {
                flat,
                adam: AdamState::new(dim),
                latest_fitness: fitness,
                latest_bc: bc.clone(),
                latest_novelty: archive.novelty(&bc),
            });
        }
        let rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, "sampler"));
        let noise = NoiseTable::new(seeds::derive(cfg.seed, "noise"));
        Ok(Self {
            cfg,
            policy_spec,
            members,
            archive,
            weight,
            map,
            generation: 0,
            episode_counter: 0,
            noise,
            rng,
        })
    }

    fn select_member(&mut self) -> usize {
        let weights: Vec<f64> = self.members.iter().map(|m| m.latest_novelty).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return self.rng.gen_range(0..self.members.len());
        }
        let mut draw = self.rng.gen_range(0.0..total);
        for (i, &w) in weights.iter().enumerate() {
            draw -= w;
            if draw < 0.0 {
                return i;
            }
        }
        self.members.len() - 1
    }

    pub fn generation(&mut self, evaluator: &dyn EpisodeEvaluator) -> Result<BaselineRow, MeesError> {
        let gen = self.generation;
        let n = self.cfg.es.pop_size;
        let m_idx = self.select_member();
        let run_seed = self.cfg.seed;
        let archive = &self.archive;
        let eval_offspring = |j: usize, theta: &[f64]| {
            let ep_seed = seeds::derive_indexed(run_seed, "offspring", gen * n as u64 + j as u64);
            evaluator.evaluate(theta, ep_seed)
        };
        let member = &mut self.members[m_idx];
        let step = match self.cfg.mode {
            NsMode::Ns => es_generation(
                &member.flat,
                &self.cfg.es,
                &self.noise,
                &mut member.adam,
                gen,
                |j, theta| {
                    let ep = eval_offspring(j, theta)?;
                    Ok(archive.novelty(&ep.bc))
                },
            )?,
            NsMode::Nsr | NsMode::Nsra => {
                let w = if self.cfg.mode == NsMode::Nsr { 0.5 } else { self.weight.w };
                es_generation_mixed(
                    &member.flat,
                    &self.cfg.es,
                    &self.noise,
                    &mut member.adam,
                    gen,
                    w,
                    |j, theta| {
                        let ep = eval_offspring(j, theta)?;
                        Ok((ep.fitness, archive.novelty(&ep.bc)))
                    },
                )?
            }
        };
        self.episode_counter += n as u64;
        let (fitness, bc) = evaluate_robust(
            evaluator,
            &step.center,
            self.cfg.n_eval,
            seeds::derive_indexed(run_seed, "center_eval", gen),
        )?;
        self.episode_counter += self.cfg.n_eval as u64;
        let center_novelty = self.archive.novelty(&bc);
        self.map.try_insert(Elite {
            params: PolicyParams::from_flat(self.policy_spec.clone(), step.center.clone())?,
            fitness,
            bc: bc.clone(),
            novelty: center_novelty,
            gen_added: gen,
        })?;
        let member = &mut self.members[m_idx];
        member.flat = step.center;
        member.latest_fitness = fitness;
        member.latest_bc = bc.clone();
        member.latest_novelty = center_novelty;
        self.archive.add_bc(bc)?;
        if self.cfg.mode == NsMode::Nsra {
            self.weight.update(fitness);
        }
        self.generation += 1;
        let stats = self.map.stats();
        Ok(BaselineRow {
            generation: gen,
            mode: self.cfg.mode.label(),
            episodes_total: self.episode_counter,
            coverage: stats.coverage,
            best_fitness: stats.best_fitness,
            center_fitness: fitness,
            center_novelty,
            nsra_weight: (self.cfg.mode == NsMode::Nsra).then_some(self.weight.w),
        })
    }

    pub fn run(&mut self, evaluator: &dyn EpisodeEvaluator) -> Result<Vec<BaselineRow>, MeesError> {
        let mut rows = Vec::new();
        while self.generation < self.cfg.n_gens {
            rows.push(self.generation(evaluator)?);
        }
        Ok(rows)
    }
}
