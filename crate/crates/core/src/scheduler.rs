//! Outer optimization loop: pick a mode and a starting cell at bout
//! boundaries, run one ES generation per step with the mode's objective,
//! robustly evaluate the moved center, and offer it to the map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::MeesError;
use crate::es::{es_generation, AdamState, ESConfig, NoiseTable};
use crate::evaluate::{evaluate_robust, EpisodeEvaluator};
use crate::map::{BehaviorMap, Elite, GridSpec};
use crate::novelty::NoveltyArchive;
use crate::policy::{PolicyParams, PolicySpec};
use crate::seeds;

/// Which objectives a run may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Exploit,
    Explore,
    ExploreExploit,
}

/// Objective driving the current bout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Explore,
    Exploit,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Explore => "explore",
            Mode::Exploit => "exploit",
        }
    }
}

/// Mode for the bout starting at `generation`. Single-objective variants
/// never switch; the alternating variant starts with explore.
pub fn explore_or_exploit(variant: Variant, generation: u64, n_optim_gens: u64) -> Mode {
    match variant {
        Variant::Exploit => Mode::Exploit,
        Variant::Explore => Mode::Explore,
        Variant::ExploreExploit => {
            if (generation / n_optim_gens) % 2 == 0 {
                Mode::Explore
            } else {
                Mode::Exploit
            }
        }
    }
}

/// Novelty-proportional draw among the (up to) five most novel elites.
pub fn sample_explore_cell(map: &BehaviorMap, rng: &mut impl Rng) -> Vec<usize> {
    assert!(!map.is_empty(), "explore sampling needs a populated map");
    let mut ranked: Vec<(&Vec<usize>, f64)> =
        map.elites().map(|(cell, e)| (cell, e.novelty)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite novelty").then(a.0.cmp(b.0)));
    ranked.truncate(5);
    let total: f64 = ranked.iter().map(|&(_, n)| n).sum();
    if !(total > 0.0) || !total.is_finite() {
        return ranked[rng.gen_range(0..ranked.len())].0.clone();
    }
    let mut draw = rng.gen_range(0.0..total);
    for &(cell, n) in &ranked {
        draw -= n;
        if draw < 0.0 {
            return cell.clone();
        }
    }
    ranked.last().expect("nonempty").0.clone()
}

/// Even split between the two best cells overall and the two best among
/// the last five distinct updated cells.
pub fn sample_exploit_cell(map: &BehaviorMap, rng: &mut impl Rng) -> Vec<usize> {
    assert!(!map.is_empty(), "exploit sampling needs a populated map");
    let top_two = |mut pool: Vec<(&Vec<usize>, f64)>| -> Vec<Vec<usize>> {
        pool.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite fitness").then(a.0.cmp(b.0)));
        pool.truncate(2);
        pool.into_iter().map(|(c, _)| c.clone()).collect()
    };
    let candidates = if rng.gen_bool(0.5) {
        top_two(map.elites().map(|(cell, e)| (cell, e.fitness)).collect())
    } else {
        let mut recent: Vec<&Vec<usize>> = Vec::new();
        for (_, cell) in map.update_log().iter().rev() {
            if !recent.contains(&cell) {
                recent.push(cell);
                if recent.len() == 5 {
                    break;
                }
            }
        }
        top_two(
            recent
                .into_iter()
                .filter_map(|cell| map.get(cell).map(|e| (cell, e.fitness)))
                .collect(),
        )
    };
    candidates[rng.gen_range(0..candidates.len())].clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeesConfig {
    pub variant: Variant,
    pub n_gens: u64,
    pub n_optim_gens: u64,
    pub n_eval: usize,
    pub novelty_k: usize,
    pub es: ESConfig,
    pub seed: u64,
}

impl MeesConfig {
    pub fn new(variant: Variant, n_gens: u64, es: ESConfig, seed: u64) -> Self {
        Self { variant, n_gens, n_optim_gens: 10, n_eval: 30, novelty_k: 10, es, seed }
    }

    pub fn validate(&self) -> Result<(), MeesError> {
        if self.n_optim_gens == 0 {
            return Err(MeesError::InvalidArgument("n_optim_gens must be >= 1".into()));
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

/// One metrics row, emitted per generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenRow {
    pub generation: u64,
    pub mode: Mode,
    pub episodes_total: u64,
    pub coverage: usize,
    pub best_fitness: f64,
    pub center_fitness: f64,
    pub center_novelty: f64,
}

/// Live state of a run; everything needed to continue or checkpoint it.
pub struct Scheduler {
    pub cfg: MeesConfig,
    pub policy_spec: PolicySpec,
    pub map: BehaviorMap,
    pub archive: NoveltyArchive,
    pub center: Vec<f64>,
    pub adam: AdamState,
    pub mode: Mode,
    pub generation: u64,
    pub episode_counter: u64,
    pub noise: NoiseTable,
    pub sampler_seed: u64,
    pub rng: ChaCha8Rng,
}

impl Scheduler {
    /// Evaluates θ0, seeds the map and the novelty archive with it, and
    /// readies generation 0. The initial evaluation is free of charge for
    /// the episode counter, which tracks per-generation cost only.
    pub fn init(
        cfg: MeesConfig,
        policy_spec: PolicySpec,
        grid: GridSpec,
        evaluator: &dyn EpisodeEvaluator,
        theta0: Vec<f64>,
    ) -> Result<Self, MeesError> {
        cfg.validate()?;
        if theta0.len() != evaluator.param_count()
            || policy_spec.param_count() != evaluator.param_count()
        {
            return Err(MeesError::InvalidArgument(format!(
                "parameter counts disagree: theta0 {}, policy {}, evaluator {}",
                theta0.len(),
                policy_spec.param_count(),
                evaluator.param_count()
            )));
        }
        let sampler_seed = seeds::derive(cfg.seed, "sampler");
        let noise = NoiseTable::new(seeds::derive(cfg.seed, "noise"));
        let mut map = BehaviorMap::new(grid);
        let mut archive = NoveltyArchive::new(cfg.novelty_k)?;
        let (fitness, bc) =
            evaluate_robust(evaluator, &theta0, cfg.n_eval, seeds::derive(cfg.seed, "init_eval"))?;
        // The first BC enters the archive before its novelty is read, so
        // the score is 0 rather than the empty-archive infinity, which
        // would poison novelty-proportional sampling.
        archive.add_bc(bc.clone())?;
        let novelty = archive.novelty(&bc);
        map.try_insert(Elite {
            params: PolicyParams::from_flat(policy_spec.clone(), theta0.clone())?,
            fitness,
            bc,
            novelty,
            gen_added: 0,
        })?;
        let dim = theta0.len();
        Ok(Self {
            cfg,
            policy_spec,
            map,
            archive,
            center: theta0,
            adam: AdamState::new(dim),
            mode: Mode::Exploit,
            generation: 0,
            episode_counter: 0,
            noise,
            sampler_seed,
            rng: ChaCha8Rng::seed_from_u64(sampler_seed),
        })
    }

    /// Runs one generation and reports its metrics row.
    pub fn generation(&mut self, evaluator: &dyn EpisodeEvaluator) -> Result<GenRow, MeesError> {
        let gen = self.generation;
        let cfg_n = self.cfg.es.pop_size;
        if gen % self.cfg.n_optim_gens == 0 {
            self.mode = explore_or_exploit(self.cfg.variant, gen, self.cfg.n_optim_gens);
            let cell = match self.mode {
                Mode::Explore => sample_explore_cell(&self.map, &mut self.rng),
                Mode::Exploit => sample_exploit_cell(&self.map, &mut self.rng),
            };
            let elite = self.map.get(&cell).expect("sampled cell is populated");
            self.center = elite.params.flat.clone();
            self.adam = AdamState::new(self.center.len());
        }
        let run_seed = self.cfg.seed;
        let archive = &self.archive;
        let mode = self.mode;
        let step = es_generation(
            &self.center,
            &self.cfg.es,
            &self.noise,
            &mut self.adam,
            gen,
            |j, theta| {
                let ep_seed =
                    seeds::derive_indexed(run_seed, "offspring", gen * cfg_n as u64 + j as u64);
                let ep = evaluator.evaluate(theta, ep_seed)?;
                Ok(match mode {
                    Mode::Exploit => ep.fitness,
                    Mode::Explore => archive.novelty(&ep.bc),
                })
            },
        )?;
        self.center = step.center;
        self.episode_counter += cfg_n as u64;
        let (fitness, bc) = evaluate_robust(
            evaluator,
            &self.center,
            self.cfg.n_eval,
            seeds::derive_indexed(run_seed, "center_eval", gen),
        )?;
        self.episode_counter += self.cfg.n_eval as u64;
        let center_novelty = self.archive.novelty(&bc);
        self.map.try_insert(Elite {
            params: PolicyParams::from_flat(self.policy_spec.clone(), self.center.clone())?,
            fitness,
            bc: bc.clone(),
            novelty: center_novelty,
            gen_added: gen,
        })?;
        self.archive.add_bc(bc)?;
        self.generation += 1;
        let stats = self.map.stats();
        Ok(GenRow {
            generation: gen,
            mode: self.mode,
            episodes_total: self.episode_counter,
            coverage: stats.coverage,
            best_fitness: stats.best_fitness,
            center_fitness: fitness,
            center_novelty,
        })
    }

    /// Runs generations until n_gens, collecting one row each.
    pub fn run(&mut self, evaluator: &dyn EpisodeEvaluator) -> Result<Vec<GenRow>, MeesError> {
        let mut rows = Vec::new();
        while self.generation < self.cfg.n_gens {
            rows.push(self.generation(evaluator)?);
        }
        Ok(rows)
    }
}
