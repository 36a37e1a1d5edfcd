//! Calibration sweeps used to pin the acceptance thresholds: trap
//! benchmarks per algorithm and seed (with best-so-far traces for the
//! maze), the arm damage-recovery loop for every joint, and margin
//! scans for the gradient-recovery and sphere-convergence checks.

use std::time::Instant;

use mees::adaptation::MboaConfig;
use mees::config::RunConfig;
use mees::env::DamageSpec;
use mees::evaluate::evaluate_robust;
use mees::evaluate::{collect_vbn_stats, RolloutEvaluator};
use mees::runner;
use mees::seeds;

/// Seeds and horizon frozen into the maze acceptance benchmark.
const MAZE_SEEDS: [u64; 5] = [2, 4, 5, 8, 14];
const MAZE_GENS: u64 = 220;

fn config(env: &str, algorithm: &str, seed: u64, n_gens: u64, dir: &std::path::Path) -> RunConfig {
    let extra = match env {
        "deceptive_field" => "[deceptive_field]\nwall_half_width = 3.5\nwall_depth = 4.5\n",
        "walled_maze" => "[walled_maze]\nmax_steps = 200\n",
        _ => "",
    };
    let text = format!(
        "algorithm = \"{algorithm}\"\n\
         env = \"{env}\"\n\
         seed = {seed}\n\
         n_gens = {n_gens}\n\
         output_dir = \"{}\"\n\
         [policy]\n\
         hidden = [32, 32]\n\
         {extra}",
        dir.display()
    );
    RunConfig::from_toml(&text).unwrap()
}

fn sweep(env: &str, algorithm: &str, n_gens: u64, seeds: &[u64], trace: bool) {
    for &seed in seeds {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(env, algorithm, seed, n_gens, dir.path());
        let t0 = Instant::now();
        let art = runner::run(&cfg, None).unwrap();
        let detail = if trace {
            let points: Vec<String> = art
                .rows
                .iter()
                .filter(|r| (r.generation + 1) % 20 == 0)
                .map(|r| format!("g{}:{:.2}", r.generation + 1, r.best_fitness))
                .collect();
            format!(" [{}]", points.join(" "))
        } else {
            String::new()
        };
        println!(
            "{env} {algorithm} seed {seed}: best {:.4} coverage {}{detail} in {:.1?}",
            art.best_fitness,
            art.coverage,
            t0.elapsed()
        );
    }
}

fn arm_damage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("redundant_arm", "me_es_explore_exploit", 0, 100, dir.path());
    let t0 = Instant::now();
    let art = runner::run(&cfg, None).unwrap();
    println!(
        "arm archive: best {:.4} coverage {} in {:.1?}",
        art.best_fitness,
        art.coverage,
        t0.elapsed()
    );
    let archive = mees::persist::read_archive(&art.archive_path).unwrap();
    for joint in 0..8usize {
        let damage = DamageSpec::single(joint, 0.6);
        let damaged = cfg.env_def().unwrap().with_damage(damage.clone()).unwrap();
        let norm = collect_vbn_stats(
            &cfg.env_def().unwrap(),
            cfg.policy.vbn_rollouts,
            seeds::derive(cfg.seed, "vbn"),
        )
        .unwrap();
        let evaluator =
            RolloutEvaluator::new(damaged, archive.policy_spec.clone(), norm).unwrap();
        let mut oracle = f64::NEG_INFINITY;
        for (_, e) in archive.map.elites() {
            let (f, _) =
                evaluate_robust(&evaluator, &e.params.flat, 2, seeds::derive(7, "oracle")).unwrap();
            oracle = oracle.max(f);
        }
        let mboa = MboaConfig { n_eval: 2, max_trials: 20, seed: 7, ..MboaConfig::default() };
        let result = runner::adapt(&cfg, &archive, damage, &mboa, 0).unwrap();
        let recovered = result.post_adaptation_fitness.unwrap();
        let trials = result.trials.iter().filter(|t| t.measured_fitness.is_some()).count();
        let ok = recovered >= oracle - 0.1 * oracle.abs() - 1e-9;
        println!(
            "arm joint {joint}: oracle {oracle:.4} recovered {recovered:.4} trials {trials} ok {ok}"
        );
    }
}

fn gradient_margin() {
    use mees::es::{estimate_gradient, NoiseSource, NoiseTable};
    let dim = 50;
    let a: Vec<f64> = (0..dim)
        .map(|j| (1.0 + j as f64 / 100.0) * if j % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let sigma = 0.02;
    let n = 100_000u64;
    for master in 0..40u64 {
        let table = NoiseTable::new(master);
        let indices: Vec<u64> = (0..n).collect();
        let scores: Vec<f64> = indices
            .iter()
            .map(|&i| {
                let eps = table.perturbation(i, dim);
                sigma * a.iter().zip(&eps).map(|(&x, &e)| x * e).sum::<f64>()
            })
            .collect();
        let grad = estimate_gradient(&scores, &table, &indices, sigma, dim, 512).unwrap();
        let worst = grad
            .iter()
            .zip(&a)
            .map(|(&g, &x)| ((g - x) / x).abs())
            .fold(0.0f64, f64::max);
        println!("gradient master {master}: worst relative error {worst:.4}");
    }
}

fn sphere_margin() {
    use mees::es::{es_generation, AdamState, ESConfig, NoiseTable};
    for seed in 0..5u64 {
        let cfg = ESConfig { pop_size: 200, ..ESConfig::default() };
        let table = NoiseTable::new(seeds::derive(seed, "noise"));
        let mut adam = AdamState::new(100);
        let mut center = vec![0.5; 100];
        let mut best = f64::NEG_INFINITY;
        let mut hit = None;
        for gen in 0..300u64 {
            let step = es_generation(&center, &cfg, &table, &mut adam, gen, |_, p| {
                Ok(-p.iter().map(|x| x * x).sum::<f64>())
            })
            .unwrap();
            center = step.center;
            let f = -center.iter().map(|x| x * x).sum::<f64>();
            if f > best {
                best = f;
            }
            if best > -0.01 && hit.is_none() {
                hit = Some(gen);
            }
        }
        println!("sphere seed {seed}: best {best:.5} first hit at gen {hit:?}");
    }
}

fn main() {
    let what = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    let t0 = Instant::now();
    let field_seeds: Vec<u64> = (0..9).collect();
    if what == "field" || what == "all" {
        sweep("deceptive_field", "me_es_exploit", 200, &field_seeds, false);
        sweep("deceptive_field", "me_es_explore_exploit", 200, &field_seeds, false);
    }
    if what == "maze" || what == "all" {
        for alg in ["me_es_exploit", "nsr_es", "me_es_explore_exploit", "ns_es"] {
            sweep("walled_maze", alg, MAZE_GENS, &MAZE_SEEDS, true);
        }
    }
    if what == "arm" || what == "all" {
        arm_damage();
    }
    if what == "gradient" {
        gradient_margin();
    }
    if what == "sphere" {
        sphere_margin();
    }
    println!("total {:.1?}", t0.elapsed());
}
