//! Command-line front end: run experiments, adapt archives to damage,
//! export CSV views, and inspect archive files.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mees::adaptation::MboaConfig;
use mees::config::RunConfig;
use mees::env::DamageSpec;
use mees::map::BehaviorMap;
use mees::persist;
use mees::runner;

/// Bad arguments, unreadable inputs, rejected configs. Exits with 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(err: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(Usage(err.to_string()))
}

#[derive(Parser)]
#[command(name = "mees", version, about = "Quality-diversity neuroevolution toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a configured experiment end to end.
    Run(RunArgs),
    /// Recover performance on a damaged system using a stored archive.
    Adapt(AdaptArgs),
    /// Export archive (and metrics, when present) as CSV.
    Export(ExportArgs),
    /// Print a summary of an archive file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; beats MEES_WORKERS and the config (0 = auto).
    #[arg(long)]
    workers: Option<usize>,
    /// Continue from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    /// Archive written by `mees run`.
    #[arg(long)]
    archive: PathBuf,
    /// Damage spec: `freeze=J[,J...][@VALUE]` or `none`.
    #[arg(long)]
    damage: String,
    /// Trial budget; 0 returns the prior best untested.
    #[arg(long)]
    trials: u64,
    /// Run config; defaults to config.toml next to the archive.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for trial evaluations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Episodes averaged per trial.
    #[arg(long, default_value_t = 30)]
    n_eval: usize,
    /// Worker threads; beats MEES_WORKERS (0 = auto).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Copy, Clone, ValueEnum)]
enum ExportFormat {
    Csv,
}

#[derive(Args)]
struct ExportArgs {
    /// Archive written by `mees run`.
    #[arg(long)]
    archive: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
    format: ExportFormat,
    /// Output directory; defaults to the archive's directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Archive written by `mees run`.
    #[arg(long)]
    archive: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Adapt(args) => cmd_adapt(args),
        Cmd::Export(args) => cmd_export(args),
        Cmd::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.downcast_ref::<Usage>().is_some()) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

/// Flag beats MEES_WORKERS beats the fallback.
fn resolve_workers(flag: Option<usize>, fallback: usize) -> Result<usize> {
    if let Some(w) = flag {
        return Ok(w);
    }
    match std::env::var("MEES_WORKERS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("MEES_WORKERS must be an integer, got '{v}'"))),
        Err(_) => Ok(fallback),
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config).map_err(usage)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.workers = resolve_workers(args.workers, cfg.workers)?;
    cfg.validate().map_err(usage)?;
    let art = runner::run(&cfg, args.resume.as_deref())?;
    let gens = art.rows.last().map(|r| r.generation + 1).unwrap_or(0);
    println!(
        "run complete: algorithm {}, env {}, {} generation(s), coverage {} cell(s), best fitness {}",
        cfg.algorithm.as_str(),
        cfg.env.as_str(),
        gens,
        art.coverage,
        art.best_fitness
    );
    println!("archive: {}", art.archive_path.display());
    println!("metrics: {}", art.metrics_path.display());
    Ok(())
}

/// `freeze=J[,J...][@VALUE]`, or `none` for an intact system.
fn parse_damage(s: &str) -> Result<DamageSpec> {
    if s == "none" {
        return Ok(DamageSpec { frozen_joints: BTreeSet::new(), frozen_value: 0.0 });
    }
    let rest = s
        .strip_prefix("freeze=")
        .ok_or_else(|| usage(format!("damage spec '{s}' must be 'none' or 'freeze=J[,J...][@VALUE]'")))?;
    let (joint_list, frozen_value) = match rest.split_once('@') {
        Some((j, v)) => {
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| usage(format!("damage value '{v}' is not a number")))?;
            (j, value)
        }
        None => (rest, 0.0),
    };
    let mut frozen_joints = BTreeSet::new();
    for tok in joint_list.split(',') {
        let joint: usize = tok
            .trim()
            .parse()
            .map_err(|_| usage(format!("damage joint '{tok}' is not an index")))?;
        frozen_joints.insert(joint);
    }
    if frozen_joints.is_empty() {
        return Err(usage("damage spec freezes no joints"));
    }
    Ok(DamageSpec { frozen_joints, frozen_value })
}

fn config_for_archive(archive_path: &Path, explicit: Option<&Path>) -> Result<RunConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => archive_path.parent().unwrap_or(Path::new(".")).join("config.toml"),
    };
    RunConfig::load(&path)
        .map_err(usage)
        .with_context(|| format!("loading run config {}", path.display()))
}

fn cmd_adapt(args: AdaptArgs) -> Result<()> {
    let archive = persist::read_archive(&args.archive).map_err(usage)?;
    let cfg = config_for_archive(&args.archive, args.config.as_deref())?;
    let damage = parse_damage(&args.damage)?;
    let mboa = MboaConfig {
        n_eval: args.n_eval,
        max_trials: args.trials,
        seed: args.seed,
        ..MboaConfig::default()
    };
    let workers = resolve_workers(args.workers, 0)?;
    let out_dir = args.archive.parent().unwrap_or(Path::new(".")).to_path_buf();

    let result = match runner::adapt(&cfg, &archive, damage.clone(), &mboa, workers) {
        Ok(r) => r,
        Err(e @ mees::error::MeesError::Persist(_))
        | Err(e @ mees::error::MeesError::Config(_))
        | Err(e @ mees::error::MeesError::InvalidArgument(_)) => return Err(usage(e)),
        Err(e) => return Err(e.into()),
    };

    let log_path = out_dir.join("adaptation_log.csv");
    std::fs::write(&log_path, runner::trials_to_csv(&result.trials))?;
    let elite = archive.map.get(&result.recovery.cell).expect("recovered cell is populated");
    let single = BehaviorMap::from_parts(archive.map.spec().clone(), vec![elite.clone()], vec![])?;
    let recovery_path = out_dir.join("recovery.txt");
    persist::write_archive(&recovery_path, &single, archive.env, archive.config_hash, &archive.policy_spec)?;

    println!("damage: {}", args.damage);
    println!("pre-damage best fitness (stored): {}", result.pre_damage_best_fitness);
    println!("damaged baseline fitness (same controller): {}", result.damaged_baseline_fitness);
    println!(
        "recovered cell {:?} after {} trial(s), {} episode(s)",
        result.recovery.cell,
        result.trials.iter().filter(|t| t.measured_fitness.is_some()).count(),
        result.recovery.episodes
    );
    match result.post_adaptation_fitness {
        Some(f) => println!("post-adaptation fitness: {f}"),
        None => println!("post-adaptation fitness: untested (zero trial budget)"),
    }
    println!("trial log: {}", log_path.display());
    println!("recovery controller: {}", recovery_path.display());
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let archive = persist::read_archive(&args.archive).map_err(usage)?;
    let ExportFormat::Csv = args.format;
    let out_dir = match args.out_dir {
        Some(d) => d,
        None => args.archive.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&out_dir)?;
    let heatmap_path = out_dir.join("heatmap.csv");
    std::fs::write(&heatmap_path, persist::export_heatmap(&archive.map))?;
    println!("wrote {}", heatmap_path.display());
    let metrics_path = args.archive.parent().unwrap_or(Path::new(".")).join("metrics.csv");
    if metrics_path.exists() {
        let rows = persist::read_metrics(&metrics_path).map_err(usage)?;
        let series_path = out_dir.join("series.csv");
        std::fs::write(&series_path, persist::export_series(&rows))?;
        println!("wrote {}", series_path.display());
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let archive = persist::read_archive(&args.archive).map_err(usage)?;
    let spec = archive.map.spec();
    let total_cells: usize = spec.bins_per_dim.iter().product();
    let stats = archive.map.stats();
    println!("env: {}", archive.env.as_str());
    println!("config hash: {:016x}", archive.config_hash);
    println!(
        "policy: {} obs -> {} hidden {:?} -> {} act, {} parameter(s)",
        archive.policy_spec.obs_dim,
        archive.policy_spec.hidden.len(),
        archive.policy_spec.hidden,
        archive.policy_spec.act_dim,
        archive.policy_spec.param_count()
    );
    println!(
        "grid: {} dim(s), bins {:?}, lower {:?}, upper {:?}",
        spec.dim(),
        spec.bins_per_dim,
        spec.lower_bounds,
        spec.upper_bounds
    );
    println!("coverage: {} of {} cell(s)", stats.coverage, total_cells);
    match stats.best_cell {
        Some(cell) => {
            let best = archive.map.get(&cell).expect("best cell is populated");
            println!("best fitness: {} at cell {:?}", stats.best_fitness, cell);
            println!("best descriptor: {:?}", best.bc);
        }
        None => println!("archive is empty"),
    }
    Ok(())
}
