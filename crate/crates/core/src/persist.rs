//! On-disk artifacts: elite archives, metrics CSV, checkpoints, and
//! plot-ready exports. Everything is line-oriented text; floats are
//! written as shortest round-tripping decimals, so parameter arrays
//! survive save/load bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{BaselineRow, MegaConfig, MegaState, NsConfig, NsMember, NsState, NsraWeight};
use crate::env::EnvName;
use crate::error::MeesError;
use crate::es::{AdamState, NoiseTable};
use crate::map::{BehaviorMap, Elite, GridSpec};
use crate::novelty::NoveltyArchive;
use crate::policy::{PolicyParams, PolicySpec};
use crate::scheduler::{GenRow, MeesConfig, Mode, Scheduler};
use crate::seeds;

const ARCHIVE_MAGIC: &str = "mees-archive v1";
const CHECKPOINT_MAGIC: &str = "mees-checkpoint v1";

fn fmt_floats(xs: &[f64]) -> String {
    let mut s = String::with_capacity(xs.len() * 8);
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x}").expect("string write");
    }
    s
}

fn fmt_usizes(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn persist_err(line_no: usize, msg: impl std::fmt::Display) -> MeesError {
    MeesError::Persist(format!("line {line_no}: {msg}"))
}

/// Sequential reader over the text formats; every error carries the
/// offending line number.
struct Cursor<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self { lines: text.lines(), line_no: 0 }
    }

    fn next_line(&mut self) -> Result<&'a str, MeesError> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| persist_err(self.line_no, "unexpected end of file"))
    }

    /// Next line must be `key` or `key <rest>`; returns the rest.
    fn take(&mut self, key: &str) -> Result<&'a str, MeesError> {
        let line = self.next_line()?;
        if line == key {
            return Ok("");
        }
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| persist_err(self.line_no, format!("expected '{key}', found '{line}'")))
    }

    fn take_parse<T: FromStr>(&mut self, key: &str) -> Result<T, MeesError>
    where
        T::Err: std::fmt::Display,
    {
        let rest = self.take(key)?;
        rest.parse()
            .map_err(|e| persist_err(self.line_no, format!("bad {key} value '{rest}': {e}")))
    }

    /// Parses `key <n> <v1> ... <vn>`.
    fn take_counted<T: FromStr>(&mut self, key: &str) -> Result<Vec<T>, MeesError>
    where
        T::Err: std::fmt::Display,
    {
        let rest = self.take(key)?;
        let mut parts = rest.split_ascii_whitespace();
        let n: usize = parts
            .next()
            .ok_or_else(|| persist_err(self.line_no, format!("{key}: missing count")))?
            .parse()
            .map_err(|e| persist_err(self.line_no, format!("{key}: bad count: {e}")))?;
        let vals: Vec<T> = parts
            .map(|p| {
                p.parse()
                    .map_err(|e| persist_err(self.line_no, format!("{key}: bad value '{p}': {e}")))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != n {
            return Err(persist_err(
                self.line_no,
                format!("{key}: declared {n} values, found {}", vals.len()),
            ));
        }
        Ok(vals)
    }
}

fn counted_floats(key: &str, xs: &[f64]) -> String {
    format!("{key} {} {}", xs.len(), fmt_floats(xs))
}

fn counted_usizes(key: &str, xs: &[usize]) -> String {
    format!("{key} {} {}", xs.len(), fmt_usizes(xs))
}

fn write_atomic(path: &Path, text: &str) -> Result<(), MeesError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// --- elite archive ---

/// A parsed archive file.
#[derive(Debug, Clone)]
pub struct ArchiveFile {
    pub env: EnvName,
    pub config_hash: u64,
    pub policy_spec: PolicySpec,
    pub map: BehaviorMap,
}

fn push_policy_line(lines: &mut Vec<String>, spec: &PolicySpec) {
    lines.push(format!(
        "policy {} {} {}",
        spec.obs_dim,
        spec.act_dim,
        counted_usizes("hidden", &spec.hidden)
    ));
}

fn parse_policy_line(cur: &mut Cursor) -> Result<PolicySpec, MeesError> {
    let rest = cur.take("policy")?;
    let parts: Vec<&str> = rest.split_ascii_whitespace().collect();
    let bad = |what: &str| persist_err(cur.line_no, format!("policy: bad or missing {what}"));
    let num = |i: usize, what: &str| -> Result<usize, MeesError> {
        parts.get(i).and_then(|p| p.parse().ok()).ok_or_else(|| bad(what))
    };
    let obs_dim = num(0, "obs_dim")?;
    let act_dim = num(1, "act_dim")?;
    if parts.get(2) != Some(&"hidden") {
        return Err(bad("'hidden' list"));
    }
    let n = num(3, "hidden count")?;
    if parts.len() != 4 + n {
        return Err(bad("hidden sizes"));
    }
    let hidden = (0..n).map(|i| num(4 + i, "hidden size")).collect::<Result<_, _>>()?;
    Ok(PolicySpec::with_hidden(obs_dim, act_dim, hidden))
}

fn push_grid_lines(lines: &mut Vec<String>, spec: &GridSpec) {
    lines.push(format!("grid {}", spec.dim()));
    lines.push(counted_floats("lower", &spec.lower_bounds));
    lines.push(counted_floats("upper", &spec.upper_bounds));
    lines.push(counted_usizes("bins", &spec.bins_per_dim));
}

fn parse_grid_lines(cur: &mut Cursor) -> Result<GridSpec, MeesError> {
    let dim: usize = cur.take_parse("grid")?;
    let lower: Vec<f64> = cur.take_counted("lower")?;
    let upper: Vec<f64> = cur.take_counted("upper")?;
    let bins: Vec<usize> = cur.take_counted("bins")?;
    if lower.len() != dim || upper.len() != dim || bins.len() != dim {
        return Err(persist_err(cur.line_no, "grid bounds do not match declared dimension"));
    }
    GridSpec::new(lower, upper, bins)
}

fn push_elite_lines(lines: &mut Vec<String>, cell: &[usize], elite: &Elite) {
    lines.push(counted_usizes("cell", cell));
    lines.push(format!("fitness {}", elite.fitness));
    lines.push(counted_floats("bc", &elite.bc));
    lines.push(format!("novelty {}", elite.novelty));
    lines.push(format!("gen {}", elite.gen_added));
    lines.push(counted_floats("params", &elite.params.flat));
}

fn parse_elite_lines(
    cur: &mut Cursor,
    policy_spec: &PolicySpec,
) -> Result<(Vec<usize>, Elite), MeesError> {
    let cell: Vec<usize> = cur.take_counted("cell")?;
    let fitness: f64 = cur.take_parse("fitness")?;
    let bc: Vec<f64> = cur.take_counted("bc")?;
    let novelty: f64 = cur.take_parse("novelty")?;
    let gen_added: u64 = cur.take_parse("gen")?;
    let flat: Vec<f64> = cur.take_counted("params")?;
    let params = PolicyParams::from_flat(policy_spec.clone(), flat)
        .map_err(|e| persist_err(cur.line_no, e))?;
    Ok((cell, Elite { params, fitness, bc, novelty, gen_added }))
}

fn map_to_lines(lines: &mut Vec<String>, map: &BehaviorMap) {
    lines.push(format!("elites {}", map.len()));
    for (cell, elite) in map.elites() {
        push_elite_lines(lines, cell, elite);
    }
}

fn map_from_lines(
    cur: &mut Cursor,
    grid: GridSpec,
    policy_spec: &PolicySpec,
    update_log: Vec<(u64, Vec<usize>)>,
) -> Result<BehaviorMap, MeesError> {
    let count: usize = cur.take_parse("elites")?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let (cell, elite) = parse_elite_lines(cur, policy_spec)?;
        let expected = grid.bc_to_cell(&elite.bc)?;
        if cell != expected {
            return Err(persist_err(
                cur.line_no,
                format!("elite cell {cell:?} does not match its descriptor (expected {expected:?})"),
            ));
        }
        entries.push(elite);
    }
    BehaviorMap::from_parts(grid, entries, update_log)
}

/// Renders an archive to text.
pub fn archive_to_string(
    map: &BehaviorMap,
    env: EnvName,
    config_hash: u64,
    policy_spec: &PolicySpec,
) -> String {
    let mut lines = vec![
        ARCHIVE_MAGIC.to_string(),
        format!("env {}", env.as_str()),
        format!("config {config_hash:016x}"),
    ];
    push_policy_line(&mut lines, policy_spec);
    push_grid_lines(&mut lines, map.spec());
    map_to_lines(&mut lines, map);
    lines.push(String::new());
    lines.join("\n")
}

pub fn write_archive(
    path: impl AsRef<Path>,
    map: &BehaviorMap,
    env: EnvName,
    config_hash: u64,
    policy_spec: &PolicySpec,
) -> Result<(), MeesError> {
    write_atomic(path.as_ref(), &archive_to_string(map, env, config_hash, policy_spec))
}

pub fn archive_from_string(text: &str) -> Result<ArchiveFile, MeesError> {
    let mut cur = Cursor::new(text);
    let magic = cur.next_line()?;
    if magic != ARCHIVE_MAGIC {
        return Err(persist_err(cur.line_no, format!("not an archive file (found '{magic}')")));
    }
    let env = EnvName::parse(cur.take("env")?)
        .map_err(|e| persist_err(cur.line_no, e))?;
    let hash_text = cur.take("config")?;
    let config_hash = u64::from_str_radix(hash_text, 16)
        .map_err(|e| persist_err(cur.line_no, format!("bad config hash: {e}")))?;
    let policy_spec = parse_policy_line(&mut cur)?;
    let grid = parse_grid_lines(&mut cur).map_err(|e| persist_err(cur.line_no, e))?;
    let map = map_from_lines(&mut cur, grid, &policy_spec, Vec::new())?;
    Ok(ArchiveFile { env, config_hash, policy_spec, map })
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<ArchiveFile, MeesError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| {
        MeesError::Persist(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    archive_from_string(&text)
}

// --- metrics CSV ---

pub const METRICS_HEADER: &str =
    "generation,mode,episodes_total,coverage,best_fitness,center_fitness,center_novelty,nsra_weight";

/// One metrics line, common to every algorithm driver.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub generation: u64,
    pub mode: String,
    pub episodes_total: u64,
    pub coverage: u64,
    pub best_fitness: f64,
    pub center_fitness: f64,
    pub center_novelty: f64,
    pub nsra_weight: Option<f64>,
}

impl From<&GenRow> for MetricsRow {
    fn from(r: &GenRow) -> Self {
        Self {
            generation: r.generation,
            mode: r.mode.as_str().to_string(),
            episodes_total: r.episodes_total,
            coverage: r.coverage as u64,
            best_fitness: r.best_fitness,
            center_fitness: r.center_fitness,
            center_novelty: r.center_novelty,
            nsra_weight: None,
        }
    }
}

impl From<&BaselineRow> for MetricsRow {
    fn from(r: &BaselineRow) -> Self {
        Self {
            generation: r.generation,
            mode: r.mode.to_string(),
            episodes_total: r.episodes_total,
            coverage: r.coverage as u64,
            best_fitness: r.best_fitness,
            center_fitness: r.center_fitness,
            center_novelty: r.center_novelty,
            nsra_weight: r.nsra_weight,
        }
    }
}

pub fn metrics_line(r: &MetricsRow) -> String {
    let weight = r.nsra_weight.map(|w| w.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{}",
        r.generation,
        r.mode,
        r.episodes_total,
        r.coverage,
        r.best_fitness,
        r.center_fitness,
        r.center_novelty,
        weight
    )
}

/// Appending CSV writer; each row is flushed so an interrupted run keeps
/// every finished generation.
pub struct MetricsWriter {
    out: fs::File,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, MeesError> {
        if let Some(dir) = path.as_ref().parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let mut out = fs::File::create(path.as_ref())?;
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out })
    }

    /// Reopens an existing file to continue after the given generation,
    /// dropping any rows beyond it.
    pub fn resume(path: impl AsRef<Path>, last_generation: u64) -> Result<Self, MeesError> {
        let rows = read_metrics(&path)?;
        let keep: Vec<&MetricsRow> =
            rows.iter().filter(|r| r.generation <= last_generation).collect();
        let mut text = String::from(METRICS_HEADER);
        text.push('\n');
        for r in keep {
            text.push_str(&metrics_line(r));
            text.push('\n');
        }
        fs::write(path.as_ref(), &text)?;
        let out = fs::OpenOptions::new().append(true).open(path.as_ref())?;
        Ok(Self { out })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<(), MeesError> {
        writeln!(self.out, "{}", metrics_line(row))?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>, MeesError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| {
        MeesError::Persist(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    let mut rows = Vec::new();
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(MeesError::Persist(format!(
                "bad metrics header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(persist_err(i + 2, format!("expected 8 columns, found {}", f.len())));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64, MeesError> {
            s.parse().map_err(|e| persist_err(i + 2, format!("bad {what}: {e}")))
        };
        rows.push(MetricsRow {
            generation: f[0]
                .parse()
                .map_err(|e| persist_err(i + 2, format!("bad generation: {e}")))?,
            mode: f[1].to_string(),
            episodes_total: f[2]
                .parse()
                .map_err(|e| persist_err(i + 2, format!("bad episodes: {e}")))?,
            coverage: f[3]
                .parse()
                .map_err(|e| persist_err(i + 2, format!("bad coverage: {e}")))?,
            best_fitness: parse_f(f[4], "best_fitness")?,
            center_fitness: parse_f(f[5], "center_fitness")?,
            center_novelty: parse_f(f[6], "center_novelty")?,
            nsra_weight: if f[7].is_empty() { None } else { Some(parse_f(f[7], "nsra_weight")?) },
        });
    }
    Ok(rows)
}

// --- exports ---

/// Plot-ready map dump: one row per populated cell.
pub fn export_heatmap(map: &BehaviorMap) -> String {
    let dim = map.spec().dim();
    let mut head: Vec<String> = (0..dim).map(|d| format!("cell_{d}")).collect();
    head.extend((0..dim).map(|d| format!("bc_{d}")));
    head.extend(["fitness".into(), "novelty".into(), "gen_added".into()]);
    let mut out = head.join(",");
    out.push('\n');
    for (cell, e) in map.elites() {
        let mut cols: Vec<String> = cell.iter().map(|c| c.to_string()).collect();
        cols.extend(e.bc.iter().map(|b| b.to_string()));
        cols.push(e.fitness.to_string());
        cols.push(e.novelty.to_string());
        cols.push(e.gen_added.to_string());
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

/// Coverage and best-fitness series extracted from run metrics.
pub fn export_series(rows: &[MetricsRow]) -> String {
    let mut out = String::from("generation,coverage,best_fitness\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.generation, r.coverage, r.best_fitness);
    }
    out
}

// --- checkpoints ---

fn push_adam_lines(lines: &mut Vec<String>, adam: &AdamState) {
    lines.push(counted_floats("adam_m", &adam.first_moment));
    lines.push(counted_floats("adam_v", &adam.second_moment));
    lines.push(format!("adam_step {}", adam.step_count));
    lines.push(format!("adam_hyper {} {} {}", adam.beta1, adam.beta2, adam.eps));
}

fn parse_adam_lines(cur: &mut Cursor) -> Result<AdamState, MeesError> {
    let first_moment: Vec<f64> = cur.take_counted("adam_m")?;
    let second_moment: Vec<f64> = cur.take_counted("adam_v")?;
    let step_count: u64 = cur.take_parse("adam_step")?;
    let hyper: Vec<f64> = cur
        .take("adam_hyper")?
        .split_ascii_whitespace()
        .map(|p| p.parse().map_err(|e| persist_err(cur.line_no, format!("adam_hyper: {e}"))))
        .collect::<Result<_, _>>()?;
    if hyper.len() != 3 {
        return Err(persist_err(cur.line_no, "adam_hyper needs beta1 beta2 eps"));
    }
    Ok(AdamState {
        first_moment,
        second_moment,
        step_count,
        beta1: hyper[0],
        beta2: hyper[1],
        eps: hyper[2],
    })
}

fn push_novelty_lines(lines: &mut Vec<String>, archive: &NoveltyArchive) {
    lines.push(format!("novelty_archive {}", archive.len()));
    for bc in archive.entries() {
        lines.push(counted_floats("point", bc));
    }
}

fn parse_novelty_lines(cur: &mut Cursor, k: usize) -> Result<NoveltyArchive, MeesError> {
    let count: usize = cur.take_parse("novelty_archive")?;
    let mut archive = NoveltyArchive::new(k)?;
    for _ in 0..count {
        archive.add_bc(cur.take_counted("point")?)?;
    }
    Ok(archive)
}

fn push_update_log_lines(lines: &mut Vec<String>, log: &[(u64, Vec<usize>)]) {
    lines.push(format!("update_log {}", log.len()));
    for (gen, cell) in log {
        lines.push(format!("log {gen} {}", fmt_usizes(cell)));
    }
}

fn parse_update_log_lines(cur: &mut Cursor) -> Result<Vec<(u64, Vec<usize>)>, MeesError> {
    let count: usize = cur.take_parse("update_log")?;
    let mut log = Vec::with_capacity(count);
    for _ in 0..count {
        let rest = cur.take("log")?;
        let mut parts = rest.split_ascii_whitespace();
        let gen: u64 = parts
            .next()
            .ok_or_else(|| persist_err(cur.line_no, "log: missing generation"))?
            .parse()
            .map_err(|e| persist_err(cur.line_no, format!("log: {e}")))?;
        let cell: Vec<usize> = parts
            .map(|p| p.parse().map_err(|e| persist_err(cur.line_no, format!("log: {e}"))))
            .collect::<Result<_, _>>()?;
        log.push((gen, cell));
    }
    Ok(log)
}

fn checkpoint_header(algorithm: &str, config_hash: u64, generation: u64, episodes: u64) -> Vec<String> {
    vec![
        CHECKPOINT_MAGIC.to_string(),
        format!("config {config_hash:016x}"),
        format!("algorithm {algorithm}"),
        format!("generation {generation}"),
        format!("episodes {episodes}"),
    ]
}

fn parse_checkpoint_header(
    cur: &mut Cursor,
    expected_algorithm: &str,
    expected_hash: u64,
) -> Result<(u64, u64), MeesError> {
    let magic = cur.next_line()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(persist_err(cur.line_no, format!("not a checkpoint file (found '{magic}')")));
    }
    let hash_text = cur.take("config")?;
    let hash = u64::from_str_radix(hash_text, 16)
        .map_err(|e| persist_err(cur.line_no, format!("bad config hash: {e}")))?;
    if hash != expected_hash {
        return Err(MeesError::Persist(format!(
            "checkpoint was written by a different configuration \
             (checkpoint {hash:016x}, current {expected_hash:016x})"
        )));
    }
    let algorithm = cur.take("algorithm")?;
    if algorithm != expected_algorithm {
        return Err(persist_err(
            cur.line_no,
            format!("checkpoint is for algorithm '{algorithm}', expected '{expected_algorithm}'"),
        ));
    }
    let generation: u64 = cur.take_parse("generation")?;
    let episodes: u64 = cur.take_parse("episodes")?;
    Ok((generation, episodes))
}

/// Serializes a running ME-ES state so it can be resumed exactly.
pub fn scheduler_checkpoint_to_string(sched: &Scheduler, config_hash: u64) -> String {
    let mut lines = checkpoint_header(
        "me_es",
        config_hash,
        sched.generation,
        sched.episode_counter,
    );
    lines.push(format!("mode {}", sched.mode.as_str()));
    lines.push(format!("rng_word_pos {}", sched.rng.get_word_pos()));
    lines.push(counted_floats("center", &sched.center));
    push_adam_lines(&mut lines, &sched.adam);
    push_policy_line(&mut lines, &sched.policy_spec);
    push_grid_lines(&mut lines, sched.map.spec());
    map_to_lines(&mut lines, &sched.map);
    push_update_log_lines(&mut lines, sched.map.update_log());
    push_novelty_lines(&mut lines, &sched.archive);
    lines.push(String::new());
    lines.join("\n")
}

pub fn save_scheduler_checkpoint(
    path: impl AsRef<Path>,
    sched: &Scheduler,
    config_hash: u64,
) -> Result<(), MeesError> {
    write_atomic(path.as_ref(), &scheduler_checkpoint_to_string(sched, config_hash))
}

pub fn scheduler_checkpoint_from_string(
    text: &str,
    cfg: MeesConfig,
    config_hash: u64,
) -> Result<Scheduler, MeesError> {
    let mut cur = Cursor::new(text);
    let (generation, episode_counter) = parse_checkpoint_header(&mut cur, "me_es", config_hash)?;
    let mode = match cur.take("mode")? {
        "explore" => Mode::Explore,
        "exploit" => Mode::Exploit,
        other => return Err(persist_err(cur.line_no, format!("unknown mode '{other}'"))),
    };
    let word_pos: u128 = cur.take_parse("rng_word_pos")?;
    let center: Vec<f64> = cur.take_counted("center")?;
    let adam = parse_adam_lines(&mut cur)?;
    let policy_spec = parse_policy_line(&mut cur)?;
    let grid = parse_grid_lines(&mut cur)?;
    let map_snapshot = map_from_lines(&mut cur, grid, &policy_spec, Vec::new())?;
    let update_log = parse_update_log_lines(&mut cur)?;
    let entries: Vec<Elite> = map_snapshot.elites().map(|(_, e)| e.clone()).collect();
    let map = BehaviorMap::from_parts(map_snapshot.spec().clone(), entries, update_log)?;
    let archive = parse_novelty_lines(&mut cur, cfg.novelty_k)?;
    let sampler_seed = seeds::derive(cfg.seed, "sampler");
    let mut rng = ChaCha8Rng::seed_from_u64(sampler_seed);
    rng.set_word_pos(word_pos);
    let noise = NoiseTable::new(seeds::derive(cfg.seed, "noise"));
    Ok(Scheduler {
        cfg,
        policy_spec,
        map,
        archive,
        center,
        adam,
        mode,
        generation,
        episode_counter,
        noise,
        sampler_seed,
        rng,
    })
}

pub fn load_scheduler_checkpoint(
    path: impl AsRef<Path>,
    cfg: MeesConfig,
    config_hash: u64,
) -> Result<Scheduler, MeesError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| {
        MeesError::Persist(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    scheduler_checkpoint_from_string(&text, cfg, config_hash)
}

/// Serializes a running map-GA state.
pub fn mega_checkpoint_to_string(st: &MegaState, config_hash: u64) -> String {
    let mut lines =
        checkpoint_header("me_ga", config_hash, st.generation, st.episode_counter);
    lines.push(format!("rng_word_pos {}", st.rng.get_word_pos()));
    push_policy_line(&mut lines, &st.policy_spec);
    push_grid_lines(&mut lines, st.map.spec());
    map_to_lines(&mut lines, &st.map);
    push_update_log_lines(&mut lines, st.map.update_log());
    lines.push(String::new());
    lines.join("\n")
}

pub fn save_mega_checkpoint(
    path: impl AsRef<Path>,
    st: &MegaState,
    config_hash: u64,
) -> Result<(), MeesError> {
    write_atomic(path.as_ref(), &mega_checkpoint_to_string(st, config_hash))
}

pub fn mega_checkpoint_from_string(
    text: &str,
    cfg: MegaConfig,
    config_hash: u64,
) -> Result<MegaState, MeesError> {
    let mut cur = Cursor::new(text);
    let (generation, episode_counter) = parse_checkpoint_header(&mut cur, "me_ga", config_hash)?;
    let word_pos: u128 = cur.take_parse("rng_word_pos")?;
    let policy_spec = parse_policy_line(&mut cur)?;
    let grid = parse_grid_lines(&mut cur)?;
    let map_snapshot = map_from_lines(&mut cur, grid, &policy_spec, Vec::new())?;
    let update_log = parse_update_log_lines(&mut cur)?;
    let entries: Vec<Elite> = map_snapshot.elites().map(|(_, e)| e.clone()).collect();
    let map = BehaviorMap::from_parts(map_snapshot.spec().clone(), entries, update_log)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, "sampler"));
    rng.set_word_pos(word_pos);
    Ok(MegaState { cfg, policy_spec, map, generation, episode_counter, rng })
}

pub fn load_mega_checkpoint(
    path: impl AsRef<Path>,
    cfg: MegaConfig,
    config_hash: u64,
) -> Result<MegaState, MeesError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| {
        MeesError::Persist(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    mega_checkpoint_from_string(&text, cfg, config_hash)
}

/// Serializes a running novelty-family state.
pub fn ns_checkpoint_to_string(st: &NsState, config_hash: u64) -> String {
    let mut lines = checkpoint_header("ns_family", config_hash, st.generation, st.episode_counter);
    lines.push(format!("rng_word_pos {}", st.rng.get_word_pos()));
    lines.push(format!(
        "nsra_state {} {} {}",
        st.weight.w, st.weight.best_fitness_so_far, st.weight.gens_since_improvement
    ));
    push_policy_line(&mut lines, &st.policy_spec);
    push_grid_lines(&mut lines, st.map.spec());
    map_to_lines(&mut lines, &st.map);
    push_update_log_lines(&mut lines, st.map.update_log());
    push_novelty_lines(&mut lines, &st.archive);
    lines.push(format!("members {}", st.members.len()));
    for m in &st.members {
        lines.push(counted_floats("member_flat", &m.flat));
        push_adam_lines(&mut lines, &m.adam);
        lines.push(format!("member_fitness {}", m.latest_fitness));
        lines.push(counted_floats("member_bc", &m.latest_bc));
        lines.push(format!("member_novelty {}", m.latest_novelty));
    }
    lines.push(String::new());
    lines.join("\n")
}

pub fn save_ns_checkpoint(
    path: impl AsRef<Path>,
    st: &NsState,
    config_hash: u64,
) -> Result<(), MeesError> {
    write_atomic(path.as_ref(), &ns_checkpoint_to_string(st, config_hash))
}

pub fn ns_checkpoint_from_string(
    text: &str,
    cfg: NsConfig,
    config_hash: u64,
) -> Result<NsState, MeesError> {
    let mut cur = Cursor::new(text);
    let (generation, episode_counter) =
        parse_checkpoint_header(&mut cur, "ns_family", config_hash)?;
    let word_pos: u128 = cur.take_parse("rng_word_pos")?;
    let nsra: Vec<&str> = cur.take("nsra_state")?.split_ascii_whitespace().collect();
    if nsra.len() != 3 {
        return Err(persist_err(cur.line_no, "nsra_state needs w best stagnation"));
    }
    let weight = NsraWeight {
        w: nsra[0]
            .parse()
            .map_err(|e| persist_err(cur.line_no, format!("nsra_state: {e}")))?,
        best_fitness_so_far: nsra[1]
            .parse()
            .map_err(|e| persist_err(cur.line_no, format!("nsra_state: {e}")))?,
        gens_since_improvement: nsra[2]
            .parse()
            .map_err(|e| persist_err(cur.line_no, format!("nsra_state: {e}")))?,
    };
    let policy_spec = parse_policy_line(&mut cur)?;
    let grid = parse_grid_lines(&mut cur)?;
    let map_snapshot = map_from_lines(&mut cur, grid, &policy_spec, Vec::new())?;
    let update_log = parse_update_log_lines(&mut cur)?;
    let entries: Vec<Elite> = map_snapshot.elites().map(|(_, e)| e.clone()).collect();
    let map = BehaviorMap::from_parts(map_snapshot.spec().clone(), entries, update_log)?;
    let archive = parse_novelty_lines(&mut cur, cfg.novelty_k)?;
    let member_count: usize = cur.take_parse("members")?;
    let mut members = Vec::with_capacity(member_count);
    for _ in 0..member_count {
        let flat: Vec<f64> = cur.take_counted("member_flat")?;
        let adam = parse_adam_lines(&mut cur)?;
        let latest_fitness: f64 = cur.take_parse("member_fitness")?;
        let latest_bc: Vec<f64> = cur.take_counted("member_bc")?;
        let latest_novelty: f64 = cur.take_parse("member_novelty")?;
        members.push(NsMember { flat, adam, latest_fitness, latest_bc, latest_novelty });
    }
    if member_count != cfg.population {
        return Err(MeesError::Persist(format!(
            "checkpoint has {member_count} members, config wants {}",
            cfg.population
        )));
    }
    let noise = NoiseTable::new(seeds::derive(cfg.seed, "noise"));
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, "sampler"));
    rng.set_word_pos(word_pos);
    Ok(NsState {
        cfg,
        policy_spec,
        members,
        archive,
        weight,
        map,
        generation,
        episode_counter,
        noise,
        rng,
    })
}

pub fn load_ns_checkpoint(
    path: impl AsRef<Path>,
    cfg: NsConfig,
    config_hash: u64,
) -> Result<NsState, MeesError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| {
        MeesError::Persist(format!("cannot read {}: {e}", path.as_ref().display()))
    })?;
    ns_checkpoint_from_string(&text, cfg, config_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{NsMode};
    use crate::es::ESConfig;
    use crate::evaluate::{Episode, EpisodeEvaluator};
    use crate::scheduler::Variant;

    #[test]
    fn floats_round_trip_bit_exact() {
        let cases = [
            0.0,
            -0.0,
            0.1,
            1.0 / 3.0,
            -1.234567890123456e-5,
            std::f64::consts::PI,
            f64::MAX,
            f64::MIN_POSITIVE,
            5e-324,
            -4.9e3,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ];
        for x in cases {
            let s = fmt_floats(&[x]);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} via '{s}'");
        }
        let nan_back: f64 = fmt_floats(&[f64::NAN]).parse().unwrap();
        assert!(nan_back.is_nan());
    }

    fn sample_map(seed: u64) -> (BehaviorMap, PolicySpec) {
        use rand::Rng;
        let spec = PolicySpec::with_hidden(3, 2, vec![4]);
        let grid = GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![8, 8]).unwrap();
        let mut map = BehaviorMap::new(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for g in 0..40 {
            let flat: Vec<f64> =
                (0..spec.param_count()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let _ = map.try_insert(Elite {
                params: PolicyParams::from_flat(spec.clone(), flat).unwrap(),
                fitness: rng.gen::<f64>() * 10.0 - 5.0,
                bc: vec![rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0],
                novelty: rng.gen::<f64>(),
                gen_added: g,
            });
        }
        (map, spec)
    }

    #[test]
    fn archive_round_trip_is_lossless() {
        let (map, spec) = sample_map(4);
        let text = archive_to_string(&map, EnvName::WalledMaze, 0xdeadbeef12345678, &spec);
        let parsed = archive_from_string(&text).unwrap();
        assert_eq!(parsed.env, EnvName::WalledMaze);
        assert_eq!(parsed.config_hash, 0xdeadbeef12345678);
        assert_eq!(parsed.policy_spec, spec);
        let again = archive_to_string(&parsed.map, parsed.env, parsed.config_hash, &parsed.policy_spec);
        assert_eq!(text, again, "second render must be byte-identical");
        for ((cell_a, ea), (cell_b, eb)) in map.elites().zip(parsed.map.elites()) {
            assert_eq!(cell_a, cell_b);
            assert_eq!(ea, eb);
        }
    }

    #[test]
    fn archive_rejects_corruption() {
        let (map, spec) = sample_map(5);
        let text = archive_to_string(&map, EnvName::RedundantArm, 7, &spec);
        assert!(archive_from_string(&text.replace("mees-archive v1", "mees-archive v9")).is_err());
        let truncated: String =
            text.lines().take(12).map(|l| format!("{l}\n")).collect();
        let err = archive_from_string(&truncated).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
        let mangled = text.replacen("fitness ", "fittness ", 1);
        assert!(archive_from_string(&mangled).is_err());
    }

    #[test]
    fn metrics_round_trip_and_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            MetricsRow {
                generation: 0,
                mode: "explore".into(),
                episodes_total: 130,
                coverage: 3,
                best_fitness: 1.25,
                center_fitness: -0.5,
                center_novelty: 0.1,
                nsra_weight: None,
            },
            MetricsRow {
                generation: 1,
                mode: "nsra".into(),
                episodes_total: 260,
                coverage: 4,
                best_fitness: 2.5,
                center_fitness: 2.5,
                center_novelty: 0.7,
                nsra_weight: Some(0.55),
            },
        ];
        let mut w = MetricsWriter::create(&path).unwrap();
        for r in &rows {
            w.append(r).unwrap();
        }
        drop(w);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(METRICS_HEADER));
        assert!(text.contains("0,explore,130,3,1.25,-0.5,0.1,\n"));
        assert!(text.contains("1,nsra,260,4,2.5,2.5,0.7,0.55\n"));
        assert_eq!(read_metrics(&path).unwrap(), rows);
    }

    #[test]
    fn metrics_resume_truncates_later_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        for g in 0..5 {
            w.append(&MetricsRow {
                generation: g,
                mode: "exploit".into(),
                episodes_total: g + 1,
                coverage: 1,
                best_fitness: 0.0,
                center_fitness: 0.0,
                center_novelty: 0.0,
                nsra_weight: None,
            })
            .unwrap();
        }
        drop(w);
        let _ = MetricsWriter::resume(&path, 2).unwrap();
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.last().unwrap().generation, 2);
    }

    #[test]
    fn heatmap_and_series_exports() {
        let (map, _) = sample_map(6);
        let heat = export_heatmap(&map);
        assert!(heat.starts_with("cell_0,cell_1,bc_0,bc_1,fitness,novelty,gen_added\n"));
        assert_eq!(heat.lines().count(), map.len() + 1);
        let rows = vec![MetricsRow {
            generation: 0,
            mode: "mega".into(),
            episodes_total: 10,
            coverage: 2,
            best_fitness: 0.5,
            center_fitness: 0.5,
            center_novelty: 0.0,
            nsra_weight: None,
        }];
        assert_eq!(export_series(&rows), "generation,coverage,best_fitness\n0,2,0.5\n");
    }

    struct QuadEvaluator;

    impl EpisodeEvaluator for QuadEvaluator {
        fn param_count(&self) -> usize {
            6
        }

        fn bc_dim(&self) -> usize {
            2
        }

        fn evaluate(&self, flat: &[f64], _seed: u64) -> Result<Episode, MeesError> {
            let fitness = -flat.iter().map(|x| x * x).sum::<f64>();
            Ok(Episode { fitness, bc: vec![flat[0].tanh(), flat[1].tanh()], steps: 1 })
        }
    }

    fn small_mees_cfg(n_gens: u64) -> MeesConfig {
        let es = ESConfig { pop_size: 6, ..ESConfig::default() };
        MeesConfig {
            n_optim_gens: 3,
            n_eval: 2,
            ..MeesConfig::new(Variant::ExploreExploit, n_gens, es, 17)
        }
    }

    fn tiny_grid() -> GridSpec {
        GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![6, 6]).unwrap()
    }

    fn tiny_policy() -> PolicySpec {
        PolicySpec::with_hidden(5, 1, vec![])
    }

    #[test]
    fn scheduler_checkpoint_resumes_exactly() {
        let ev = QuadEvaluator;
        let hash = 0xabc;
        let mut full = Scheduler::init(
            small_mees_cfg(8),
            tiny_policy(),
            tiny_grid(),
            &ev,
            vec![0.05; 6],
        )
        .unwrap();
        let full_rows = full.run(&ev).unwrap();

        let mut head = Scheduler::init(
            small_mees_cfg(4),
            tiny_policy(),
            tiny_grid(),
            &ev,
            vec![0.05; 6],
        )
        .unwrap();
        let mut head_rows = head.run(&ev).unwrap();
        let text = scheduler_checkpoint_to_string(&head, hash);
        let mut tail = scheduler_checkpoint_from_string(&text, small_mees_cfg(8), hash).unwrap();
        head_rows.extend(tail.run(&ev).unwrap());

        assert_eq!(head_rows.len(), full_rows.len());
        for (a, b) in full_rows.iter().zip(&head_rows) {
            assert_eq!(
                (a.generation, a.mode, a.episodes_total, a.coverage),
                (b.generation, b.mode, b.episodes_total, b.coverage)
            );
            assert_eq!(a.best_fitness.to_bits(), b.best_fitness.to_bits());
            assert_eq!(a.center_fitness.to_bits(), b.center_fitness.to_bits());
            assert_eq!(a.center_novelty.to_bits(), b.center_novelty.to_bits());
        }
        assert_eq!(
            archive_to_string(&full.map, EnvName::RedundantArm, hash, &full.policy_spec),
            archive_to_string(&tail.map, EnvName::RedundantArm, hash, &tail.policy_spec)
        );
        assert_eq!(full.rng.get_word_pos(), tail.rng.get_word_pos());
        assert_eq!(full.archive.entries(), tail.archive.entries());
        assert_eq!(full.center, tail.center);
    }

    #[test]
    fn scheduler_checkpoint_rejects_config_mismatch() {
        let ev = QuadEvaluator;
        let sched = Scheduler::init(
            small_mees_cfg(2),
            tiny_policy(),
            tiny_grid(),
            &ev,
            vec![0.05; 6],
        )
        .unwrap();
        let text = scheduler_checkpoint_to_string(&sched, 1);
        let err = scheduler_checkpoint_from_string(&text, small_mees_cfg(2), 2)
            .err()
            .expect("hash mismatch must fail");
        assert!(err.to_string().contains("configuration"), "{err}");
    }

    #[test]
    fn ns_checkpoint_resumes_exactly() {
        let ev = QuadEvaluator;
        let hash = 0x5;
        let cfg = |n_gens| NsConfig {
            n_gens,
            n_eval: 2,
            ..NsConfig::new(NsMode::Nsra, ESConfig { pop_size: 6, ..ESConfig::default() }, 29)
        };
        let members: Vec<Vec<f64>> = (0..5).map(|m| vec![0.02 * m as f64 + 0.01; 6]).collect();
        let mut full =
            NsState::init(cfg(8), tiny_policy(), tiny_grid(), &ev, members.clone()).unwrap();
        let full_rows = full.run(&ev).unwrap();

        let mut head = NsState::init(cfg(4), tiny_policy(), tiny_grid(), &ev, members).unwrap();
        let mut head_rows = head.run(&ev).unwrap();
        let text = ns_checkpoint_to_string(&head, hash);
        let mut tail = ns_checkpoint_from_string(&text, cfg(8), hash).unwrap();
        head_rows.extend(tail.run(&ev).unwrap());

        assert_eq!(head_rows, full_rows);
        assert_eq!(full.weight, tail.weight);
        for (a, b) in full.members.iter().zip(&tail.members) {
            assert_eq!(a.flat, b.flat);
            assert_eq!(a.adam.first_moment, b.adam.first_moment);
            assert_eq!(a.adam.step_count, b.adam.step_count);
            assert_eq!(a.latest_novelty.to_bits(), b.latest_novelty.to_bits());
        }
        assert_eq!(full.rng.get_word_pos(), tail.rng.get_word_pos());
    }

    #[test]
    fn mega_checkpoint_resumes_exactly() {
        use crate::baselines::MegaConfig;
        let ev = QuadEvaluator;
        let hash = 0x99;
        let cfg = |n_gens| MegaConfig {
            controllers_per_gen: 12,
            n_eval: 2,
            n_gens,
            seed: 31,
            ..MegaConfig::default()
        };
        let mut full =
            MegaState::init(cfg(6), tiny_policy(), tiny_grid(), &ev, vec![0.05; 6]).unwrap();
        let full_rows = full.run(&ev).unwrap();

        let mut head =
            MegaState::init(cfg(3), tiny_policy(), tiny_grid(), &ev, vec![0.05; 6]).unwrap();
        let mut head_rows = head.run(&ev).unwrap();
        let text = mega_checkpoint_to_string(&head, hash);
        let mut tail = mega_checkpoint_from_string(&text, cfg(6), hash).unwrap();
        head_rows.extend(tail.run(&ev).unwrap());

        assert_eq!(head_rows, full_rows);
        assert_eq!(
            archive_to_string(&full.map, EnvName::RedundantArm, hash, &full.policy_spec),
            archive_to_string(&tail.map, EnvName::RedundantArm, hash, &tail.policy_spec)
        );
    }

    #[test]
    fn update_log_survives_checkpoint() {
        let ev = QuadEvaluator;
        let mut sched = Scheduler::init(
            small_mees_cfg(5),
            tiny_policy(),
            tiny_grid(),
            &ev,
            vec![0.05; 6],
        )
        .unwrap();
        sched.run(&ev).unwrap();
        let text = scheduler_checkpoint_to_string(&sched, 0);
        let back = scheduler_checkpoint_from_string(&text, small_mees_cfg(5), 0).unwrap();
        assert_eq!(sched.map.update_log(), back.map.update_log());
        assert!(!sched.map.update_log().is_empty());
    }
}
