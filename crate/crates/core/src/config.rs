//! Run configuration: one TOML file selects the algorithm, the
//! environment, budgets, and hyperparameters. Unknown keys are rejected
//! so typos surface as errors instead of silently running defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{MegaConfig, NsConfig, NsMode};
use crate::env::{ArmConfig, EnvDef, EnvName, FieldConfig, MazeConfig};
use crate::error::MeesError;
use crate::es::ESConfig;
use crate::map::GridSpec;
use crate::policy::{InitScheme, PolicySpec};
use crate::scheduler::{MeesConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    MeEsExploit,
    MeEsExplore,
    MeEsExploreExploit,
    MeGa,
    NsEs,
    NsrEs,
    NsraEs,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::MeEsExploit => "me_es_exploit",
            Algorithm::MeEsExplore => "me_es_explore",
            Algorithm::MeEsExploreExploit => "me_es_explore_exploit",
            Algorithm::MeGa => "me_ga",
            Algorithm::NsEs => "ns_es",
            Algorithm::NsrEs => "nsr_es",
            Algorithm::NsraEs => "nsra_es",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            Algorithm::MeEsExploit => Some(Variant::Exploit),
            Algorithm::MeEsExplore => Some(Variant::Explore),
            Algorithm::MeEsExploreExploit => Some(Variant::ExploreExploit),
            _ => None,
        }
    }

    pub fn ns_mode(self) -> Option<NsMode> {
        match self {
            Algorithm::NsEs => Some(NsMode::Ns),
            Algorithm::NsrEs => Some(NsMode::Nsr),
            Algorithm::NsraEs => Some(NsMode::Nsra),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub hidden: Vec<usize>,
    pub init: InitScheme,
    /// Rollouts in the frozen reference batch for observation stats.
    pub vbn_rollouts: usize,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { hidden: vec![256, 256], init: InitScheme::NormColumns, vbn_rollouts: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeesSection {
    pub n_optim_gens: u64,
    pub n_eval: usize,
    pub novelty_k: usize,
}

impl Default for MeesSection {
    fn default() -> Self {
        Self { n_optim_gens: 10, n_eval: 30, novelty_k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MegaSection {
    pub controllers_per_gen: usize,
    pub mutation_std: f64,
    pub n_eval: usize,
}

impl Default for MegaSection {
    fn default() -> Self {
        Self { controllers_per_gen: 334, mutation_std: 0.02, n_eval: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NsSection {
    pub population: usize,
    pub n_eval: usize,
    pub novelty_k: usize,
}

impl Default for NsSection {
    fn default() -> Self {
        Self { population: 5, n_eval: 30, novelty_k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub env: EnvName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub n_gens: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Checkpoint cadence in generations; 0 disables checkpoints.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Worker threads; 0 picks the machine default.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub es: ESConfig,
    #[serde(default)]
    pub mees: MeesSection,
    #[serde(default)]
    pub mega: MegaSection,
    #[serde(default)]
    pub ns: NsSection,
    #[serde(default)]
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub deceptive_field: FieldConfig,
    #[serde(default)]
    pub walled_maze: MazeConfig,
    #[serde(default)]
    pub redundant_arm: ArmConfig,
}

fn default_output_dir() -> String {
    "out".into()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, MeesError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| MeesError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeesError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            MeesError::Config(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), MeesError> {
        let field = |name: &str, err: MeesError| MeesError::Config(format!("{name}: {err}"));
        self.es.validate().map_err(|e| field("es", e))?;
        self.env_def()?;
        if self.policy.hidden.iter().any(|&h| h == 0) {
            return Err(MeesError::Config("policy.hidden: layer sizes must be >= 1".into()));
        }
        if self.policy.vbn_rollouts == 0 {
            return Err(MeesError::Config("policy.vbn_rollouts: must be >= 1".into()));
        }
        if self.mees.n_optim_gens == 0 {
            return Err(MeesError::Config("mees.n_optim_gens: must be >= 1".into()));
        }
        if self.mees.n_eval == 0 || self.mega.n_eval == 0 || self.ns.n_eval == 0 {
            return Err(MeesError::Config("n_eval: must be >= 1".into()));
        }
        if self.mees.novelty_k == 0 || self.ns.novelty_k == 0 {
            return Err(MeesError::Config("novelty_k: must be >= 1".into()));
        }
        if self.mega.controllers_per_gen == 0 {
            return Err(MeesError::Config("mega.controllers_per_gen: must be >= 1".into()));
        }
        if !(self.mega.mutation_std > 0.0) {
            return Err(MeesError::Config("mega.mutation_std: must be > 0".into()));
        }
        if self.ns.population == 0 {
            return Err(MeesError::Config("ns.population: must be >= 1".into()));
        }
        if self.output_dir.is_empty() {
            return Err(MeesError::Config("output_dir: must not be empty".into()));
        }
        self.grid_spec()?;
        Ok(())
    }

    /// The validated environment definition this config selects.
    pub fn env_def(&self) -> Result<EnvDef, MeesError> {
        match self.env {
            EnvName::DeceptiveField => EnvDef::deceptive_field(self.deceptive_field.clone())
                .map_err(|e| MeesError::Config(format!("deceptive_field: {e}"))),
            EnvName::WalledMaze => EnvDef::walled_maze(self.walled_maze.clone())
                .map_err(|e| MeesError::Config(format!("walled_maze: {e}"))),
            EnvName::RedundantArm => EnvDef::redundant_arm(self.redundant_arm.clone())
                .map_err(|e| MeesError::Config(format!("redundant_arm: {e}"))),
        }
    }

    /// Grid override if present, otherwise the environment default.
    pub fn grid_spec(&self) -> Result<GridSpec, MeesError> {
        match &self.grid {
            Some(g) => GridSpec::new(g.lower.clone(), g.upper.clone(), g.bins.clone())
                .map_err(|e| MeesError::Config(format!("grid: {e}"))),
            None => Ok(self.env_def()?.default_grid()),
        }
    }

    pub fn policy_spec(&self) -> Result<PolicySpec, MeesError> {
        let def = self.env_def()?;
        Ok(PolicySpec::with_hidden(def.obs_dim(), def.act_dim(), self.policy.hidden.clone()))
    }

    pub fn mees_config(&self) -> MeesConfig {
        MeesConfig {
            variant: self.algorithm.variant().unwrap_or(Variant::ExploreExploit),
            n_gens: self.n_gens,
            n_optim_gens: self.mees.n_optim_gens,
            n_eval: self.mees.n_eval,
            novelty_k: self.mees.novelty_k,
            es: self.es.clone(),
            seed: self.seed,
        }
    }

    pub fn mega_config(&self) -> MegaConfig {
        MegaConfig {
            controllers_per_gen: self.mega.controllers_per_gen,
            mutation_std: self.mega.mutation_std,
            n_eval: self.mega.n_eval,
            n_gens: self.n_gens,
            seed: self.seed,
        }
    }

    pub fn ns_config(&self, mode: NsMode) -> NsConfig {
        NsConfig {
            mode,
            population: self.ns.population,
            es: self.es.clone(),
            n_eval: self.ns.n_eval,
            novelty_k: self.ns.novelty_k,
            n_gens: self.n_gens,
            seed: self.seed,
        }
    }

    /// Canonical rendering of the effective config, defaults included.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// FNV-1a hash of the canonical rendering; stamped into artifacts so
    /// mismatched archives and checkpoints are caught on load. Fields
    /// that shape a run but not its trajectory (generation budget,
    /// worker count, output location, checkpoint cadence) are
    /// neutralized first, so a run can be extended or re-parallelized
    /// without losing its identity.
    pub fn hash(&self) -> u64 {
        let mut id = self.clone();
        id.n_gens = 0;
        id.workers = 0;
        id.output_dir = String::new();
        id.checkpoint_every = 0;
        fnv1a(id.canonical_toml().as_bytes())
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "algorithm = \"me_es_explore_exploit\"\nenv = \"deceptive_field\"\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.es.pop_size, 100);
        assert_eq!(cfg.mees.n_optim_gens, 10);
        assert_eq!(cfg.policy.hidden, vec![256, 256]);
        assert_eq!(cfg.mega.controllers_per_gen, 334);
        assert_eq!(cfg.ns.population, 5);
        let grid = cfg.grid_spec().unwrap();
        assert_eq!(grid.bins_per_dim, vec![10, 10]);
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        let text = format!("{MINIMAL}n_genss = 5\n");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("n_genss"), "{err}");
    }

    #[test]
    fn unknown_nested_key_is_rejected() {
        let text = format!("{MINIMAL}[es]\npopsize = 10\n");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("popsize"), "{err}");
    }

    #[test]
    fn unknown_algorithm_names_the_field() {
        let text = "algorithm = \"me_please\"\nenv = \"deceptive_field\"\n";
        let err = RunConfig::from_toml(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("me_please") || msg.contains("algorithm"), "{msg}");
    }

    #[test]
    fn out_of_range_field_is_diagnosed() {
        let text = format!("{MINIMAL}[es]\nnoise_std = -1.0\n");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("noise_std"), "{err}");
    }

    #[test]
    fn env_constants_are_overridable() {
        let text = format!("{MINIMAL}[deceptive_field]\nmax_steps = 77\n");
        let cfg = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.deceptive_field.max_steps, 77);
        assert_eq!(cfg.deceptive_field.vmax, FieldConfig::default().vmax);
    }

    #[test]
    fn grid_override_applies() {
        let text = format!("{MINIMAL}[grid]\nlower = [-2.0, -2.0]\nupper = [2.0, 2.0]\nbins = [4, 4]\n");
        let cfg = RunConfig::from_toml(&text).unwrap();
        let grid = cfg.grid_spec().unwrap();
        assert_eq!(grid.bins_per_dim, vec![4, 4]);
        assert_eq!(grid.lower_bounds, vec![-2.0, -2.0]);
    }

    #[test]
    fn hash_tracks_content_not_formatting() {
        let a = RunConfig::from_toml(MINIMAL).unwrap();
        let spaced = "algorithm   =   \"me_es_explore_exploit\"\n\n# comment\nenv = \"deceptive_field\"\n";
        let b = RunConfig::from_toml(spaced).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::from_toml(&format!("{MINIMAL}seed = 9\n")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn fnv_reference_value() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn algorithm_mappings() {
        assert_eq!(Algorithm::MeEsExploit.variant(), Some(Variant::Exploit));
        assert_eq!(Algorithm::MeGa.variant(), None);
        assert_eq!(Algorithm::NsraEs.ns_mode(), Some(NsMode::Nsra));
        assert_eq!(Algorithm::MeEsExplore.ns_mode(), None);
        for (alg, name) in [
            (Algorithm::MeEsExploit, "me_es_exploit"),
            (Algorithm::NsraEs, "nsra_es"),
        ] {
            assert_eq!(alg.as_str(), name);
            let text = format!("algorithm = \"{name}\"\nenv = \"redundant_arm\"\n");
            let cfg = RunConfig::from_toml(&text).unwrap();
            assert_eq!(cfg.algorithm, alg);
        }
    }

    #[test]
    fn policy_spec_reflects_env_and_override() {
        let text = format!("{MINIMAL}[policy]\nhidden = [32, 16]\n");
        let cfg = RunConfig::from_toml(&text).unwrap();
        let spec = cfg.policy_spec().unwrap();
        assert_eq!(spec.obs_dim, 4);
        assert_eq!(spec.act_dim, 2);
        assert_eq!(spec.hidden, vec![32, 16]);
    }
}
