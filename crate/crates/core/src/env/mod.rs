//! Deterministic desk-scale environments: a deceptive open field, a
//! walled maze, and a damageable redundant arm.

pub mod arm;
pub mod field;
pub mod geometry;
pub mod maze;

pub use arm::{ArmConfig, DamageSpec, RedundantArm};
pub use field::{DeceptiveField, FieldConfig};
pub use maze::{MazeConfig, WalledMaze};

use serde::{Deserialize, Serialize};

use crate::error::MeesError;
use crate::map::GridSpec;

/// One transition.
#[derive(Debug, Clone)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Episode interface. Implementations are fully deterministic given
/// (seed, action sequence).
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn bc_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<Step, MeesError>;
    /// (fitness, behavior descriptor) for the episode so far; read at
    /// episode end.
    fn descriptors(&self) -> (f64, Vec<f64>);
}

/// Validated environment definition: everything needed to instantiate
/// fresh `Environment` values, one per worker.
#[derive(Debug, Clone)]
pub enum EnvDef {
    DeceptiveField(FieldConfig),
    WalledMaze(MazeConfig, geometry::WallSet),
    RedundantArm(ArmConfig),
}

/// Environment selection as it appears in a run config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    DeceptiveField,
    WalledMaze,
    RedundantArm,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::DeceptiveField => "deceptive_field",
            EnvName::WalledMaze => "walled_maze",
            EnvName::RedundantArm => "redundant_arm",
        }
    }

    pub fn parse(name: &str) -> Result<Self, MeesError> {
        match name {
            "deceptive_field" => Ok(EnvName::DeceptiveField),
            "walled_maze" => Ok(EnvName::WalledMaze),
            "redundant_arm" => Ok(EnvName::RedundantArm),
            other => Err(MeesError::Config(format!("unknown environment '{other}'"))),
        }
    }
}

impl EnvDef {
    pub fn deceptive_field(cfg: FieldConfig) -> Result<Self, MeesError> {
        cfg.validate()?;
        Ok(Self::DeceptiveField(cfg))
    }

    pub fn walled_maze(cfg: MazeConfig) -> Result<Self, MeesError> {
        cfg.validate()?;
        let walls = cfg.load_walls()?;
        Ok(Self::WalledMaze(cfg, walls))
    }

    pub fn redundant_arm(cfg: ArmConfig) -> Result<Self, MeesError> {
        cfg.validate()?;
        Ok(Self::RedundantArm(cfg))
    }

    /// Same definition with damage applied; only the arm supports damage.
    pub fn with_damage(&self, damage: DamageSpec) -> Result<Self, MeesError> {
        match self {
            Self::RedundantArm(cfg) => {
                let mut cfg = cfg.clone();
                cfg.damage = Some(damage);
                Self::redundant_arm(cfg)
            }
            _ => Err(MeesError::Config(
                "damage specs apply only to the redundant arm".into(),
            )),
        }
    }

    pub fn instantiate(&self) -> Box<dyn Environment> {
        match self {
            Self::DeceptiveField(cfg) => Box::new(DeceptiveField::new(cfg.clone())),
            Self::WalledMaze(cfg, walls) => {
                Box::new(WalledMaze::new(cfg.clone(), walls.clone()))
            }
            Self::RedundantArm(cfg) => Box::new(RedundantArm::new(cfg.clone())),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Self::DeceptiveField(_) | Self::WalledMaze(_, _) => 4,
            Self::RedundantArm(cfg) => cfg.n_joints,
        }
    }

    pub fn act_dim(&self) -> usize {
        match self {
            Self::DeceptiveField(_) | Self::WalledMaze(_, _) => 2,
            Self::RedundantArm(cfg) => cfg.n_joints,
        }
    }

    pub fn bc_dim(&self) -> usize {
        2
    }

    /// Grid bounds matched to each environment's reachable BC region.
    pub fn default_grid(&self) -> GridSpec {
        let (lower, upper) = match self {
            Self::DeceptiveField(cfg) => {
                let r = cfg.grid_extent;
                (vec![-r, -r], vec![r, r])
            }
            Self::WalledMaze(cfg, _) => {
                (vec![cfg.arena_min[0], cfg.arena_min[1]], vec![cfg.arena_max[0], cfg.arena_max[1]])
            }
            Self::RedundantArm(_) => (vec![0.0, 0.0], vec![1.0, 1.0]),
        };
        GridSpec::new(lower, upper, vec![10, 10]).expect("default grid is valid")
    }
}
