//! Bounded arena with wall obstacles. Fitness is negative distance to a
//! goal; the default geometry puts a cul-de-sac pocket directly on the
//! straight start-to-goal line.

use serde::{Deserialize, Serialize};

use super::geometry::WallSet;
use super::{Environment, Step};
use crate::error::{check_finite, MeesError};

const DEFAULT_GEOMETRY: &str = include_str!("default_maze.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeConfig {
    pub dt: f64,
    pub vmax: f64,
    pub max_steps: usize,
    pub obs_scale: f64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub arena_min: [f64; 2],
    pub arena_max: [f64; 2],
    /// Wall-segment file; the built-in geometry when absent.
    pub walls_file: Option<String>,
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            vmax: 2.0,
            max_steps: 150,
            obs_scale: 10.0,
            start: [1.0, 5.0],
            goal: [9.0, 5.0],
            arena_min: [0.0, 0.0],
            arena_max: [10.0, 10.0],
            walls_file: None,
        }
    }
}

impl MazeConfig {
    pub fn validate(&self) -> Result<(), MeesError> {
        if !(self.dt > 0.0 && self.vmax > 0.0 && self.obs_scale > 0.0) {
            return Err(MeesError::Config("maze: dt, vmax, obs_scale must be > 0".into()));
        }
        if self.max_steps == 0 {
            return Err(MeesError::Config("maze: max_steps must be >= 1".into()));
        }
        for i in 0..2 {
            if !(self.arena_min[i] < self.arena_max[i]) {
                return Err(MeesError::Config("maze: arena_min must be < arena_max".into()));
            }
        }
        check_finite("start", &self.start).map_err(|e| MeesError::Config(e.to_string()))?;
        check_finite("goal", &self.goal).map_err(|e| MeesError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn load_walls(&self) -> Result<WallSet, MeesError> {
        let text = match &self.walls_file {
            Some(path) => std::fs::read_to_string(path).map_err(|e| {
                MeesError::Config(format!("cannot read walls file {path}: {e}"))
            })?,
            None => DEFAULT_GEOMETRY.to_string(),
        };
        let walls = WallSet::parse(&text)?;
        if walls.walls.is_empty() {
            return Err(MeesError::Config("maze geometry has no walls".into()));
        }
        Ok(walls)
    }
}

#[derive(Debug, Clone)]
pub struct WalledMaze {
    cfg: MazeConfig,
    walls: WallSet,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
}

impl WalledMaze {
    pub fn new(cfg: MazeConfig, walls: WallSet) -> Self {
        let start = cfg.start;
        Self { cfg, walls, pos: start, vel: [0.0; 2], steps: 0 }
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            self.pos[0] / self.cfg.obs_scale,
            self.pos[1] / self.cfg.obs_scale,
            self.vel[0] / self.cfg.vmax,
            self.vel[1] / self.cfg.vmax,
        ]
    }

    fn goal_distance(&self) -> f64 {
        let dx = self.pos[0] - self.cfg.goal[0];
        let dy = self.pos[1] - self.cfg.goal[1];
        (dx * dx + dy * dy).sqrt()
    }
}

impl Environment for WalledMaze {
    fn obs_dim(&self) -> usize {
        4
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn bc_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.pos = self.cfg.start;
        self.vel = [0.0; 2];
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, MeesError> {
        if action.len() != 2 {
            return Err(MeesError::InvalidArgument("maze action must be 2-D".into()));
        }
        check_finite("action", action)?;
        for i in 0..2 {
            self.vel[i] += action[i].clamp(-1.0, 1.0) * self.cfg.dt;
            self.vel[i] = self.vel[i].clamp(-self.cfg.vmax, self.cfg.vmax);
        }
        let target = [
            self.pos[0] + self.vel[0] * self.cfg.dt,
            self.pos[1] + self.vel[1] * self.cfg.dt,
        ];
        if self.walls.blocks(self.pos, target) {
            self.vel = [0.0; 2];
        } else {
            self.pos = target;
        }
        self.steps += 1;
        Ok(Step { obs: self.observe(), reward: 0.0, done: self.steps >= self.cfg.max_steps })
    }

    fn descriptors(&self) -> (f64, Vec<f64>) {
        (-self.goal_distance(), self.pos.to_vec())
    }
}
