//! Unbounded point-mass field with a U-shaped wall astride the rewarded
//! +x direction. Greedy forward progress leads into the pocket; high
//! scores require a detour around it.

use serde::{Deserialize, Serialize};

use super::geometry::{Wall, WallSet};
use super::{Environment, Step};
use crate::error::{check_finite, MeesError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub dt: f64,
    pub vmax: f64,
    pub max_steps: usize,
    /// x position of the pocket's back wall.
    pub wall_x: f64,
    /// Half the opening height of the pocket.
    pub wall_half_width: f64,
    /// How far the pocket's arms extend back toward the start.
    pub wall_depth: f64,
    /// Positions are divided by this in observations.
    pub obs_scale: f64,
    /// Half-width of the default behavior grid.
    pub grid_extent: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            vmax: 2.0,
            max_steps: 200,
            wall_x: 5.0,
            wall_half_width: 2.5,
            wall_depth: 3.0,
            obs_scale: 10.0,
            grid_extent: 10.0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<(), MeesError> {
        if !(self.dt > 0.0 && self.vmax > 0.0 && self.obs_scale > 0.0 && self.grid_extent > 0.0) {
            return Err(MeesError::Config("field: dt, vmax, obs_scale, grid_extent must be > 0".into()));
        }
        if self.max_steps == 0 {
            return Err(MeesError::Config("field: max_steps must be >= 1".into()));
        }
        if !(self.wall_half_width > 0.0 && self.wall_depth > 0.0 && self.wall_x > 0.0) {
            return Err(MeesError::Config("field: wall dimensions must be > 0".into()));
        }
        Ok(())
    }

    fn walls(&self) -> WallSet {
        let (x, w, d) = (self.wall_x, self.wall_half_width, self.wall_depth);
        WallSet::new(vec![
            Wall::new([x, -w], [x, w]).expect("validated"),
            Wall::new([x - d, w], [x, w]).expect("validated"),
            Wall::new([x - d, -w], [x, -w]).expect("validated"),
        ])
    }
}

#[derive(Debug, Clone)]
pub struct DeceptiveField {
    cfg: FieldConfig,
    walls: WallSet,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
    cum_reward: f64,
}

impl DeceptiveField {
    pub fn new(cfg: FieldConfig) -> Self {
        let walls = cfg.walls();
        Self { cfg, walls, pos: [0.0; 2], vel: [0.0; 2], steps: 0, cum_reward: 0.0 }
    }

    fn observe(&self) -> Vec<f64> {
        vec![
            self.pos[0] / self.cfg.obs_scale,
            self.pos[1] / self.cfg.obs_scale,
            self.vel[0] / self.cfg.vmax,
            self.vel[1] / self.cfg.vmax,
        ]
    }
}

impl Environment for DeceptiveField {
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
        self.pos = [0.0; 2];
        self.vel = [0.0; 2];
        self.steps = 0;
        self.cum_reward = 0.0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, MeesError> {
        if action.len() != 2 {
            return Err(MeesError::InvalidArgument("field action must be 2-D".into()));
        }
        check_finite("action", action)?;
        let old_x = self.pos[0];
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
        let reward = self.pos[0] - old_x;
        self.cum_reward += reward;
        Ok(Step { obs: self.observe(), reward, done: self.steps >= self.cfg.max_steps })
    }

    fn descriptors(&self) -> (f64, Vec<f64>) {
        (self.cum_reward, self.pos.to_vec())
    }
}
