//! Redundant planar arm, one decision per episode: actions set joint
//! angles directly, damage freezes chosen joints, and the behavior
//! descriptor is where the end effector lands.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::{Environment, Step};
use crate::error::{check_finite, MeesError};

/// Joints forced to a fixed angle regardless of the commanded action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageSpec {
    pub frozen_joints: BTreeSet<usize>,
    #[serde(default)]
    pub frozen_value: f64,
}

impl DamageSpec {
    pub fn single(joint: usize, frozen_value: f64) -> Self {
        Self { frozen_joints: BTreeSet::from([joint]), frozen_value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmConfig {
    pub n_joints: usize,
    pub damage: Option<DamageSpec>,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self { n_joints: 8, damage: None }
    }
}

impl ArmConfig {
    pub fn validate(&self) -> Result<(), MeesError> {
        if self.n_joints == 0 {
            return Err(MeesError::Config("arm: n_joints must be >= 1".into()));
        }
        if let Some(d) = &self.damage {
            if !d.frozen_value.is_finite() {
                return Err(MeesError::Config("arm damage: frozen_value must be finite".into()));
            }
            for &j in &d.frozen_joints {
                if j >= self.n_joints {
                    return Err(MeesError::Config(format!(
                        "arm damage: joint {j} out of range (arm has {})",
                        self.n_joints
                    )));
                }
            }
        }
        Ok(())
    }
}

/// End-effector position for joint angles, links of equal length summing
/// to 1: each joint angle is relative to the previous link's direction.
pub fn forward_kinematics(angles: &[f64]) -> [f64; 2] {
    let link = 1.0 / angles.len() as f64;
    let mut heading = 0.0;
    let mut pos = [0.0, 0.0];
    for &a in angles {
        heading += a;
        pos[0] += link * heading.cos();
        pos[1] += link * heading.sin();
    }
    pos
}

#[derive(Debug, Clone)]
pub struct RedundantArm {
    cfg: ArmConfig,
    fitness: f64,
    bc: Vec<f64>,
    done: bool,
}

impl RedundantArm {
    pub fn new(cfg: ArmConfig) -> Self {
        let n = cfg.n_joints;
        Self { cfg, fitness: 0.0, bc: initial_bc(n), done: false }
    }
}

fn initial_bc(n_joints: usize) -> Vec<f64> {
    let pos = forward_kinematics(&vec![0.0; n_joints]);
    vec![(pos[0] + 1.0) / 2.0, (pos[1] + 1.0) / 2.0]
}

impl Environment for RedundantArm {
    fn obs_dim(&self) -> usize {
        self.cfg.n_joints
    }

    fn act_dim(&self) -> usize {
        self.cfg.n_joints
    }

    fn bc_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.fitness = 0.0;
        self.bc = initial_bc(self.cfg.n_joints);
        self.done = false;
        vec![1.0; self.cfg.n_joints]
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, MeesError> {
        if action.len() != self.cfg.n_joints {
            return Err(MeesError::InvalidArgument(format!(
                "arm action has {} entries, needs {}",
                action.len(),
                self.cfg.n_joints
            )));
        }
        check_finite("action", action)?;
        let angles: Vec<f64> = action
            .iter()
            .enumerate()
            .map(|(i, &a)| match &self.cfg.damage {
                Some(d) if d.frozen_joints.contains(&i) => d.frozen_value,
                _ => a.clamp(-1.0, 1.0) * FRAC_PI_2,
            })
            .collect();
        let n = angles.len() as f64;
        let mean = angles.iter().sum::<f64>() / n;
        let var = angles.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        self.fitness = -var.sqrt();
        let pos = forward_kinematics(&angles);
        self.bc = vec![(pos[0] + 1.0) / 2.0, (pos[1] + 1.0) / 2.0];
        self.done = true;
        Ok(Step { obs: vec![1.0; self.cfg.n_joints], reward: self.fitness, done: true })
    }

    fn descriptors(&self) -> (f64, Vec<f64>) {
        (self.fitness, self.bc.clone())
    }
}
