//! Grid-discretized archive of elites: one champion per behavior cell,
//! insertion by the two archive rules (fill empty cell, or beat the
//! incumbent's fitness).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, MeesError};
use crate::policy::PolicyParams;

/// Rectangular grid over behavior space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
    pub bins_per_dim: Vec<usize>,
}

impl GridSpec {
    pub fn new(
        lower_bounds: Vec<f64>,
        upper_bounds: Vec<f64>,
        bins_per_dim: Vec<usize>,
    ) -> Result<Self, MeesError> {
        let d = lower_bounds.len();
        if d == 0 || upper_bounds.len() != d || bins_per_dim.len() != d {
            return Err(MeesError::InvalidArgument(
                "grid bound/bin lists must share a nonzero length".into(),
            ));
        }
        for i in 0..d {
            if !(lower_bounds[i] < upper_bounds[i]) {
                return Err(MeesError::InvalidArgument(format!(
                    "grid dim {i}: lower {} must be < upper {}",
                    lower_bounds[i], upper_bounds[i]
                )));
            }
            if bins_per_dim[i] == 0 {
                return Err(MeesError::InvalidArgument(format!("grid dim {i}: bins must be >= 1")));
            }
        }
        Ok(Self { lower_bounds, upper_bounds, bins_per_dim })
    }

    pub fn dim(&self) -> usize {
        self.lower_bounds.len()
    }

    /// Maps a behavior vector to its cell index, clamping out-of-bounds
    /// coordinates to the edge bins.
    pub fn bc_to_cell(&self, bc: &[f64]) -> Result<Vec<usize>, MeesError> {
        if bc.len() != self.dim() {
            return Err(MeesError::InvalidArgument(format!(
                "bc has {} dims, grid has {}",
                bc.len(),
                self.dim()
            )));
        }
        check_finite("bc", bc)?;
        let mut cell = Vec::with_capacity(bc.len());
        for i in 0..bc.len() {
            let span = self.upper_bounds[i] - self.lower_bounds[i];
            let raw = ((bc[i] - self.lower_bounds[i]) / span * self.bins_per_dim[i] as f64)
                .floor() as i64;
            cell.push(raw.clamp(0, self.bins_per_dim[i] as i64 - 1) as usize);
        }
        Ok(cell)
    }

    /// Center of a cell in grid-normalized coordinates (each dimension
    /// scaled to [0,1]).
    pub fn cell_center_normalized(&self, cell: &[usize]) -> Vec<f64> {
        cell.iter()
            .zip(&self.bins_per_dim)
            .map(|(&c, &b)| (c as f64 + 0.5) / b as f64)
            .collect()
    }

    /// A descriptor in grid-normalized coordinates, clamped to [0,1].
    pub fn normalize_bc(&self, bc: &[f64]) -> Vec<f64> {
        bc.iter()
            .zip(self.lower_bounds.iter().zip(&self.upper_bounds))
            .map(|(&x, (&lo, &hi))| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }
}

/// Archive entry: the best controller seen so far for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub params: PolicyParams,
    pub fitness: f64,
    pub bc: Vec<f64>,
    pub novelty: f64,
    pub gen_added: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    NewCell,
    Replaced,
    Rejected,
}

/// Archive statistics at a point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStats {
    pub coverage: usize,
    pub best_fitness: f64,
    pub best_cell: Option<Vec<usize>>,
}

/// Sparse elite grid plus the ordered history of cell updates.
#[derive(Debug, Clone)]
pub struct BehaviorMap {
    spec: GridSpec,
    cells: BTreeMap<Vec<usize>, Elite>,
    update_log: Vec<(u64, Vec<usize>)>,
}

impl BehaviorMap {
    pub fn new(spec: GridSpec) -> Self {
        Self { spec, cells: BTreeMap::new(), update_log: Vec::new() }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, cell: &[usize]) -> Option<&Elite> {
        self.cells.get(cell)
    }

    /// Elites in deterministic (lexicographic cell) order.
    pub fn elites(&self) -> impl Iterator<Item = (&Vec<usize>, &Elite)> {
        self.cells.iter()
    }

    /// (generation, cell) pairs in insertion order, one per accepted
    /// insertion.
    pub fn update_log(&self) -> &[(u64, Vec<usize>)] {
        &self.update_log
    }

    /// Offers a candidate: fills an empty cell, replaces a strictly worse
    /// incumbent, otherwise leaves the map untouched. Ties keep the
    /// incumbent.
    pub fn try_insert(&mut self, candidate: Elite) -> Result<InsertOutcome, MeesError> {
        if !candidate.fitness.is_finite() {
            return Err(MeesError::NonFinite(format!(
                "candidate fitness = {}",
                candidate.fitness
            )));
        }
        let cell = self.spec.bc_to_cell(&candidate.bc)?;
        match self.cells.get(&cell) {
            None => {
                self.update_log.push((candidate.gen_added, cell.clone()));
                self.cells.insert(cell, candidate);
                Ok(InsertOutcome::NewCell)
            }
            Some(incumbent) if candidate.fitness > incumbent.fitness => {
                self.update_log.push((candidate.gen_added, cell.clone()));
                self.cells.insert(cell, candidate);
                Ok(InsertOutcome::Replaced)
            }
            Some(_) => Ok(InsertOutcome::Rejected),
        }
    }

    pub fn stats(&self) -> MapStats {
        let mut best_fitness = f64::NEG_INFINITY;
        let mut best_cell = None;
        for (cell, elite) in &self.cells {
            if elite.fitness > best_fitness {
                best_fitness = elite.fitness;
                best_cell = Some(cell.clone());
            }
        }
        MapStats { coverage: self.cells.len(), best_fitness, best_cell }
    }

    /// Rebuilds a map from parts; used when loading an archive file.
    pub fn from_parts(
        spec: GridSpec,
        entries: Vec<Elite>,
        update_log: Vec<(u64, Vec<usize>)>,
    ) -> Result<Self, MeesError> {
        let mut cells = BTreeMap::new();
        for e in entries {
            let cell = spec.bc_to_cell(&e.bc)?;
            if cells.insert(cell.clone(), e).is_some() {
                return Err(MeesError::Persist(format!("duplicate elite for cell {cell:?}")));
            }
        }
        Ok(Self { spec, cells, update_log })
    }
}
