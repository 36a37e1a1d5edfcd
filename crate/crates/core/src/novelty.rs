//! Append-only archive of past behavior descriptors with k-nearest-
//! neighbor novelty scoring.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, MeesError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoveltyArchive {
    bcs: Vec<Vec<f64>>,
    k: usize,
}

impl NoveltyArchive {
    pub fn new(k: usize) -> Result<Self, MeesError> {
        if k == 0 {
            return Err(MeesError::InvalidArgument("novelty k must be >= 1".into()));
        }
        Ok(Self { bcs: Vec::new(), k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.bcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bcs.is_empty()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.bcs
    }

    pub fn add_bc(&mut self, bc: Vec<f64>) -> Result<(), MeesError> {
        check_finite("bc", &bc)?;
        self.bcs.push(bc);
        Ok(())
    }

    /// Mean Euclidean distance from `bc` to its min(k, len) nearest
    /// entries. Empty archive scores +∞ (maximally novel). The k nearest
    /// distances are summed in ascending order so the result agrees
    /// bit-for-bit with a full-sort reference.
    pub fn novelty(&self, bc: &[f64]) -> f64 {
        if self.bcs.is_empty() {
            return f64::INFINITY;
        }
        let mut dists: Vec<f64> = self
            .bcs
            .iter()
            .map(|e| {
                e.iter()
                    .zip(bc)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let k = self.k.min(dists.len());
        if k < dists.len() {
            dists.select_nth_unstable_by(k - 1, f64::total_cmp);
            dists.truncate(k);
        }
        dists.sort_unstable_by(f64::total_cmp);
        dists.iter().sum::<f64>() / k as f64
    }
}
