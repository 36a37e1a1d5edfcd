//! Axis-aligned wall segments and the crossing test used for collisions.

use crate::error::MeesError;

/// Axis-aligned segment from `a` to `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Wall {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Wall {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Result<Self, MeesError> {
        if a == b {
            return Err(MeesError::Config(format!("zero-length wall at ({}, {})", a[0], a[1])));
        }
        if a[0] != b[0] && a[1] != b[1] {
            return Err(MeesError::Config(format!(
                "wall ({},{})-({},{}) is not axis-aligned",
                a[0], a[1], b[0], b[1]
            )));
        }
        Ok(Self { a, b })
    }

    /// 0 if the wall is vertical (constant x), 1 if horizontal.
    fn fixed_axis(&self) -> usize {
        if self.a[0] == self.b[0] {
            0
        } else {
            1
        }
    }

    /// Does the directed motion segment from → to cross (or land on) this
    /// wall? Touching the wall's line within its extent counts.
    pub fn blocks(&self, from: [f64; 2], to: [f64; 2]) -> bool {
        let ax = self.fixed_axis();
        let other = 1 - ax;
        let c = self.a[ax];
        let (lo, hi) = {
            let (p, q) = (self.a[other], self.b[other]);
            if p <= q {
                (p, q)
            } else {
                (q, p)
            }
        };
        let d_from = from[ax] - c;
        let d_to = to[ax] - c;
        if d_from * d_to > 0.0 {
            return false;
        }
        if d_from == 0.0 && d_to == 0.0 {
            // Motion along the wall's own line: blocked only if the
            // ranges overlap.
            let (mlo, mhi) = if from[other] <= to[other] {
                (from[other], to[other])
            } else {
                (to[other], from[other])
            };
            return mhi >= lo && mlo <= hi;
        }
        let t = d_from / (d_from - d_to);
        let at = from[other] + t * (to[other] - from[other]);
        (lo..=hi).contains(&at)
    }
}

/// A collection of walls; the collision query used by the environments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WallSet {
    pub walls: Vec<Wall>,
}

impl WallSet {
    pub fn new(walls: Vec<Wall>) -> Self {
        Self { walls }
    }

    /// Parses one wall per line as `x1 y1 x2 y2`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, MeesError> {
        let mut walls = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        MeesError::Config(format!("geometry line {}: bad number {t:?}", lineno + 1))
                    })
                })
                .collect::<Result<_, _>>()?;
            if nums.len() != 4 {
                return Err(MeesError::Config(format!(
                    "geometry line {}: expected 4 numbers, got {}",
                    lineno + 1,
                    nums.len()
                )));
            }
            walls.push(Wall::new([nums[0], nums[1]], [nums[2], nums[3]])?);
        }
        Ok(Self { walls })
    }

    pub fn blocks(&self, from: [f64; 2], to: [f64; 2]) -> bool {
        self.walls.iter().any(|w| w.blocks(from, to))
    }
}
