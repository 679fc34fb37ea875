//! Integer hyperparameter grid and its embedding in the unit hypercube.

use serde::{Deserialize, Serialize};

use super::BoError;
use crate::nn::ModelConfig;

/// One point of the architecture grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Candidate {
    pub cnn_layers: usize,
    pub heads: usize,
    pub filters: usize,
    pub kernel_size: usize,
}

impl Candidate {
    pub fn as_array(&self) -> [usize; 4] {
        [self.cnn_layers, self.heads, self.filters, self.kernel_size]
    }

    pub fn from_array(v: [usize; 4]) -> Self {
        Self {
            cnn_layers: v[0],
            heads: v[1],
            filters: v[2],
            kernel_size: v[3],
        }
    }

    /// `base` with the four searched fields replaced. `head_dim` is reset so it
    /// follows the new filter and head counts.
    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            cnn_layers: self.cnn_layers,
            heads: self.heads,
            filters: self.filters,
            kernel_size: self.kernel_size,
            head_dim: None,
            ..*base
        }
    }
}

impl std::fmt::Display for Candidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "layers={} heads={} filters={} kernel={}",
            self.cnn_layers, self.heads, self.filters, self.kernel_size
        )
    }
}

/// Inclusive integer ranges for the searched hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub cnn_layers: (usize, usize),
    pub heads: (usize, usize),
    pub filters: (usize, usize),
    pub kernel_size: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            cnn_layers: (1, 12),
            heads: (2, 5),
            filters: (16, 256),
            kernel_size: (2, 5),
        }
    }
}

pub const DIMS: usize = 4;

impl SearchSpace {
    pub fn ranges(&self) -> [(usize, usize); DIMS] {
        [self.cnn_layers, self.heads, self.filters, self.kernel_size]
    }

    pub fn validate(&self) -> Result<(), BoError> {
        for (name, (lo, hi)) in ["cnn_layers", "heads", "filters", "kernel_size"]
            .iter()
            .zip(self.ranges())
        {
            if lo > hi || lo == 0 {
                return Err(BoError::EmptySpace(format!("{name} range ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, c: &Candidate) -> bool {
        self.ranges()
            .iter()
            .zip(c.as_array())
            .all(|((lo, hi), v)| *lo <= v && v <= *hi)
    }

    /// Number of grid points.
    pub fn cardinality(&self) -> usize {
        self.ranges().iter().map(|(lo, hi)| hi - lo + 1).product()
    }

    pub fn to_unit(&self, c: &Candidate) -> Vec<f64> {
        self.ranges()
            .iter()
            .zip(c.as_array())
            .map(|((lo, hi), v)| {
                if hi == lo {
                    0.0
                } else {
                    (v.clamp(*lo, *hi) - lo) as f64 / (hi - lo) as f64
                }
            })
            .collect()
    }

    /// Nearest grid point to a location in the unit hypercube.
    pub fn from_unit(&self, u: &[f64]) -> Candidate {
        let r = self.ranges();
        let mut v = [0usize; DIMS];
        for d in 0..DIMS {
            let (lo, hi) = r[d];
            let t = u[d].clamp(0.0, 1.0);
            v[d] = lo + (t * (hi - lo) as f64).round() as usize;
            v[d] = v[d].clamp(lo, hi);
        }
        Candidate::from_array(v)
    }

    /// Rounds a unit-cube location onto the grid and maps it back.
    pub fn snap(&self, u: &[f64]) -> Vec<f64> {
        self.to_unit(&self.from_unit(u))
    }
}
