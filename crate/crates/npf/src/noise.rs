//! Counter-based Brownian increments.
//!
//! Each `(seed, path, step)` triple is hashed into a fresh stream cipher
//! state, so any increment can be produced in isolation, in any order, on
//! any number of workers, with bit-identical results. This is what lets
//! the penalized and reflected schemes share one Brownian motion and the
//! backward solver regenerate increments without storing them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NpfError, Result};
use crate::grid::TimeGrid;

/// Identifies a Brownian ensemble: enough to regenerate every increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub seed: u64,
    pub noise_dim: usize,
}

/// A lazily generated ensemble of `n_paths` Brownian paths on `grid`,
/// with `Normal(0, dt)` increments per coordinate.
#[derive(Debug, Clone)]
pub struct NoiseBundle {
    pub spec: NoiseSpec,
    pub n_paths: usize,
    pub grid: TimeGrid,
}

impl NoiseBundle {
    pub fn new(seed: u64, n_paths: usize, grid: TimeGrid, noise_dim: usize) -> Result<Self> {
        if n_paths == 0 {
            return Err(NpfError::invalid("mc.n_paths must be >= 1"));
        }
        if noise_dim == 0 {
            return Err(NpfError::invalid("noise_dim must be >= 1"));
        }
        Ok(NoiseBundle {
            spec: NoiseSpec { seed, noise_dim },
            n_paths,
            grid,
        })
    }

    /// Writes the `noise_dim` increments of `(path, step)` into `out`.
    pub fn increment_into(&self, path: usize, step: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.spec.noise_dim);
        debug_assert!(path < self.n_paths && step < self.grid.steps);
        let sqrt_dt = self.grid.dt().sqrt();
        let mut rng = rng_for(self.spec.seed, path as u64, step as u64);
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = z * sqrt_dt;
        }
    }

    pub fn increment(&self, path: usize, step: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.noise_dim];
        self.increment_into(path, step, &mut out);
        out
    }
}

/// A fresh generator per counter value; splitmix64 rounds give full
/// avalanche between neighbouring (seed, path, step) triples.
fn rng_for(seed: u64, path: u64, step: u64) -> ChaCha8Rng {
    let mut h = splitmix64(seed ^ 0x9E37_79B9_7F4A_7C15);
    h = splitmix64(h ^ path);
    h = splitmix64(h ^ step);
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
