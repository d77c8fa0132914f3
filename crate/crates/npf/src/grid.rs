use serde::{Deserialize, Serialize};

use crate::error::{NpfError, Result};

/// Uniform time grid on `[t0, horizon]` with `steps` Euler steps.
///
/// Nodes are `t_i = t0 + i * dt`, `i = 0..=steps`, `dt = (horizon - t0) / steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && horizon.is_finite()) {
            return Err(NpfError::invalid("time grid endpoints must be finite"));
        }
        if t0 < 0.0 {
            return Err(NpfError::invalid(format!("grid.t0 must be >= 0, got {t0}")));
        }
        if t0 >= horizon {
            return Err(NpfError::invalid(format!(
                "grid requires t0 < horizon, got t0 = {t0}, horizon = {horizon}"
            )));
        }
        if steps == 0 {
            return Err(NpfError::invalid("grid.steps must be >= 1"));
        }
        Ok(TimeGrid { t0, horizon, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.steps);
        self.t0 + i as f64 * self.dt()
    }

    /// Grid over `[t, horizon]` with the same target step size, used when a
    /// query time lands strictly inside the configured interval.
    pub fn restarted_at(&self, t: f64) -> Result<Self> {
        let dt = self.dt();
        let steps = ((self.horizon - t) / dt).round().max(1.0) as usize;
        TimeGrid::new(t, self.horizon, steps)
    }
}
