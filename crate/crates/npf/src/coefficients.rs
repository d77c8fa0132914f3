//! Coefficient bundles for the forward diffusion and the backward equation.
//!
//! Coefficients are plain closures plus the declared structural constants
//! (growth, Lipschitz, monotonicity). The constants are metadata: the
//! simulators never need them, but `probe_assumptions` checks sampled
//! behaviour against them and the manufactured problems document theirs.

use std::sync::Arc;

use crate::error::{NpfError, Result};

type VecField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type DriverFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
type BoundaryFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
type TerminalFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Drift and diffusion of the forward SDE, with their declared constants.
#[derive(Clone)]
pub struct ForwardCoefficients {
    pub dim: usize,
    pub noise_dim: usize,
    /// Linear growth constant: |b(x)| + |sigma(x)| <= C (1 + |x|).
    pub growth_const: f64,
    /// Lipschitz constant of (b, sigma).
    pub lipschitz_const: f64,
    drift: VecField,
    /// Writes the `dim x noise_dim` diffusion matrix, row-major.
    diffusion: VecField,
}

impl ForwardCoefficients {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        growth_const: f64,
        lipschitz_const: f64,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 || noise_dim == 0 {
            return Err(NpfError::invalid("state and noise dimensions must be >= 1"));
        }
        if growth_const < 0.0 || lipschitz_const < 0.0 {
            return Err(NpfError::invalid("coefficient constants must be nonnegative"));
        }
        Ok(ForwardCoefficients {
            dim,
            noise_dim,
            growth_const,
            lipschitz_const,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
        })
    }

    /// Constant drift, constant scalar diffusion `sigma * I` (d' = d).
    pub fn constant(dim: usize, drift: Vec<f64>, sigma: f64) -> Result<Self> {
        if drift.len() != dim {
            return Err(NpfError::DimensionMismatch {
                context: "constant drift",
                expected: dim,
                got: drift.len(),
            });
        }
        let b = drift.clone();
        let growth = drift.iter().map(|v| v.abs()).sum::<f64>().max(sigma.abs()) + sigma.abs();
        ForwardCoefficients::new(
            dim,
            dim,
            growth,
            0.0,
            move |_x, out| out.copy_from_slice(&b),
            move |_x, out| {
                out.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..dim {
                    out[i * dim + i] = sigma;
                }
            },
        )
    }

    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        (self.drift)(x, out);
    }

    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim * self.noise_dim);
        (self.diffusion)(x, out);
    }
}

/// Driver `f`, boundary driver `h`, and terminal condition `g` of the
/// backward equation, with the declared constants they are supposed to
/// satisfy: `<y - y', f(..y..) - f(..y'..)> <= mu_f |y - y'|^2`,
/// `|f(..z..) - f(..z'..)| <= l_f |z - z'|`,
/// `<y - y', h(..y..) - h(..y'..)> <= beta |y - y'|^2` with `beta < 0`,
/// and linear growth with constant `growth_const`.
#[derive(Clone)]
pub struct BackwardCoefficients {
    /// System size m.
    pub system_size: usize,
    /// Noise dimension d' (z is m x d').
    pub noise_dim: usize,
    pub mu_f: f64,
    pub l_f: f64,
    pub beta: f64,
    pub growth_const: f64,
    /// Whether component i of the driver reads only row i of z.
    pub row_structure: bool,
    driver: DriverFn,
    boundary: BoundaryFn,
    terminal: TerminalFn,
}

impl BackwardCoefficients {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system_size: usize,
        noise_dim: usize,
        mu_f: f64,
        l_f: f64,
        beta: f64,
        growth_const: f64,
        row_structure: bool,
        driver: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        boundary: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        terminal: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if system_size == 0 || noise_dim == 0 {
            return Err(NpfError::invalid("system size and noise dimension must be >= 1"));
        }
        if beta >= 0.0 {
            return Err(NpfError::invalid(format!("beta must be < 0, got {beta}")));
        }
        if l_f < 0.0 || growth_const < 0.0 {
            return Err(NpfError::invalid("l_f and growth_const must be nonnegative"));
        }
        Ok(BackwardCoefficients {
            system_size,
            noise_dim,
            mu_f,
            l_f,
            beta,
            growth_const,
            row_structure,
            driver: Arc::new(driver),
            boundary: Arc::new(boundary),
            terminal: Arc::new(terminal),
        })
    }

    /// `f(t, x, y, z)` into `out`; `z` is row-major `m x d'`.
    pub fn driver_into(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.system_size);
        debug_assert_eq!(z.len(), self.system_size * self.noise_dim);
        debug_assert_eq!(out.len(), self.system_size);
        (self.driver)(t, x, y, z, out);
    }

    /// `h(t, x, y)` into `out`.
    pub fn boundary_into(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.system_size);
        debug_assert_eq!(out.len(), self.system_size);
        (self.boundary)(t, x, y, out);
    }

    /// `g(x)` into `out`.
    pub fn terminal_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.system_size);
        (self.terminal)(x, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_forward_coefficients() {
        let c = ForwardCoefficients::constant(2, vec![1.0, -2.0], 0.5).unwrap();
        let mut b = [0.0; 2];
        c.drift_into(&[9.0, 9.0], &mut b);
        assert_eq!(b, [1.0, -2.0]);
        let mut s = [0.0; 4];
        c.diffusion_into(&[0.0, 0.0], &mut s);
        assert_eq!(s, [0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn backward_requires_negative_beta() {
        let r = BackwardCoefficients::new(
            1,
            1,
            0.0,
            0.0,
            0.0,
            1.0,
            true,
            |_, _, _, _, out| out[0] = 0.0,
            |_, _, _, out| out[0] = 0.0,
            |_, out| out[0] = 0.0,
        );
        assert!(r.is_err());
    }
}
