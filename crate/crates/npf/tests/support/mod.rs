//! Test-side oracles, independent of the library's solver path.

#![allow(dead_code)]

/// 1D linear parabolic terminal-value problem
/// `u_t + 1/2 sigma^2 u_xx + b u_x + source(t, x) = 0` on `[x_lo, x_hi]`,
/// `u(T, x) = terminal(x)`, with Robin boundary conditions written against
/// the inward normal: `du/dn + kappa u + phi = 0` at both ends, i.e.
/// `u_x(lo) = -kappa_lo u - phi_lo` and `u_x(hi) = kappa_hi u + phi_hi`.
pub struct CnProblem {
    pub x_lo: f64,
    pub x_hi: f64,
    pub sigma: f64,
    pub drift: f64,
    pub horizon: f64,
    pub source: Box<dyn Fn(f64, f64) -> f64>,
    pub terminal: Box<dyn Fn(f64) -> f64>,
    /// (kappa, phi) at the left end.
    pub robin_lo: (f64, f64),
    /// (kappa, phi) at the right end.
    pub robin_hi: (f64, f64),
}

pub struct CnSolution {
    pub x_lo: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl CnSolution {
    /// Value at time 0, linearly interpolated between grid nodes.
    pub fn value_at(&self, x: f64) -> f64 {
        let s = (x - self.x_lo) / self.dx;
        let j = (s.floor() as usize).min(self.values.len() - 2);
        let w = s - j as f64;
        self.values[j] * (1.0 - w) + self.values[j + 1] * w
    }
}

/// Crank-Nicolson with second-order ghost-node boundary rows and a Thomas
/// tridiagonal solve per step. Returns the time-0 profile.
pub fn crank_nicolson(problem: &CnProblem, space_cells: usize, time_steps: usize) -> CnSolution {
    let m = space_cells;
    let dx = (problem.x_hi - problem.x_lo) / m as f64;
    let dt = problem.horizon / time_steps as f64;
    let half_sig_sq = 0.5 * problem.sigma * problem.sigma;
    let b = problem.drift;
    let (kap_lo, phi_lo) = problem.robin_lo;
    let (kap_hi, phi_hi) = problem.robin_hi;

    let xs: Vec<f64> = (0..=m).map(|j| problem.x_lo + j as f64 * dx).collect();
    let mut u: Vec<f64> = xs.iter().map(|&x| (problem.terminal)(x)).collect();

    // A u + c: tridiagonal operator rows (sub, diag, super) and the affine
    // part coming from the inhomogeneous boundary data
    let mut sub = vec![0.0; m + 1];
    let mut diag = vec![0.0; m + 1];
    let mut sup = vec![0.0; m + 1];
    let mut affine = vec![0.0; m + 1];
    for j in 1..m {
        sub[j] = half_sig_sq / (dx * dx) - b / (2.0 * dx);
        diag[j] = -2.0 * half_sig_sq / (dx * dx);
        sup[j] = half_sig_sq / (dx * dx) + b / (2.0 * dx);
    }
    // ghost elimination at the left end: u_{-1} = u_1 + 2 dx (kap u_0 + phi)
    diag[0] = -2.0 * half_sig_sq / (dx * dx) + 2.0 * half_sig_sq * kap_lo / dx - b * kap_lo;
    sup[0] = 2.0 * half_sig_sq / (dx * dx);
    affine[0] = 2.0 * half_sig_sq * phi_lo / dx - b * phi_lo;
    // right end: u_{M+1} = u_{M-1} + 2 dx (kap u_M + phi)
    diag[m] = -2.0 * half_sig_sq / (dx * dx) + 2.0 * half_sig_sq * kap_hi / dx + b * kap_hi;
    sub[m] = 2.0 * half_sig_sq / (dx * dx);
    affine[m] = 2.0 * half_sig_sq * phi_hi / dx + b * phi_hi;

    let theta = 0.5;
    let mut rhs = vec![0.0; m + 1];
    let mut lo_band = vec![0.0; m + 1];
    let mut di_band = vec![0.0; m + 1];
    let mut up_band = vec![0.0; m + 1];

    for step in (0..time_steps).rev() {
        let t_mid = (step as f64 + 0.5) * dt;
        // rhs = (I + (1 - theta) dt A) u^{i+1} + dt (affine + source)
        for j in 0..=m {
            let au = sub[j] * if j > 0 { u[j - 1] } else { 0.0 }
                + diag[j] * u[j]
                + sup[j] * if j < m { u[j + 1] } else { 0.0 };
            rhs[j] = u[j]
                + (1.0 - theta) * dt * au
                + dt * (affine[j] + (problem.source)(t_mid, xs[j]));
            lo_band[j] = -theta * dt * sub[j];
            di_band[j] = 1.0 - theta * dt * diag[j];
            up_band[j] = -theta * dt * sup[j];
        }
        thomas_solve(&lo_band, &mut di_band, &up_band, &mut rhs, &mut u);
    }
    CnSolution {
        x_lo: problem.x_lo,
        dx,
        values: u,
    }
}

fn thomas_solve(lo: &[f64], diag: &mut [f64], up: &[f64], rhs: &mut [f64], out: &mut [f64]) {
    let n = diag.len();
    for j in 1..n {
        let w = lo[j] / diag[j - 1];
        diag[j] -= w * up[j - 1];
        rhs[j] -= w * rhs[j - 1];
    }
    out[n - 1] = rhs[n - 1] / diag[n - 1];
    for j in (0..n - 1).rev() {
        out[j] = (rhs[j] - up[j] * out[j + 1]) / diag[j];
    }
}

/// Central finite differences of a scalar field, for validating the
/// hand-written derivatives of manufactured solutions.
pub fn fd_time_derivative(f: &dyn Fn(f64, &[f64]) -> f64, t: f64, x: &[f64], h: f64) -> f64 {
    (f(t + h, x) - f(t - h, x)) / (2.0 * h)
}

pub fn fd_gradient(f: &dyn Fn(f64, &[f64]) -> f64, t: f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let up = f(t, &xp);
        xp[j] = x[j] - h;
        let dn = f(t, &xp);
        xp[j] = x[j];
        out[j] = (up - dn) / (2.0 * h);
    }
    out
}

pub fn fd_second_derivative(f: &dyn Fn(f64, &[f64]) -> f64, t: f64, x: &[f64], j: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mid = f(t, x);
    xp[j] = x[j] + h;
    let up = f(t, &xp);
    xp[j] = x[j] - h;
    let dn = f(t, &xp);
    (up - 2.0 * mid + dn) / (h * h)
}

#[cfg(test)]
mod self_checks {
    // The oracle file is shared by several integration-test binaries; its
    // own correctness checks live in the binaries that use it.
}
