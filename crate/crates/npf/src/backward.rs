//! Backward induction for the generalized backward equation
//! `Y_i = E_i[Y_{i+1}] + f(t_i, X_i, Y_i, Z_i) dt + h(t_i, X_i, Y_i) dk_i`
//! over a simulated path ensemble, with `Y_T = g(X_T)` per path.
//!
//! Conditional expectations are least-squares projections on polynomial
//! features of the current state. Targets and features are centered
//! against their ensemble means and the intercept is carried analytically,
//! so constant data reproduces exactly: constant terminal conditions give
//! `Y` constant and `Z` identically zero bit for bit. The `Z` target is
//! the centered `(Y_{i+1} - mean) (dW_i)^T / dt`, which has the same
//! conditional expectation as the uncentered version but far lower
//! variance. The driver is monotone rather than Lipschitz in `y`, so each
//! step solves its implicit equation by Picard iteration started from the
//! regressed continuation value.

use rayon::prelude::*;

use nalgebra::DMatrix;

use crate::coefficients::BackwardCoefficients;
use crate::error::{NpfError, Result};
use crate::forward::PathBundle;
use crate::geometry::Domain;
use crate::grid::TimeGrid;
use crate::regression::{regress, PolynomialBasis, RegressionConfig, RegressionFit};
use crate::stats::{deterministic_sum_vec, mean_stderr, MeanStderr};

/// Per-step regression coefficient record.
#[derive(Debug, Clone)]
pub struct StepModel {
    pub step: usize,
    pub time: f64,
    /// Ensemble mean of the continuation targets (length m).
    pub continuation_intercept: Vec<f64>,
    /// Centered-feature coefficients, `(n_basis - 1) x m` row-major.
    pub continuation_coeffs: Vec<f64>,
    /// Ensemble mean of the z targets (length m * d').
    pub z_intercept: Vec<f64>,
    /// Centered-feature coefficients, `(n_basis - 1) x (m * d')` row-major.
    pub z_coeffs: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    /// Largest Picard update at each time step, step-indexed.
    pub picard_residuals: Vec<f64>,
    /// Steps whose final Picard update exceeded the tolerance.
    pub picard_failures: Vec<usize>,
    pub condition_warnings: Vec<String>,
}

impl SolveDiagnostics {
    pub fn picard_converged(&self) -> bool {
        self.picard_failures.is_empty()
    }
}

/// Solution samples of the backward equation over one path ensemble.
#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub system_size: usize,
    pub noise_dim: usize,
    /// `steps + 1` slabs of `n_paths * m`.
    y_steps: Vec<Vec<f64>>,
    /// `steps` slabs of `n_paths * m * d'`.
    z_steps: Vec<Vec<f64>>,
    /// Cross-path mean of `Y` at the grid start (all paths share the
    /// start state, so the conditional expectation there is the plain mean).
    pub y0: Vec<f64>,
    /// Standard error of `y0`, from the spread of the pathwise functional
    /// `g(X_T) + sum f dt + sum h dk` whose expectation `y0` estimates.
    pub y0_stderr: Vec<f64>,
    pub models: Vec<StepModel>,
    pub diagnostics: SolveDiagnostics,
}

impl BackwardSolution {
    pub fn value(&self, p: usize, i: usize) -> &[f64] {
        &self.y_steps[i][p * self.system_size..(p + 1) * self.system_size]
    }

    /// `Z` sample on step `i` (constant over `[t_i, t_{i+1})`), row-major `m x d'`.
    pub fn z_value(&self, p: usize, i: usize) -> &[f64] {
        let w = self.system_size * self.noise_dim;
        &self.z_steps[i][p * w..(p + 1) * w]
    }

    /// Value at an arbitrary time; times before the grid start return the
    /// initial value (constant extension, applied on query).
    pub fn value_at(&self, p: usize, t: f64) -> Vec<f64> {
        if t <= self.grid.t0 {
            return self.value(p, 0).to_vec();
        }
        let i = (((t - self.grid.t0) / self.grid.dt()).floor() as usize).min(self.grid.steps);
        self.value(p, i).to_vec()
    }

    /// `Z` at an arbitrary time; zero before the grid start.
    pub fn z_at(&self, p: usize, t: f64) -> Vec<f64> {
        let w = self.system_size * self.noise_dim;
        if t < self.grid.t0 {
            return vec![0.0; w];
        }
        let i = (((t - self.grid.t0) / self.grid.dt()).floor() as usize)
            .min(self.grid.steps.saturating_sub(1));
        self.z_value(p, i).to_vec()
    }
}

/// Evaluates a centered-design fit: `intercept + coeffs . (features - feature_mean)`,
/// skipping the leading constant feature.
fn predict_centered(
    fit: &RegressionFit,
    intercept: &[f64],
    feature_row: &[f64],
    feature_mean: &[f64],
    out: &mut [f64],
) {
    out.copy_from_slice(intercept);
    let nc = fit.coeffs.nrows();
    for j in 0..nc {
        let fj = feature_row[1 + j] - feature_mean[1 + j];
        for (q, o) in out.iter_mut().enumerate() {
            *o += fit.coeffs[(j, q)] * fj;
        }
    }
}

/// Solves the backward equation over `paths` by regression Monte Carlo
/// backward induction. Works identically on penalized and reflected
/// bundles; the boundary increments `dk` come from the bundle.
pub fn solve_bsde(
    paths: &PathBundle,
    coeffs: &BackwardCoefficients,
    reg: &RegressionConfig,
) -> Result<BackwardSolution> {
    reg.validate()?;
    if coeffs.noise_dim != paths.noise_dim() {
        return Err(NpfError::DimensionMismatch {
            context: "backward coefficients vs bundle noise",
            expected: paths.noise_dim(),
            got: coeffs.noise_dim,
        });
    }
    let n = paths.n_paths;
    let steps = paths.grid.steps;
    let dim = paths.dim;
    let m = coeffs.system_size;
    let dp = coeffs.noise_dim;
    let dt = paths.grid.dt();
    let noise = paths.noise_bundle();

    let mut y_steps: Vec<Vec<f64>> = vec![vec![0.0; n * m]; steps + 1];
    let mut z_steps: Vec<Vec<f64>> = vec![vec![0.0; n * m * dp]; steps];
    // running sum of the f dt + h dk increments actually applied per path
    let mut source_accum: Vec<f64> = vec![0.0; n * m];

    y_steps[steps]
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(p, out)| coeffs.terminal_into(paths.state(p, steps), out));

    let mut models = Vec::with_capacity(steps);
    let mut diagnostics = SolveDiagnostics {
        picard_residuals: vec![0.0; steps],
        ..SolveDiagnostics::default()
    };

    for i in (0..steps).rev() {
        let t_i = paths.grid.node(i);
        let basis = PolynomialBasis::fit(n, dim, reg.basis_degree, |p| paths.state(p, i));
        let nb = basis.len();

        // feature rows and their ensemble means
        let mut feats = vec![0.0; n * nb];
        feats.par_chunks_mut(nb).enumerate().for_each(|(p, row)| {
            basis.eval_into(paths.state(p, i), row);
        });
        let mut fmean = deterministic_sum_vec(n, nb, |p, out| {
            out.copy_from_slice(&feats[p * nb..(p + 1) * nb]);
        });
        fmean.iter_mut().for_each(|v| *v /= n as f64);

        let (y_cur, y_next) = {
            let (a, b) = y_steps.split_at_mut(i + 1);
            (&mut a[i], &b[0])
        };
        let mut ymean = deterministic_sum_vec(n, m, |p, out| {
            out.copy_from_slice(&y_next[p * m..(p + 1) * m]);
        });
        ymean.iter_mut().for_each(|v| *v /= n as f64);

        // centered z targets (Y_{i+1} - mean) dW^T / dt and their means
        let mut z_targets = vec![0.0; n * m * dp];
        z_targets
            .par_chunks_mut(m * dp)
            .enumerate()
            .for_each(|(p, out)| {
                let mut dw = vec![0.0; dp];
                noise.increment_into(p, i, &mut dw);
                for j in 0..m {
                    let yc = y_next[p * m + j] - ymean[j];
                    for l in 0..dp {
                        out[j * dp + l] = yc * dw[l] / dt;
                    }
                }
            });
        let mut zmean = deterministic_sum_vec(n, m * dp, |p, out| {
            out.copy_from_slice(&z_targets[p * m * dp..(p + 1) * m * dp]);
        });
        zmean.iter_mut().for_each(|v| *v /= n as f64);

        // centered design matrix shared by both regressions
        let design = DMatrix::from_fn(n, nb - 1, |p, j| feats[p * nb + 1 + j] - fmean[1 + j]);

        let z_fit = fit_centered(&design, n, m * dp, reg.ridge, |p, q| {
            z_targets[p * m * dp + q] - zmean[q]
        })?;
        if let Some(w) = &z_fit.warning {
            diagnostics
                .condition_warnings
                .push(format!("step {i} (z regression): {w}"));
        }
        let c_fit = fit_centered(&design, n, m, reg.ridge, |p, q| {
            y_next[p * m + q] - ymean[q]
        })?;
        if let Some(w) = &c_fit.warning {
            diagnostics
                .condition_warnings
                .push(format!("step {i} (continuation regression): {w}"));
        }

        // per-path prediction, implicit Picard step, and bookkeeping
        let z_step = &mut z_steps[i];
        let step_residual = y_cur
            .par_chunks_mut(m)
            .zip(z_step.par_chunks_mut(m * dp))
            .zip(source_accum.par_chunks_mut(m))
            .enumerate()
            .map(|(p, ((y_out, z_out), src))| {
                let row = &feats[p * nb..(p + 1) * nb];
                predict_centered(&z_fit, &zmean, row, &fmean, z_out);
                let mut cont = vec![0.0; m];
                predict_centered(&c_fit, &ymean, row, &fmean, &mut cont);
                if let Some(bound) = reg.clamp_bound {
                    cont.iter_mut().for_each(|v| *v = v.clamp(-bound, bound));
                }
                let x = paths.state(p, i);
                let dk = paths.boundary_functional(p, i + 1) - paths.boundary_functional(p, i);
                let mut f_buf = vec![0.0; m];
                let mut h_buf = vec![0.0; m];
                let mut y = cont.clone();
                let mut residual = f64::INFINITY;
                let mut prev_residual = f64::INFINITY;
                for _ in 0..reg.picard_iters {
                    coeffs.driver_into(t_i, x, &y, z_out, &mut f_buf);
                    coeffs.boundary_into(t_i, x, &y, &mut h_buf);
                    prev_residual = residual;
                    residual = 0.0;
                    for j in 0..m {
                        let updated = cont[j] + f_buf[j] * dt + h_buf[j] * dk;
                        residual = residual.max((updated - y[j]).abs());
                        y[j] = updated;
                    }
                    if residual <= reg.picard_tol {
                        break;
                    }
                }
                for j in 0..m {
                    src[j] += f_buf[j] * dt + h_buf[j] * dk;
                }
                y_out.copy_from_slice(&y);
                // a non-contracting iteration is the failure mode; residuals
                // above tol but still shrinking are the normal O(dt^J) state
                let diverged = residual > reg.picard_tol && residual >= prev_residual;
                (residual, diverged)
            })
            .reduce(|| (0.0f64, false), |a, b| (a.0.max(b.0), a.1 || b.1));

        diagnostics.picard_residuals[i] = step_residual.0;
        if step_residual.1 {
            diagnostics.picard_failures.push(i);
        }

        models.push(StepModel {
            step: i,
            time: t_i,
            continuation_intercept: ymean,
            continuation_coeffs: c_fit.coeffs.transpose().as_slice().to_vec(),
            z_intercept: zmean,
            z_coeffs: z_fit.coeffs.transpose().as_slice().to_vec(),
        });
    }
    models.reverse();

    // y0 is the plain cross-path mean; its standard error comes from the
    // pathwise functional G_p = g(X_T) + sum (f dt + h dk), which has the
    // same expectation and carries the Monte Carlo noise of the estimate.
    let mut y0 = deterministic_sum_vec(n, m, |p, out| {
        out.copy_from_slice(&y_steps[0][p * m..(p + 1) * m]);
    });
    y0.iter_mut().for_each(|v| *v /= n as f64);
    let mut y0_stderr = vec![0.0; m];
    for j in 0..m {
        let stat = mean_stderr(n, |p| {
            let terminal = y_steps[steps][p * m + j];
            terminal + source_accum[p * m + j]
        });
        y0_stderr[j] = stat.stderr;
    }

    Ok(BackwardSolution {
        grid: paths.grid,
        n_paths: n,
        system_size: m,
        noise_dim: dp,
        y_steps,
        z_steps,
        y0,
        y0_stderr,
        models,
        diagnostics,
    })
}

/// Regression of centered targets on the centered design; a zero-column
/// design (degree-0 basis) short-circuits to the intercept-only model.
fn fit_centered<F>(
    design: &DMatrix<f64>,
    n: usize,
    q: usize,
    ridge: f64,
    target: F,
) -> Result<RegressionFit>
where
    F: Fn(usize, usize) -> f64,
{
    if design.ncols() == 0 {
        return Ok(RegressionFit {
            coeffs: DMatrix::zeros(0, q),
            warning: None,
        });
    }
    let targets = DMatrix::from_fn(n, q, target);
    regress(design, &targets, ridge)
}

/// Largest (over time steps) magnitude of the ensemble-mean one-step
/// defect `Y_{i+1} - Y_i + f dt + h dk - Z dW`; small values certify the
/// solution's internal consistency.
pub fn martingale_residual(
    sol: &BackwardSolution,
    paths: &PathBundle,
    coeffs: &BackwardCoefficients,
) -> Result<f64> {
    if sol.n_paths != paths.n_paths || sol.grid != paths.grid {
        return Err(NpfError::invalid(
            "martingale residual requires the solution's own path bundle",
        ));
    }
    let n = paths.n_paths;
    let steps = paths.grid.steps;
    let m = sol.system_size;
    let dp = sol.noise_dim;
    let dt = paths.grid.dt();
    let noise = paths.noise_bundle();
    let mut worst = 0.0f64;
    for i in 0..steps {
        let t_i = paths.grid.node(i);
        let mean = deterministic_sum_vec(n, m, |p, out| {
            let x = paths.state(p, i);
            let y = sol.value(p, i);
            let y_next = sol.value(p, i + 1);
            let z = sol.z_value(p, i);
            let dk = paths.boundary_functional(p, i + 1) - paths.boundary_functional(p, i);
            let mut dw = vec![0.0; dp];
            noise.increment_into(p, i, &mut dw);
            let mut f_buf = vec![0.0; m];
            let mut h_buf = vec![0.0; m];
            coeffs.driver_into(t_i, x, y, z, &mut f_buf);
            coeffs.boundary_into(t_i, x, y, &mut h_buf);
            for j in 0..m {
                let z_dw: f64 = (0..dp).map(|l| z[j * dp + l] * dw[l]).sum();
                out[j] = y_next[j] - y[j] + f_buf[j] * dt + h_buf[j] * dk - z_dw;
            }
        });
        for j in 0..m {
            worst = worst.max((mean[j] / n as f64).abs());
        }
    }
    Ok(worst)
}

/// Mean over paths of `sup_i |Y^a_i - Y^b_i|^2` for two solutions on
/// coupled bundles, with its standard error.
pub fn coupled_value_gap(a: &BackwardSolution, b: &BackwardSolution) -> Result<MeanStderr> {
    if a.grid != b.grid || a.n_paths != b.n_paths || a.system_size != b.system_size {
        return Err(NpfError::invalid(
            "coupled value gap requires solutions on coupled bundles",
        ));
    }
    let m = a.system_size;
    Ok(mean_stderr(a.n_paths, |p| {
        let mut sup = 0.0f64;
        for i in 0..=a.grid.steps {
            let ya = a.value(p, i);
            let yb = b.value(p, i);
            let d: f64 = (0..m).map(|j| (ya[j] - yb[j]) * (ya[j] - yb[j])).sum();
            sup = sup.max(d);
        }
        sup
    }))
}

/// Empirical estimates of the structural constants of a coefficient set.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    /// Tightest observed monotonicity ratio of the driver in `y`.
    pub mu_f_hat: f64,
    /// Tightest observed Lipschitz ratio of the driver in `z`.
    pub l_f_hat: f64,
    /// Tightest observed monotonicity ratio of the boundary driver in `y`,
    /// or `None` when the boundary driver never varied with `y` over the
    /// samples (the monotonicity constant is then vacuous: the boundary
    /// term never couples to `y`).
    pub beta_hat: Option<f64>,
    /// Tightest observed linear-growth ratio over `f(., 0)`, `h`, and `g`.
    pub growth_hat: f64,
    pub samples: usize,
    pub violations: Vec<String>,
}

impl AssumptionReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples random `(t, x, y, y', z, z')` tuples and estimates the
/// tightest constants the coefficients actually satisfy, reporting any
/// exceedance of the declared ones. Diagnostic only.
pub fn probe_assumptions(
    coeffs: &BackwardCoefficients,
    domain: &Domain,
    horizon: f64,
    sample_count: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    use rand::Rng;
    use rand::SeedableRng;
    if sample_count < 2 {
        return Err(NpfError::invalid("probe requires at least 2 samples"));
    }
    if !(horizon > 0.0) {
        return Err(NpfError::invalid("probe horizon must be > 0"));
    }
    let m = coeffs.system_size;
    let dp = coeffs.noise_dim;
    let dim = domain.dim();
    let (lo, hi) = domain.bounding_box();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let mut mu_f_hat = f64::NEG_INFINITY;
    let mut l_f_hat: f64 = 0.0;
    let mut beta_hat = f64::NEG_INFINITY;
    let mut h_varies = false;
    let mut growth_hat: f64 = 0.0;

    let mut x = vec![0.0; dim];
    let (mut y, mut y2) = (vec![0.0; m], vec![0.0; m]);
    let (mut z, mut z2) = (vec![0.0; m * dp], vec![0.0; m * dp]);
    let (mut fa, mut fb) = (vec![0.0; m], vec![0.0; m]);
    let zero_z = vec![0.0; m * dp];

    for _ in 0..sample_count {
        let t = rng.gen_range(0.0..horizon);
        for j in 0..dim {
            x[j] = rng.gen_range(lo[j] - 1.0..hi[j] + 1.0);
        }
        for v in y.iter_mut().chain(y2.iter_mut()) {
            *v = rng.gen_range(-3.0..3.0);
        }
        for v in z.iter_mut().chain(z2.iter_mut()) {
            *v = rng.gen_range(-3.0..3.0);
        }

        let dy_sq: f64 = y.iter().zip(&y2).map(|(a, b)| (a - b) * (a - b)).sum();
        if dy_sq > 1e-12 {
            coeffs.driver_into(t, &x, &y, &z, &mut fa);
            coeffs.driver_into(t, &x, &y2, &z, &mut fb);
            let num: f64 = (0..m).map(|j| (y[j] - y2[j]) * (fa[j] - fb[j])).sum();
            mu_f_hat = mu_f_hat.max(num / dy_sq);

            coeffs.boundary_into(t, &x, &y, &mut fa);
            coeffs.boundary_into(t, &x, &y2, &mut fb);
            let dh: f64 = (0..m).map(|j| (fa[j] - fb[j]) * (fa[j] - fb[j])).sum();
            if dh > 0.0 {
                h_varies = true;
            }
            let num: f64 = (0..m).map(|j| (y[j] - y2[j]) * (fa[j] - fb[j])).sum();
            beta_hat = beta_hat.max(num / dy_sq);
        }

        let dz_sq: f64 = z.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b)).sum();
        if dz_sq > 1e-12 {
            coeffs.driver_into(t, &x, &y, &z, &mut fa);
            coeffs.driver_into(t, &x, &y, &z2, &mut fb);
            let df: f64 = (0..m)
                .map(|j| (fa[j] - fb[j]) * (fa[j] - fb[j]))
                .sum::<f64>()
                .sqrt();
            l_f_hat = l_f_hat.max(df / dz_sq.sqrt());
        }

        let y_norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x_norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        coeffs.driver_into(t, &x, &y, &zero_z, &mut fa);
        let f0: f64 = fa.iter().map(|v| v * v).sum::<f64>().sqrt();
        growth_hat = growth_hat.max(f0 / (1.0 + y_norm));
        coeffs.boundary_into(t, &x, &y, &mut fa);
        let hn: f64 = fa.iter().map(|v| v * v).sum::<f64>().sqrt();
        growth_hat = growth_hat.max(hn / (1.0 + y_norm));
        coeffs.terminal_into(&x, &mut fa);
        let gn: f64 = fa.iter().map(|v| v * v).sum::<f64>().sqrt();
        growth_hat = growth_hat.max(gn / (1.0 + x_norm));
    }

    const SLACK: f64 = 1e-9;
    let mut violations = Vec::new();
    if mu_f_hat > coeffs.mu_f + SLACK {
        violations.push(format!(
            "driver monotonicity: observed {mu_f_hat} exceeds declared mu_f = {}",
            coeffs.mu_f
        ));
    }
    if l_f_hat > coeffs.l_f + SLACK {
        violations.push(format!(
            "driver z-Lipschitz: observed {l_f_hat} exceeds declared l_f = {}",
            coeffs.l_f
        ));
    }
    let beta_opt = if h_varies { Some(beta_hat) } else { None };
    if let Some(bh) = beta_opt {
        if bh > coeffs.beta + SLACK {
            violations.push(format!(
                "boundary monotonicity: observed {bh} exceeds declared beta = {}",
                coeffs.beta
            ));
        }
    }
    if growth_hat > coeffs.growth_const + SLACK {
        violations.push(format!(
            "linear growth: observed {growth_hat} exceeds declared C = {}",
            coeffs.growth_const
        ));
    }

    Ok(AssumptionReport {
        mu_f_hat,
        l_f_hat,
        beta_hat: beta_opt,
        growth_hat,
        samples: sample_count,
        violations,
    })
}
