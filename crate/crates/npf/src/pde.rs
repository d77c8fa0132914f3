//! PDE-level interface: the solution values `u(t, x)` and their penalized
//! approximations `u_n(t, x)` are read off the backward solution at the
//! query point, since every path of the ensemble starts there. Penalty
//! sweeps evaluate the whole ladder on one Brownian ensemble, so the gaps
//! are differences of coupled estimators, and manufactured problems turn
//! a chosen exact solution into a coefficient set that has it as its
//! solution by construction.

use std::sync::Arc;

use crate::backward::{coupled_value_gap, solve_bsde, BackwardSolution};
use crate::coefficients::{BackwardCoefficients, ForwardCoefficients};
use crate::error::{NpfError, Result};
use crate::forward::{simulate_penalized, simulate_reflected};
use crate::geometry::Domain;
use crate::grid::TimeGrid;
use crate::noise::NoiseBundle;
use crate::regression::RegressionConfig;
use crate::stats::MeanStderr;

/// A parabolic problem with boundary data: domain, forward diffusion,
/// backward drivers, and the time horizon.
#[derive(Clone)]
pub struct PdeProblem {
    pub domain: Domain,
    pub forward: ForwardCoefficients,
    pub backward: BackwardCoefficients,
    pub horizon: f64,
}

impl PdeProblem {
    pub fn new(
        domain: Domain,
        forward: ForwardCoefficients,
        backward: BackwardCoefficients,
        horizon: f64,
    ) -> Result<Self> {
        if forward.dim != domain.dim() {
            return Err(NpfError::DimensionMismatch {
                context: "forward coefficients vs domain",
                expected: domain.dim(),
                got: forward.dim,
            });
        }
        if backward.noise_dim != forward.noise_dim {
            return Err(NpfError::DimensionMismatch {
                context: "backward vs forward noise dimension",
                expected: forward.noise_dim,
                got: backward.noise_dim,
            });
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(NpfError::invalid(format!("horizon must be > 0, got {horizon}")));
        }
        Ok(PdeProblem {
            domain,
            forward,
            backward,
            horizon,
        })
    }
}

/// Monte Carlo settings for one evaluation: base grid, ensemble size,
/// seed, and the regression knobs.
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub regression: RegressionConfig,
}

/// A point value of `u` or `u_n` with its Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub value: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    /// Penalty level, or `None` for the reflected scheme.
    pub penalty: Option<u64>,
}

/// Full artifacts of one evaluation, for callers that need diagnostics
/// or the regression models alongside the estimate.
pub struct Evaluation {
    pub estimate: PointEstimate,
    pub solution: BackwardSolution,
}

/// One penalty ladder at a query point, on coupled noise.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub query_t: f64,
    pub query_x: Vec<f64>,
    pub penalty_levels: Vec<u64>,
    pub estimates_penalized: Vec<PointEstimate>,
    pub estimate_reflected: PointEstimate,
    /// `|u_n - u|` per level, componentwise.
    pub gaps: Vec<Vec<f64>>,
    /// Combined standard error `sqrt(se_n^2 + se_ref^2)` per level.
    pub gap_stderrs: Vec<Vec<f64>>,
    /// Mean over paths of `sup_i |Y^n_i - Y_i|^2` per level.
    pub value_gap_sq: Vec<MeanStderr>,
    /// Steps with unconverged Picard iterations, over all levels.
    pub picard_failure_steps: usize,
    pub condition_warnings: Vec<String>,
}

fn validate_query(problem: &PdeProblem, t: f64, x: &[f64], sim: &SimConfig) -> Result<()> {
    if x.len() != problem.domain.dim() {
        return Err(NpfError::DimensionMismatch {
            context: "query point",
            expected: problem.domain.dim(),
            got: x.len(),
        });
    }
    if problem.domain.distance_to_closure(x)? > 1e-12 {
        return Err(NpfError::invalid(format!(
            "query point {x:?} lies outside the domain closure; evaluations are restricted to it"
        )));
    }
    if !(0.0..problem.horizon).contains(&t) {
        return Err(NpfError::invalid(format!(
            "query time {t} must lie in [0, {})",
            problem.horizon
        )));
    }
    if (sim.grid.horizon - problem.horizon).abs() > 1e-12 {
        return Err(NpfError::invalid(format!(
            "simulation grid horizon {} does not match problem horizon {}",
            sim.grid.horizon, problem.horizon
        )));
    }
    Ok(())
}

/// Evaluates one scheme at `(t, x)`: penalized at level `penalty`, or the
/// reflected scheme when `penalty` is `None`.
pub fn evaluate_scheme(
    problem: &PdeProblem,
    t: f64,
    x: &[f64],
    penalty: Option<u64>,
    sim: &SimConfig,
) -> Result<Evaluation> {
    validate_query(problem, t, x, sim)?;
    let grid = sim.grid.restarted_at(t)?;
    let noise = NoiseBundle::new(sim.seed, sim.n_paths, grid, problem.forward.noise_dim)?;
    let bundle = match penalty {
        Some(n) => simulate_penalized(&problem.domain, &problem.forward, n, &grid, x, &noise)?,
        None => simulate_reflected(&problem.domain, &problem.forward, &grid, x, &noise)?,
    };
    let solution = solve_bsde(&bundle, &problem.backward, &sim.regression)?;
    let estimate = PointEstimate {
        value: solution.y0.clone(),
        stderr: solution.y0_stderr.clone(),
        n_paths: sim.n_paths,
        dt: grid.dt(),
        penalty,
    };
    Ok(Evaluation { estimate, solution })
}

/// `u_n(t, x)`: the penalized approximation at level `n`.
pub fn evaluate_un(
    problem: &PdeProblem,
    t: f64,
    x: &[f64],
    n: u64,
    sim: &SimConfig,
) -> Result<PointEstimate> {
    Ok(evaluate_scheme(problem, t, x, Some(n), sim)?.estimate)
}

/// `u(t, x)`: the reflected-scheme value.
pub fn evaluate_u(problem: &PdeProblem, t: f64, x: &[f64], sim: &SimConfig) -> Result<PointEstimate> {
    Ok(evaluate_scheme(problem, t, x, None, sim)?.estimate)
}

/// Evaluates `u_n` for every level and `u` once, all on the same Brownian
/// ensemble, and reports the gaps `|u_n - u|` plus the pathwise backward
/// convergence statistic.
pub fn sweep_penalty(
    problem: &PdeProblem,
    t: f64,
    x: &[f64],
    penalty_levels: &[u64],
    sim: &SimConfig,
) -> Result<SweepReport> {
    if penalty_levels.is_empty() {
        return Err(NpfError::invalid("penalty_levels must be non-empty"));
    }
    if penalty_levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(NpfError::invalid("penalty_levels must be strictly increasing"));
    }
    let reflected = evaluate_scheme(problem, t, x, None, sim)?;
    let m = problem.backward.system_size;
    let mut report = SweepReport {
        query_t: t,
        query_x: x.to_vec(),
        penalty_levels: penalty_levels.to_vec(),
        estimates_penalized: Vec::with_capacity(penalty_levels.len()),
        estimate_reflected: reflected.estimate.clone(),
        gaps: Vec::with_capacity(penalty_levels.len()),
        gap_stderrs: Vec::with_capacity(penalty_levels.len()),
        value_gap_sq: Vec::with_capacity(penalty_levels.len()),
        picard_failure_steps: reflected.solution.diagnostics.picard_failures.len(),
        condition_warnings: reflected.solution.diagnostics.condition_warnings.clone(),
    };
    for &n in penalty_levels {
        let pen = evaluate_scheme(problem, t, x, Some(n), sim)?;
        let mut gap = vec![0.0; m];
        let mut gap_se = vec![0.0; m];
        for j in 0..m {
            gap[j] = (pen.estimate.value[j] - reflected.estimate.value[j]).abs();
            gap_se[j] = (pen.estimate.stderr[j].powi(2)
                + reflected.estimate.stderr[j].powi(2))
            .sqrt();
        }
        report.value_gap_sq.push(coupled_value_gap(&pen.solution, &reflected.solution)?);
        report.picard_failure_steps += pen.solution.diagnostics.picard_failures.len();
        report
            .condition_warnings
            .extend(pen.solution.diagnostics.condition_warnings.iter().cloned());
        report.gaps.push(gap);
        report.gap_stderrs.push(gap_se);
        report.estimates_penalized.push(pen.estimate);
    }
    Ok(report)
}

type ScalarField = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// A chosen exact solution together with its derivatives (scalar-valued,
/// system size 1).
#[derive(Clone)]
pub struct ManufacturedSolution {
    pub value: ScalarField,
    pub time_derivative: ScalarField,
    /// Spatial gradient, length d.
    pub gradient: VectorField,
    /// Hessian, row-major d x d.
    pub hessian: VectorField,
}

/// Optional y/z-dependence layered on a manufactured problem: a target
/// driver `F(y, z)` and target boundary driver `H(y)`, both compensated
/// at the exact solution so it remains exact, plus the structural
/// constants they satisfy.
#[derive(Clone)]
pub struct Composition {
    pub target_driver: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    pub target_boundary: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub mu_f: f64,
    pub l_f: f64,
    pub beta: f64,
}

/// Builds a problem whose exact solution is `solution`:
/// the source `f(t,x) = -du/dt - 1/2 tr(sigma sigma^T Hess u) - <b, grad u>`
/// makes the interior equation hold, `h(t,x) = -<grad u, inward normal>`
/// makes the boundary condition hold, and `g = u(T, .)`. A composition
/// adds `F(y, z) - F(u, grad u sigma)` to the driver and
/// `H(y) - H(u)` to the boundary driver, preserving exactness while
/// exercising genuine y- and z-dependence.
///
/// `growth_const` is the declared linear-growth constant of the induced
/// coefficients over the probe box; it depends on the magnitudes of the
/// chosen solution, so the caller supplies it.
pub fn manufactured_problem(
    solution: ManufacturedSolution,
    domain: Domain,
    forward: ForwardCoefficients,
    horizon: f64,
    composition: Option<Composition>,
    growth_const: f64,
) -> Result<PdeProblem> {
    let dim = domain.dim();
    let noise_dim = forward.noise_dim;

    let source = {
        let s = solution.clone();
        let fwd = forward.clone();
        move |t: f64, x: &[f64]| -> f64 {
            let mut grad = vec![0.0; dim];
            let mut hess = vec![0.0; dim * dim];
            let mut b = vec![0.0; dim];
            let mut sig = vec![0.0; dim * noise_dim];
            (s.gradient)(t, x, &mut grad);
            (s.hessian)(t, x, &mut hess);
            fwd.drift_into(x, &mut b);
            fwd.diffusion_into(x, &mut sig);
            // 1/2 tr(sigma sigma^T H) = 1/2 sum_{i,j} (sigma sigma^T)_{ij} H_{ij}
            let mut diffusion_term = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    let mut a_ij = 0.0;
                    for l in 0..noise_dim {
                        a_ij += sig[i * noise_dim + l] * sig[j * noise_dim + l];
                    }
                    diffusion_term += a_ij * hess[i * dim + j];
                }
            }
            let drift_term: f64 = (0..dim).map(|i| b[i] * grad[i]).sum();
            -(s.time_derivative)(t, x) - 0.5 * diffusion_term - drift_term
        }
    };

    // z consistent with the solver's convention: z = grad u . sigma (row, length d')
    let exact_z = {
        let s = solution.clone();
        let fwd = forward.clone();
        move |t: f64, x: &[f64], out: &mut [f64]| {
            let mut grad = vec![0.0; dim];
            let mut sig = vec![0.0; dim * noise_dim];
            (s.gradient)(t, x, &mut grad);
            fwd.diffusion_into(x, &mut sig);
            for l in 0..noise_dim {
                out[l] = (0..dim).map(|i| grad[i] * sig[i * noise_dim + l]).sum();
            }
        }
    };

    let boundary_source = {
        let s = solution.clone();
        let dom = domain.clone();
        move |t: f64, x: &[f64]| -> f64 {
            let mut grad = vec![0.0; dim];
            let mut normal = vec![0.0; dim];
            (s.gradient)(t, x, &mut grad);
            dom.inward_normal_into(x, &mut normal);
            -(0..dim).map(|i| grad[i] * normal[i]).sum::<f64>()
        }
    };

    let (mu_f, l_f, beta) = match &composition {
        Some(c) => (c.mu_f, c.l_f, c.beta),
        None => (0.0, 0.0, -1.0),
    };

    let driver = {
        let comp = composition.clone();
        let s = solution.clone();
        move |t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]| {
            let mut value = source(t, x);
            if let Some(c) = &comp {
                let mut ze = vec![0.0; noise_dim];
                exact_z(t, x, &mut ze);
                let u = (s.value)(t, x);
                value += (c.target_driver)(y[0], z) - (c.target_driver)(u, &ze);
            }
            out[0] = value;
        }
    };

    let boundary = {
        let comp = composition.clone();
        let s = solution.clone();
        move |t: f64, x: &[f64], y: &[f64], out: &mut [f64]| {
            let mut value = boundary_source(t, x);
            if let Some(c) = &comp {
                let u = (s.value)(t, x);
                value += (c.target_boundary)(y[0]) - (c.target_boundary)(u);
            }
            out[0] = value;
        }
    };

    let terminal = {
        let s = solution.clone();
        move |x: &[f64], out: &mut [f64]| {
            out[0] = (s.value)(horizon, x);
        }
    };

    let backward = BackwardCoefficients::new(
        1,
        noise_dim,
        mu_f,
        l_f,
        beta,
        growth_const,
        true,
        driver,
        boundary,
        terminal,
    )?;
    PdeProblem::new(domain, forward, backward, horizon)
}
