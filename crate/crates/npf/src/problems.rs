//! Built-in test problems and the inline coefficient spec.
//!
//! Four named problems cover the validation surface:
//!
//! * `heat_neumann` — pure heat equation with zero-flux boundaries and a
//!   cosine terminal condition; closed-form solution by separation of
//!   variables.
//! * `constant_flux` — zero terminal data with a unit boundary driver, so
//!   the value at a point is the expected accumulated boundary
//!   functional; cross-checked against a finite-difference oracle in the
//!   test suite.
//! * `manufactured_poly` — quadratic manufactured solution, source and
//!   boundary drivers induced by construction.
//! * `manufactured_full` — manufactured solution with a gradient-dependent
//!   driver and a y-monotone nonlinear boundary driver layered on top.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{BackwardCoefficients, ForwardCoefficients};
use crate::error::{NpfError, Result};
use crate::geometry::{Domain, Shape, DEFAULT_NORMAL_CUTOFF};
use crate::pde::{manufactured_problem, Composition, ManufacturedSolution, PdeProblem};

pub const BUILTIN_NAMES: [&str; 4] = [
    "heat_neumann",
    "constant_flux",
    "manufactured_poly",
    "manufactured_full",
];

pub type Reference = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A fully assembled problem plus the metadata the runner needs: an exact
/// reference solution where one exists and sensible default query points.
pub struct BuiltProblem {
    pub name: String,
    pub problem: PdeProblem,
    pub reference: Option<Reference>,
    pub default_queries: Vec<(f64, Vec<f64>)>,
}

/// Builds a named problem at the given horizon.
pub fn builtin(name: &str, horizon: f64) -> Result<BuiltProblem> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(NpfError::config(format!("grid.T must be > 0, got {horizon}")));
    }
    match name {
        "heat_neumann" => heat_neumann(horizon),
        "constant_flux" => constant_flux(horizon),
        "manufactured_poly" => manufactured_poly(horizon),
        "manufactured_full" => manufactured_full(horizon),
        other => Err(NpfError::config(format!(
            "unknown problem `{other}`; built-ins are {}",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

fn unit_interval_bm() -> Result<(Domain, ForwardCoefficients)> {
    Ok((
        Domain::interval(0.0, 1.0)?,
        ForwardCoefficients::constant(1, vec![0.0], 1.0)?,
    ))
}

fn heat_neumann(horizon: f64) -> Result<BuiltProblem> {
    let (domain, forward) = unit_interval_bm()?;
    let backward = BackwardCoefficients::new(
        1,
        1,
        0.0,
        0.0,
        -1.0, // vacuous: the boundary driver does not depend on y
        1.0,
        true,
        |_, _, _, _, out| out[0] = 0.0,
        |_, _, _, out| out[0] = 0.0,
        |x, out| out[0] = (PI * x[0]).cos(),
    )?;
    let problem = PdeProblem::new(domain, forward, backward, horizon)?;
    // cos(pi x) is a Neumann eigenfunction of 1/2 d^2/dx^2 on [0, 1]
    let reference: Reference =
        Arc::new(move |t, x| (-PI * PI * (horizon - t) / 2.0).exp() * (PI * x[0]).cos());
    Ok(BuiltProblem {
        name: "heat_neumann".into(),
        problem,
        reference: Some(reference),
        default_queries: vec![(0.0, vec![0.25])],
    })
}

fn constant_flux(horizon: f64) -> Result<BuiltProblem> {
    let (domain, forward) = unit_interval_bm()?;
    let backward = BackwardCoefficients::new(
        1,
        1,
        0.0,
        0.0,
        -1.0, // vacuous
        1.0,
        true,
        |_, _, _, _, out| out[0] = 0.0,
        |_, _, _, out| out[0] = 1.0,
        |_, out| out[0] = 0.0,
    )?;
    let problem = PdeProblem::new(domain, forward, backward, horizon)?;
    Ok(BuiltProblem {
        name: "constant_flux".into(),
        problem,
        reference: None,
        default_queries: vec![(0.0, vec![0.5])],
    })
}

fn manufactured_poly(horizon: f64) -> Result<BuiltProblem> {
    let (domain, forward) = unit_interval_bm()?;
    let solution = ManufacturedSolution {
        value: Arc::new(|_, x| x[0] * x[0]),
        time_derivative: Arc::new(|_, _| 0.0),
        gradient: Arc::new(|_, x, out| out[0] = 2.0 * x[0]),
        hessian: Arc::new(|_, _, out| out[0] = 2.0),
    };
    let problem = manufactured_problem(solution, domain, forward, horizon, None, 5.0)?;
    let reference: Reference = Arc::new(|_, x| x[0] * x[0]);
    Ok(BuiltProblem {
        name: "manufactured_poly".into(),
        problem,
        reference: Some(reference),
        default_queries: vec![
            (0.0, vec![0.1]),
            (0.0, vec![0.25]),
            (0.0, vec![0.5]),
            (0.0, vec![0.7]),
            (0.2 * horizon, vec![0.9]),
        ],
    })
}

fn manufactured_full(horizon: f64) -> Result<BuiltProblem> {
    let (domain, forward) = unit_interval_bm()?;
    let t_end = horizon;
    let value = move |t: f64, x: &[f64]| {
        (-(t_end - t)).exp() * (x[0] * x[0] + (PI * x[0]).cos()) / 2.0
    };
    let solution = ManufacturedSolution {
        value: Arc::new(value),
        time_derivative: Arc::new(move |t, x| value(t, x)),
        gradient: Arc::new(move |t, x, out| {
            out[0] = (-(t_end - t)).exp() * (2.0 * x[0] - PI * (PI * x[0]).sin()) / 2.0;
        }),
        hessian: Arc::new(move |t, x, out| {
            out[0] = (-(t_end - t)).exp() * (2.0 - PI * PI * (PI * x[0]).cos()) / 2.0;
        }),
    };
    let composition = Composition {
        target_driver: Arc::new(|y, z| -y + 0.5 * z[0].sin()),
        // strictly decreasing in y with slope in [-1.5, -0.5]
        target_boundary: Arc::new(|y| -y - 0.5 * y.sin()),
        mu_f: -1.0,
        l_f: 0.5,
        beta: -0.5,
    };
    let problem =
        manufactured_problem(solution, domain, forward, horizon, Some(composition), 9.0)?;
    let reference: Reference = Arc::new(value);
    // query points keep |u| away from zero so relative tolerances stay
    // meaningful (the solution changes sign near x = 0.62)
    Ok(BuiltProblem {
        name: "manufactured_full".into(),
        problem,
        reference: Some(reference),
        default_queries: vec![
            (0.0, vec![0.05]),
            (0.0, vec![0.2]),
            (0.0, vec![0.35]),
            (0.4 * horizon, vec![0.15]),
            (0.5 * horizon, vec![0.3]),
        ],
    })
}

/// Inline problem description for configs that do not use a built-in:
/// constant drift, scalar diffusion, affine drivers, and a small family
/// of terminal conditions. Scalar-valued (system size 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblemSpec {
    pub domain: Shape,
    #[serde(default = "default_cutoff")]
    pub normal_cutoff: f64,
    pub drift: Vec<f64>,
    pub diffusion: f64,
    #[serde(default)]
    pub driver: AffineDriver,
    #[serde(default)]
    pub boundary: AffineDriver,
    pub terminal: TerminalSpec,
}

fn default_cutoff() -> f64 {
    DEFAULT_NORMAL_CUTOFF
}

/// `y_coeff * y + constant`.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffineDriver {
    pub y_coeff: f64,
    pub constant: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalSpec {
    Constant { value: f64 },
    /// `cos(pi x_0)`.
    CosPi,
    /// `|x|^2`.
    SquaredNorm,
}

pub fn from_inline(spec: &InlineProblemSpec, horizon: f64) -> Result<BuiltProblem> {
    let domain = Domain::new(spec.domain.clone(), spec.normal_cutoff)?;
    let dim = domain.dim();
    let forward = ForwardCoefficients::constant(dim, spec.drift.clone(), spec.diffusion)?;

    if spec.boundary.y_coeff > 0.0 {
        return Err(NpfError::config(
            "problem.boundary.y_coeff must be <= 0 (the boundary driver must be nonincreasing in y)",
        ));
    }
    let mu_f = spec.driver.y_coeff;
    let beta = if spec.boundary.y_coeff < 0.0 {
        spec.boundary.y_coeff
    } else {
        -1.0 // vacuous: h does not depend on y
    };

    let (lo, hi) = domain.bounding_box();
    let probe_radius = lo
        .iter()
        .chain(hi.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        * (dim as f64).sqrt()
        + (dim as f64).sqrt();
    let growth_terminal = match spec.terminal {
        TerminalSpec::Constant { value } => value.abs(),
        TerminalSpec::CosPi => 1.0,
        TerminalSpec::SquaredNorm => probe_radius * probe_radius / (1.0 + probe_radius),
    };
    let growth = [
        spec.driver.y_coeff.abs().max(spec.driver.constant.abs()),
        spec.boundary.y_coeff.abs().max(spec.boundary.constant.abs()),
        growth_terminal,
    ]
    .into_iter()
    .fold(0.0f64, f64::max);

    let driver = spec.driver;
    let boundary = spec.boundary;
    let terminal = spec.terminal;
    let backward = BackwardCoefficients::new(
        1,
        dim,
        mu_f,
        0.0,
        beta,
        growth,
        true,
        move |_, _, y, _, out| out[0] = driver.y_coeff * y[0] + driver.constant,
        move |_, _, y, out| out[0] = boundary.y_coeff * y[0] + boundary.constant,
        move |x, out| {
            out[0] = match terminal {
                TerminalSpec::Constant { value } => value,
                TerminalSpec::CosPi => (PI * x[0]).cos(),
                TerminalSpec::SquaredNorm => x.iter().map(|v| v * v).sum(),
            }
        },
    )?;
    let problem = PdeProblem::new(domain, forward, backward, horizon)?;
    Ok(BuiltProblem {
        name: "inline".into(),
        problem,
        reference: None,
        default_queries: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::probe_assumptions;

    #[test]
    fn builtin_names_resolve() {
        for name in BUILTIN_NAMES {
            let built = builtin(name, 0.25).unwrap();
            assert_eq!(built.name, name);
        }
        assert!(builtin("no_such_problem", 0.25).is_err());
        assert!(builtin("heat_neumann", 0.0).is_err());
    }

    #[test]
    fn heat_reference_value_at_quarter_point() {
        let built = builtin("heat_neumann", 0.25).unwrap();
        let reference = built.reference.unwrap();
        let v = reference(0.0, &[0.25]);
        // e^{-pi^2/8} cos(pi/4)
        assert!((v - 0.2059).abs() < 1e-4, "reference value {v}");
        // satisfies the terminal condition
        assert!((reference(0.25, &[0.3]) - (PI * 0.3).cos()).abs() < 1e-15);
    }

    #[test]
    fn declared_constants_survive_probing() {
        for name in BUILTIN_NAMES {
            let built = builtin(name, 0.25).unwrap();
            let report = probe_assumptions(
                &built.problem.backward,
                &built.problem.domain,
                built.problem.horizon,
                2_000,
                1234,
            )
            .unwrap();
            assert!(
                report.clean(),
                "{name}: violations {:?}",
                report.violations
            );
        }
    }

    #[test]
    fn manufactured_full_is_exact_at_its_own_solution() {
        let built = builtin("manufactured_full", 0.25).unwrap();
        let reference = built.reference.unwrap();
        // residual of the discrete relation f(t,x,u,z_exact) should equal
        // -du/dt - 1/2 u_xx at any point, i.e. the composed terms cancel
        let t = 0.1;
        let x = [0.3];
        let u = reference(t, &x);
        let e = (-(0.25 - t)).exp();
        let ux = e * (2.0 * x[0] - PI * (PI * x[0]).sin()) / 2.0;
        let uxx = e * (2.0 - PI * PI * (PI * x[0]).cos()) / 2.0;
        let mut out = [0.0];
        built
            .problem
            .backward
            .driver_into(t, &x, &[u], &[ux], &mut out);
        let source = -u - 0.5 * uxx;
        assert!((out[0] - source).abs() < 1e-14);
    }

    #[test]
    fn inline_spec_builds_and_validates() {
        let spec = InlineProblemSpec {
            domain: Shape::Interval { lo: 0.0, hi: 1.0 },
            normal_cutoff: 1.0,
            drift: vec![0.0],
            diffusion: 1.0,
            driver: AffineDriver::default(),
            boundary: AffineDriver::default(),
            terminal: TerminalSpec::Constant { value: 5.0 },
        };
        let built = from_inline(&spec, 1.0).unwrap();
        let mut out = [0.0];
        built.problem.backward.terminal_into(&[0.5], &mut out);
        assert_eq!(out[0], 5.0);

        let bad = InlineProblemSpec {
            boundary: AffineDriver {
                y_coeff: 0.5,
                constant: 0.0,
            },
            ..spec
        };
        assert!(from_inline(&bad, 1.0).is_err());
    }
}
