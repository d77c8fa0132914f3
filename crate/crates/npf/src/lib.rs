//! Monte Carlo solver for semilinear parabolic PDE systems with nonlinear
//! Neumann boundary conditions on convex domains.
//!
//! The solution is represented probabilistically: a diffusion constrained
//! to the domain (either reflected at the boundary or pushed back by a
//! penalty drift) carries a generalized backward equation whose boundary
//! integral runs against the accumulated boundary functional of the
//! forward paths. Solving the backward equation by regression Monte Carlo
//! at a starting point `(t, x)` yields the PDE value `u(t, x)`; the
//! penalized scheme at level `n` yields the approximation `u_n(t, x)`,
//! which converges to `u(t, x)` as `n` grows. Both schemes share one
//! counter-based Brownian ensemble, so penalized-vs-reflected gaps are
//! differences of coupled estimators, and every result is bit-reproducible
//! for a fixed seed regardless of thread count.

// stencil-style loops index several parallel arrays at once
#![allow(clippy::needless_range_loop)]
// `!(x > 0.0)` rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::type_complexity)]

pub mod backward;
pub mod coefficients;
pub mod config;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod grid;
pub mod noise;
pub mod pde;
pub mod problems;
pub mod regression;
pub mod report;
pub mod runner;
pub mod stats;

pub use backward::{
    coupled_value_gap, martingale_residual, probe_assumptions, solve_bsde, AssumptionReport,
    BackwardSolution,
};
pub use coefficients::{BackwardCoefficients, ForwardCoefficients};
pub use config::{parse_config, ExperimentConfig};
pub use error::{NpfError, Result};
pub use forward::{
    boundary_functional_increment_check, coupling_error, simulate_penalized, simulate_reflected,
    CouplingStats, PathBundle, SchemeTag,
};
pub use geometry::{Domain, Shape};
pub use grid::TimeGrid;
pub use noise::NoiseBundle;
pub use pde::{
    evaluate_u, evaluate_un, manufactured_problem, sweep_penalty, Composition, Evaluation,
    ManufacturedSolution, PdeProblem, PointEstimate, SimConfig, SweepReport,
};
pub use regression::{regress, PolynomialBasis, RegressionConfig};
