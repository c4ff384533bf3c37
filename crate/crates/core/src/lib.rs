//! Pricing of a put whose exercise happens at the first jump of a point
//! process with price-dependent intensity `f_theta((K - s)^+ - P)`, and the
//! machinery to watch that price approach the American put as `theta` grows.
//!
//! - [`market`]: market constants, grids, price surfaces.
//! - [`intensity`]: intensity families, envelopes and convergence conditions.
//! - [`pde`]: finite-difference solvers for exogenous and price-dependent intensity.
//! - [`reference`]: European, constant-intensity and American oracles.
//! - [`mc`]: Monte Carlo simulation of the exercise model.
//! - [`harness`]: run configuration and the theta sweep.

// `!(x > 0.0)` is used on purpose throughout so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod intensity;
pub mod market;
pub mod mc;
pub mod pde;
pub mod reference;

pub use error::{Error, Result};
pub use harness::{emit_csv, psor_grid_error_estimate, run_sweep, GridErrorEstimate, RunConfig, SweepRow};
pub use intensity::{check_conditions, eval_f, eval_nu, vanishing_terms, ConditionReport, IntensityFamily, IntensityKind};
pub use market::{put_payoff, GridSpec, MarketParams, PriceSurface};
pub use mc::{mc_price, sample_exercise_time, MCConfig, MCEstimate};
pub use pde::{solve_exogenous, solve_rational, RationalSolution, SolveStats, SolverConfig};
pub use reference::{binomial_american, constant_intensity_quadrature, european_put, psor_american, AmericanSolution};
