//! Finite-difference solvers for the put exercised at the first jump of an
//! intensity process.
//!
//! In log-moneyness `x = ln(s/K)` and time to expiry `tau = T - t` the
//! pricing equation reads
//!
//! ```text
//! dP/dtau = 1/2 sigma^2 P_xx + (r - 1/2 sigma^2) P_x - r P + mu (g - P)
//! ```
//!
//! with `g = (K - s)^+`. Diffusion and drift are stepped with Crank-Nicolson
//! after a few implicit-Euler half-steps (Rannacher startup). The intensity
//! term is always taken at the new time level, both for an exogenous `mu`
//! and for the price-dependent `mu = f((K - s)^+ - P)`, so the two solvers
//! produce identical discrete equations whenever the intensities agree.
//!
//! Both spatial ends use the zero-curvature condition `P_ss = 0`: the
//! diffusion term is dropped there and `s P_s` is a one-sided difference.

use crate::error::{Error, Result};
use crate::intensity::IntensityFamily;
use crate::market::{GridSpec, MarketParams, PriceSurface};

/// Time-stepping and nonlinear-solve settings shared by every grid solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Absolute tolerance on the max-norm Newton residual.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Implicit-Euler half-steps before switching to Crank-Nicolson; even.
    pub startup_half_steps: usize,
    pub psor_omega: f64,
    /// Absolute tolerance on the max-norm PSOR update.
    pub psor_tol: f64,
    pub psor_max_sweeps: usize,
}

/// Step-halvings allowed when a full Newton step does not reduce the residual.
pub const MAX_HALVINGS: usize = 20;

/// Solved values may leave `[0, K]` by this multiple of `K` through round-off.
const BOUND_SLACK: f64 = 1e-9;

impl SolverConfig {
    /// Defaults with tolerances scaled to the strike.
    pub fn for_strike(strike: f64) -> Self {
        Self {
            newton_tol: 1e-10 * strike,
            newton_max_iter: 100,
            startup_half_steps: 4,
            psor_omega: 1.5,
            psor_tol: 1e-10 * strike,
            psor_max_sweeps: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidArgument("newton_tol must be > 0".into()));
        }
        if self.newton_max_iter < 1 {
            return Err(Error::InvalidArgument("newton_max_iter must be >= 1".into()));
        }
        if !self.startup_half_steps.is_multiple_of(2) {
            return Err(Error::InvalidArgument("startup_half_steps must be even".into()));
        }
        if !(self.psor_omega > 0.0 && self.psor_omega < 2.0) {
            return Err(Error::InvalidArgument("psor_omega must lie in (0, 2)".into()));
        }
        if !(self.psor_tol > 0.0) || self.psor_max_sweeps < 1 {
            return Err(Error::InvalidArgument("psor_tol must be > 0 and psor_max_sweeps >= 1".into()));
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::for_strike(100.0)
    }
}

/// Newton diagnostics of a nonlinear solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    /// Largest iteration count over all time steps.
    pub newton_iters_max: usize,
    pub newton_iters_total: usize,
    /// Number of time steps that needed step halving.
    pub damped_steps: usize,
}

#[derive(Debug, Clone)]
pub struct RationalSolution {
    pub surface: PriceSurface,
    pub stats: SolveStats,
}

/// Tridiagonal matrix stored by diagonals; `lower[0]` and `upper[n-1]` unused.
#[derive(Debug, Clone)]
pub(crate) struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    fn zeros(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    fn len(&self) -> usize {
        self.diag.len()
    }

    #[inline]
    pub(crate) fn row_dot(&self, v: &[f64], j: usize) -> f64 {
        let mut acc = self.diag[j] * v[j];
        if j > 0 {
            acc += self.lower[j] * v[j - 1];
        }
        if j + 1 < v.len() {
            acc += self.upper[j] * v[j + 1];
        }
        acc
    }
}

/// Thomas algorithm. Fails on a vanishing pivot or a row that is not weakly
/// diagonally dominant.
pub(crate) fn solve_tridiagonal(m: &Tridiagonal, rhs: &[f64], out: &mut [f64], check_dominance: bool) -> std::result::Result<(), String> {
    let n = m.len();
    if check_dominance {
        for j in 0..n {
            let off = if j > 0 { m.lower[j].abs() } else { 0.0 }
                + if j + 1 < n { m.upper[j].abs() } else { 0.0 };
            if m.diag[j].abs() < off * (1.0 - 1e-12) {
                return Err(format!("row {j} is not diagonally dominant"));
            }
        }
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = m.diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err("zero pivot in row 0".into());
    }
    c[0] = m.upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for j in 1..n {
        pivot = m.diag[j] - m.lower[j] * c[j - 1];
        if pivot.abs() < 1e-300 || !pivot.is_finite() {
            return Err(format!("zero pivot in row {j}"));
        }
        c[j] = if j + 1 < n { m.upper[j] / pivot } else { 0.0 };
        d[j] = (rhs[j] - m.lower[j] * d[j - 1]) / pivot;
    }
    out[n - 1] = d[n - 1];
    for j in (0..n - 1).rev() {
        out[j] = d[j] - c[j] * out[j + 1];
    }
    Ok(())
}

/// Coefficients of the spatial operator `L` (everything but the intensity).
fn spatial_operator(market: &MarketParams, grid: &GridSpec) -> Tridiagonal {
    let n = grid.n_space;
    let h = grid.dx();
    let (r, s2) = (market.r, market.sigma * market.sigma);
    let a = 0.5 * s2 / (h * h);
    let b = (r - 0.5 * s2) / (2.0 * h);
    let mut op = Tridiagonal::zeros(n);
    for j in 1..n - 1 {
        op.lower[j] = a - b;
        op.diag[j] = -2.0 * a - r;
        op.upper[j] = a + b;
    }
    // zero curvature at the ends: L P = r s P_s - r P = r P_x - r P
    op.diag[0] = -r / h - r;
    op.upper[0] = r / h;
    op.lower[n - 1] = -r / h;
    op.diag[n - 1] = r / h - r;
    op
}

/// One implicit solve inside a backward time step.
#[derive(Debug, Clone, Copy)]
struct Substep {
    /// Calendar time of the new level.
    t_new: f64,
    dtau: f64,
    /// 1 for implicit Euler, 1/2 for Crank-Nicolson.
    weight: f64,
}

/// `I - w dtau L` and the explicit part `I + (1 - w) dtau L` of a substep.
struct SubstepMatrices {
    implicit: Tridiagonal,
    explicit: Tridiagonal,
}

impl SubstepMatrices {
    fn new(op: &Tridiagonal, dtau: f64, weight: f64) -> Self {
        let n = op.len();
        let mut implicit = Tridiagonal::zeros(n);
        let mut explicit = Tridiagonal::zeros(n);
        let (wi, we) = (weight * dtau, (1.0 - weight) * dtau);
        for j in 0..n {
            implicit.lower[j] = -wi * op.lower[j];
            implicit.diag[j] = 1.0 - wi * op.diag[j];
            implicit.upper[j] = -wi * op.upper[j];
            explicit.lower[j] = we * op.lower[j];
            explicit.diag[j] = 1.0 + we * op.diag[j];
            explicit.upper[j] = we * op.upper[j];
        }
        Self { implicit, explicit }
    }

    fn rhs(&self, old: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.explicit.row_dot(old, j);
        }
    }
}

/// Context handed to a per-substep solver.
pub(crate) struct StepContext<'a> {
    pub implicit: &'a Tridiagonal,
    pub rhs: &'a [f64],
    pub payoff: &'a [f64],
    pub spots: &'a [f64],
    pub t_new: f64,
    pub dtau: f64,
    /// Calendar row being produced.
    pub time_row: usize,
}

/// Marches backward from the terminal payoff, calling `solve` for every
/// implicit substep. `solve` receives the previous level in `v` and must
/// leave the new level there.
pub(crate) fn march<F>(market: &MarketParams, grid: &GridSpec, cfg: &SolverConfig, mut solve: F) -> Result<PriceSurface>
where
    F: FnMut(&StepContext<'_>, &mut Vec<f64>) -> Result<()>,
{
    market.validate()?;
    grid.validate()?;
    cfg.validate()?;
    let n = grid.n_space;
    let n_t = grid.n_time;
    let spots = grid.spot_nodes(market.strike);
    let times = grid.time_nodes(market.expiry);
    let payoff: Vec<f64> = spots.iter().map(|s| market.payoff(*s)).collect();
    let dt = grid.dt(market.expiry);

    let op = spatial_operator(market, grid);
    let half = SubstepMatrices::new(&op, 0.5 * dt, 1.0);
    let cn = SubstepMatrices::new(&op, dt, 0.5);
    let startup_steps = cfg.startup_half_steps / 2;

    let mut values = vec![0.0; (n_t + 1) * n];
    values[n_t * n..].copy_from_slice(&payoff);
    let mut v = payoff.clone();
    let mut rhs = vec![0.0; n];

    for i in (0..n_t).rev() {
        let k = n_t - 1 - i;
        let substeps: &[(Substep, &SubstepMatrices)] = &if k < startup_steps {
            vec![
                (
                    Substep {
                        t_new: times[i + 1] - 0.5 * dt,
                        dtau: 0.5 * dt,
                        weight: 1.0,
                    },
                    &half,
                ),
                (
                    Substep {
                        t_new: times[i],
                        dtau: 0.5 * dt,
                        weight: 1.0,
                    },
                    &half,
                ),
            ]
        } else {
            vec![(
                Substep {
                    t_new: times[i],
                    dtau: dt,
                    weight: 0.5,
                },
                &cn,
            )]
        };
        for (sub, mats) in substeps {
            debug_assert!(sub.weight > 0.0);
            mats.rhs(&v, &mut rhs);
            let ctx = StepContext {
                implicit: &mats.implicit,
                rhs: &rhs,
                payoff: &payoff,
                spots: &spots,
                t_new: sub.t_new,
                dtau: sub.dtau,
                time_row: i,
            };
            solve(&ctx, &mut v)?;
        }
        check_bounds(&mut v, market.strike, i)?;
        values[i * n..(i + 1) * n].copy_from_slice(&v);
    }
    PriceSurface::from_values(*market, *grid, values)
}

/// Enforces `0 <= P <= K`, absorbing round-off and failing on anything larger.
fn check_bounds(v: &mut [f64], strike: f64, time_row: usize) -> Result<()> {
    let slack = BOUND_SLACK * strike;
    for (node, p) in v.iter_mut().enumerate() {
        if !p.is_finite() || *p < -slack || *p > strike + slack {
            return Err(Error::BoundViolation {
                time_row,
                node,
                value: *p,
            });
        }
        *p = p.clamp(0.0, strike);
    }
    Ok(())
}

/// Solves the linear equation with a known intensity `mu(t, s)`.
pub fn solve_exogenous<M>(market: &MarketParams, grid: &GridSpec, mu: M, cfg: &SolverConfig) -> Result<PriceSurface>
where
    M: Fn(f64, f64) -> f64,
{
    let mut system: Option<Tridiagonal> = None;
    let mut rhs = Vec::new();
    march(market, grid, cfg, |ctx, v| {
        let m = system.get_or_insert_with(|| ctx.implicit.clone());
        m.lower.copy_from_slice(&ctx.implicit.lower);
        m.upper.copy_from_slice(&ctx.implicit.upper);
        rhs.clear();
        rhs.extend_from_slice(ctx.rhs);
        for j in 0..v.len() {
            let rate = mu(ctx.t_new, ctx.spots[j]);
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(Error::Input(format!(
                    "intensity at t={}, s={} is {rate}; it must be finite and >= 0",
                    ctx.t_new, ctx.spots[j]
                )));
            }
            m.diag[j] = ctx.implicit.diag[j] + ctx.dtau * rate;
            rhs[j] += ctx.dtau * rate * ctx.payoff[j];
        }
        solve_tridiagonal(m, &rhs, v, true).map_err(|reason| Error::LinearSolve {
            time_row: ctx.time_row,
            reason,
        })
    })
}

/// Solves the nonlinear equation whose intensity is
/// `f_theta((K - s)^+ - P(t, s))`, with Newton's method at every step.
pub fn solve_rational(market: &MarketParams, grid: &GridSpec, family: &IntensityFamily, cfg: &SolverConfig) -> Result<RationalSolution> {
    family.validate()?;
    let n = grid.n_space;
    let mut stats = SolveStats::default();
    let mut jac = Tridiagonal::zeros(n);
    let mut residual = vec![0.0; n];
    let mut trial_residual = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut neg = vec![0.0; n];

    let surface = march(market, grid, cfg, |ctx, v| {
        let residual_of = |v: &[f64], out: &mut [f64]| -> f64 {
            let mut worst: f64 = 0.0;
            for j in 0..v.len() {
                let (pen, _) = family.penalty(ctx.payoff[j] - v[j]);
                out[j] = ctx.implicit.row_dot(v, j) - ctx.dtau * pen - ctx.rhs[j];
                worst = worst.max(out[j].abs());
            }
            worst
        };

        let mut res_norm = residual_of(v, &mut residual);
        let mut iters = 0;
        let mut damped = false;
        while !(res_norm < cfg.newton_tol) {
            if iters >= cfg.newton_max_iter || !res_norm.is_finite() {
                return Err(Error::NewtonDivergence {
                    time_row: ctx.time_row,
                    max_residual: res_norm,
                    iterations: iters,
                });
            }
            iters += 1;
            jac.lower.copy_from_slice(&ctx.implicit.lower);
            jac.upper.copy_from_slice(&ctx.implicit.upper);
            for j in 0..n {
                let (_, slope) = family.penalty(ctx.payoff[j] - v[j]);
                jac.diag[j] = ctx.implicit.diag[j] + ctx.dtau * slope;
                neg[j] = -residual[j];
            }
            solve_tridiagonal(&jac, &neg, &mut delta, false).map_err(|reason| Error::LinearSolve {
                time_row: ctx.time_row,
                reason,
            })?;

            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                for j in 0..n {
                    trial[j] = v[j] + step * delta[j];
                }
                let trial_norm = residual_of(&trial, &mut trial_residual);
                if trial_norm < res_norm || trial_norm < cfg.newton_tol {
                    v.copy_from_slice(&trial);
                    residual.copy_from_slice(&trial_residual);
                    res_norm = trial_norm;
                    accepted = true;
                    break;
                }
                step *= 0.5;
                damped = true;
            }
            if !accepted {
                return Err(Error::NewtonDivergence {
                    time_row: ctx.time_row,
                    max_residual: res_norm,
                    iterations: iters,
                });
            }
        }
        stats.newton_iters_max = stats.newton_iters_max.max(iters);
        stats.newton_iters_total += iters;
        if damped {
            stats.damped_steps += 1;
        }
        Ok(())
    })?;
    Ok(RationalSolution { surface, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_grid(market: &MarketParams, nx: usize, nt: usize) -> GridSpec {
        GridSpec::new(nx, nt, 8.0 * market.sigma * market.expiry.sqrt(), market.strike).unwrap()
    }

    #[test]
    fn thomas_matches_dense_solution() {
        let m = Tridiagonal {
            lower: vec![0.0, -1.0, -1.0, -1.0],
            diag: vec![4.0, 4.0, 4.0, 4.0],
            upper: vec![-1.0, -1.0, -1.0, 0.0],
        };
        let x = [1.0, -2.0, 0.5, 3.0];
        let b: Vec<f64> = (0..4).map(|j| m.row_dot(&x, j)).collect();
        let mut out = vec![0.0; 4];
        solve_tridiagonal(&m, &b, &mut out, true).unwrap();
        for (a, e) in out.iter().zip(x) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn thomas_reports_lost_dominance() {
        let m = Tridiagonal {
            lower: vec![0.0, 3.0],
            diag: vec![1.0, 1.0],
            upper: vec![3.0, 0.0],
        };
        let mut out = vec![0.0; 2];
        assert!(solve_tridiagonal(&m, &[1.0, 1.0], &mut out, true).is_err());
    }

    #[test]
    fn terminal_row_is_payoff() {
        let market = MarketParams::default();
        let grid = test_grid(&market, 101, 50);
        let cfg = SolverConfig::default();
        let exo = solve_exogenous(&market, &grid, |_, _| 0.7, &cfg).unwrap();
        let fam = IntensityFamily::exponential(20.0).unwrap();
        let rat = solve_rational(&market, &grid, &fam, &cfg).unwrap().surface;
        for surf in [&exo, &rat] {
            for (j, s) in surf.spots().iter().enumerate() {
                assert_eq!(surf.value(grid.n_time, j), (market.strike - s).max(0.0));
                assert_eq!(surf.interpolate(market.expiry, *s).unwrap(), (market.strike - s).max(0.0));
            }
        }
    }

    #[test]
    fn non_finite_intensity_is_rejected() {
        let market = MarketParams::default();
        let grid = test_grid(&market, 51, 10);
        let cfg = SolverConfig::default();
        let err = solve_exogenous(&market, &grid, |_, s| if s > 150.0 { f64::NAN } else { 1.0 }, &cfg);
        assert!(matches!(err, Err(Error::Input(_))));
        let err = solve_exogenous(&market, &grid, |_, _| -1.0, &cfg);
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn theta_zero_equals_unit_intensity() {
        let market = MarketParams::default();
        let grid = test_grid(&market, 201, 200);
        let cfg = SolverConfig::default();
        let exo = solve_exogenous(&market, &grid, |_, _| 1.0, &cfg).unwrap();
        let fam = IntensityFamily::exponential(0.0).unwrap();
        let rat = solve_rational(&market, &grid, &fam, &cfg).unwrap().surface;
        let worst = exo
            .values()
            .iter()
            .zip(rat.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "max difference {worst}");
    }

    #[test]
    fn newton_failure_is_reported() {
        let market = MarketParams::default();
        let grid = test_grid(&market, 51, 10);
        let cfg = SolverConfig {
            newton_tol: 1e-30,
            newton_max_iter: 2,
            ..SolverConfig::default()
        };
        let fam = IntensityFamily::exponential(50.0).unwrap();
        match solve_rational(&market, &grid, &fam, &cfg) {
            Err(Error::NewtonDivergence { time_row, .. }) => assert_eq!(time_row, grid.n_time - 1),
            other => panic!("expected Newton failure, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig { startup_half_steps: 3, ..SolverConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = SolverConfig::default();
        cfg.newton_max_iter = 0;
        assert!(cfg.validate().is_err());
        cfg = SolverConfig::default();
        cfg.newton_tol = 0.0;
        assert!(cfg.validate().is_err());
    }
}
