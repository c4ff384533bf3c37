//! Independent price oracles: the European closed form, the constant-intensity
//! quadrature, and two American put pricers (CRR tree and grid-matched PSOR).

use std::io::Write;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::market::{fmt_f64, GridSpec, MarketParams, PriceSurface};
use crate::pde::{march, SolverConfig};

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Black-Scholes European put at calendar time `t` and spot `s`.
pub fn european_put(market: &MarketParams, t: f64, s: f64) -> Result<f64> {
    if !(t < market.expiry) {
        return Err(Error::Domain(format!(
            "t={t} is not before expiry {}; use the payoff",
            market.expiry
        )));
    }
    if !(s > 0.0) {
        return Err(Error::Domain(format!("spot must be > 0, got {s}")));
    }
    Ok(put_with_horizon(market, market.expiry - t, s))
}

/// Put price with `horizon` years left; the payoff when the horizon is zero.
fn put_with_horizon(market: &MarketParams, horizon: f64, s: f64) -> f64 {
    let k = market.strike;
    if horizon <= 0.0 {
        return (k - s).max(0.0);
    }
    let vol = market.sigma * horizon.sqrt();
    let d1 = ((s / k).ln() + (market.r + 0.5 * market.sigma * market.sigma) * horizon) / vol;
    let d2 = d1 - vol;
    k * (-market.r * horizon).exp() * norm_cdf(-d2) - s * norm_cdf(-d1)
}

/// Absolute accuracy target of the quadrature, relative to the strike.
const QUAD_TOL: f64 = 1e-10;

/// Price of the put exercised at an independent exponential clock of rate
/// `lambda`:
///
/// ```text
/// int_0^H lambda e^{-lambda v} Put(v) dv + e^{-lambda H} Put(H),  H = T - t
/// ```
///
/// where `Put(v)` is the European put with `v` years left. The integral is
/// taken over the exercise-time CDF `u = 1 - e^{-lambda v}` with `u = z^2`,
/// which removes the square-root behaviour of `Put(v)` at `v = 0`.
pub fn constant_intensity_quadrature(market: &MarketParams, lambda: f64, t: f64, s: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(s > 0.0) {
        return Err(Error::Domain(format!("spot must be > 0, got {s}")));
    }
    let horizon = market.expiry - t;
    if horizon < 0.0 {
        return Err(Error::Domain(format!("t={t} is after expiry")));
    }
    if lambda == 0.0 || horizon == 0.0 {
        return Ok(put_with_horizon(market, horizon, s));
    }
    let survive = (-lambda * horizon).exp();
    let u_max = -(-lambda * horizon).exp_m1();
    let z_max = u_max.sqrt();
    let integrand = |z: f64| {
        let u = z * z;
        let v = (-(-u).ln_1p() / lambda).min(horizon);
        2.0 * z * put_with_horizon(market, v, s)
    };
    let tol = QUAD_TOL * market.strike;
    let panels = 32;
    let width = z_max / panels as f64;
    let mut integral = 0.0;
    for p in 0..panels {
        let a = p as f64 * width;
        let b = if p + 1 == panels { z_max } else { a + width };
        integral += adaptive_simpson(&integrand, a, b, tol / panels as f64, 50);
    }
    Ok(integral + survive * put_with_horizon(market, horizon, s))
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: usize) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Cox-Ross-Rubinstein tree for the American put.
pub fn binomial_american(market: &MarketParams, t: f64, s: f64, steps: usize) -> Result<f64> {
    market.validate()?;
    if steps < 1 {
        return Err(Error::InvalidArgument("steps must be >= 1".into()));
    }
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("spot must be >= 0, got {s}")));
    }
    let k = market.strike;
    let horizon = market.expiry - t;
    if horizon <= 0.0 || s == 0.0 {
        return Ok((k - s).max(0.0));
    }
    let dt = horizon / steps as f64;
    let up_log = market.sigma * dt.sqrt();
    let u = up_log.exp();
    let d = 1.0 / u;
    let growth = (market.r * dt).exp();
    let p = (growth - d) / (u - d);
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "{steps} steps give risk-neutral probability {p}; use more steps"
        )));
    }
    let disc = 1.0 / growth;
    let (pu, pd) = (disc * p, disc * (1.0 - p));

    // spot at level i, node j is s u^{2j - i}, read from a shared power table
    let n = steps;
    let powers: Vec<f64> = (0..=2 * n).map(|k| s * ((k as f64 - n as f64) * up_log).exp()).collect();
    let mut values: Vec<f64> = (0..=n).map(|j| (k - powers[2 * j]).max(0.0)).collect();
    for i in (0..n).rev() {
        for j in 0..=i {
            let cont = pu * values[j + 1] + pd * values[j];
            let spot = powers[2 * j + n - i];
            values[j] = cont.max(k - spot);
        }
    }
    Ok(values[0])
}

/// Grid-matched American put: the surface and the critical spot per row.
#[derive(Debug, Clone)]
pub struct AmericanSolution {
    pub surface: PriceSurface,
    /// Largest spot with `P_A = (K - s)^+ > 0` per time row; `None` when no
    /// node of the row is in the exercise region.
    pub boundary: Vec<Option<f64>>,
}

impl AmericanSolution {
    /// Writes `t,y` rows; rows without an exercise region carry `NaN`.
    pub fn write_boundary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,y")?;
        for (t, y) in self.surface.times().iter().zip(&self.boundary) {
            writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(y.unwrap_or(f64::NAN)))?;
        }
        Ok(())
    }
}

/// Solves the discrete complementarity problem `min(A V - b, V - g) = 0` at
/// every step with projected SOR, on the same operator and startup as the
/// intensity solvers.
pub fn psor_american(market: &MarketParams, grid: &GridSpec, cfg: &SolverConfig) -> Result<AmericanSolution> {
    let omega = cfg.psor_omega;
    let surface = march(market, grid, cfg, |ctx, v| {
        let a = ctx.implicit;
        let n = v.len();
        for j in 0..n {
            v[j] = v[j].max(ctx.payoff[j]);
        }
        let mut last_change = f64::INFINITY;
        for _ in 0..cfg.psor_max_sweeps {
            let mut change: f64 = 0.0;
            for j in 0..n {
                let resid = ctx.rhs[j] - a.row_dot(v, j);
                let updated = (v[j] + omega * resid / a.diag[j]).max(ctx.payoff[j]);
                change = change.max((updated - v[j]).abs());
                v[j] = updated;
            }
            last_change = change;
            if change < cfg.psor_tol {
                return Ok(());
            }
        }
        Err(Error::PsorDivergence {
            time_row: ctx.time_row,
            sweeps: cfg.psor_max_sweeps,
            last_change,
        })
    })?;
    let boundary = exercise_boundary(&surface, 10.0 * cfg.psor_tol);
    Ok(AmericanSolution { surface, boundary })
}

/// Per row, the largest node spot with a positive payoff where the price
/// equals the payoff to within `tol`.
pub fn exercise_boundary(surface: &PriceSurface, tol: f64) -> Vec<Option<f64>> {
    let k = surface.market.strike;
    let spots = surface.spots();
    (0..=surface.grid.n_time)
        .map(|i| {
            let row = surface.row(i);
            spots
                .iter()
                .zip(row)
                .rev()
                .find(|(s, p)| {
                    let g = k - **s;
                    g > 0.0 && (**p - g).abs() < tol
                })
                .map(|(s, _)| *s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_market(r: f64) -> MarketParams {
        MarketParams::new(r, 0.2, 100.0, 1.0).unwrap()
    }

    #[test]
    fn european_limits_and_domain() {
        let m = MarketParams::default();
        let tiny = european_put(&m, 0.0, 1e-8).unwrap();
        assert!((tiny - 100.0 * (-0.05f64).exp()).abs() < 1e-6);
        let m0 = MarketParams::new(0.05, 0.2, 1e-9, 1.0).unwrap();
        assert!(european_put(&m0, 0.0, 100.0).unwrap() < 1e-12);
        assert!(matches!(european_put(&m, 1.0, 100.0), Err(Error::Domain(_))));
        assert!(matches!(european_put(&m, 0.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn quadrature_limits() {
        let m = MarketParams::default();
        let eu = european_put(&m, 0.0, 100.0).unwrap();
        assert_eq!(constant_intensity_quadrature(&m, 0.0, 0.0, 100.0).unwrap(), eu);
        let hot = constant_intensity_quadrature(&m, 1e6, 0.0, 80.0).unwrap();
        assert!((hot - 20.0).abs() < 1e-3 * m.strike);
        let mid = constant_intensity_quadrature(&unit_market(0.0), 1.0, 0.0, 100.0).unwrap();
        let eu0 = european_put(&unit_market(0.0), 0.0, 100.0).unwrap();
        assert!(mid > 0.0 && mid < eu0);
        assert!(constant_intensity_quadrature(&m, -1.0, 0.0, 100.0).is_err());
    }

    #[test]
    fn quadrature_matches_brute_force_riemann_sum() {
        // midpoint rule directly in v, many points, independent of the z-substitution
        let m = MarketParams::default();
        let lambda = 2.0;
        let s = 95.0;
        let n = 400_000;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let v = (i as f64 + 0.5) * h;
            acc += lambda * (-lambda * v).exp() * put_with_horizon(&m, v, s) * h;
        }
        acc += (-lambda).exp() * put_with_horizon(&m, 1.0, s);
        let q = constant_intensity_quadrature(&m, lambda, 0.0, s).unwrap();
        assert!((q - acc).abs() < 1e-6, "quadrature {q} vs riemann {acc}");
    }

    #[test]
    fn tree_corner_cases() {
        let m = MarketParams::default();
        assert_eq!(binomial_american(&m, 0.0, 0.0, 100).unwrap(), 100.0);
        assert_eq!(binomial_american(&m, 1.0, 90.0, 100).unwrap(), 10.0);
        assert!(binomial_american(&m, 0.0, 100.0, 0).is_err());
    }

    #[test]
    fn tree_with_zero_rate_is_european() {
        let m = unit_market(0.0);
        let eu = european_put(&m, 0.0, 100.0).unwrap();
        let am = binomial_american(&m, 0.0, 100.0, 4000).unwrap();
        assert!((am - eu).abs() < 2e-3 * m.strike, "{am} vs {eu}");
    }

    #[test]
    fn tree_self_convergence() {
        let m = MarketParams::default();
        // odd/even step counts oscillate for CRR; compare within one parity
        let v: Vec<f64> = [500, 1000, 2000]
            .iter()
            .map(|n| binomial_american(&m, 0.0, 100.0, *n).unwrap())
            .collect();
        let (d1, d2) = ((v[1] - v[0]).abs(), (v[2] - v[1]).abs());
        assert!(d2 < d1, "changes {d1} then {d2}");
        let ratio = d1 / d2;
        assert!(ratio > 2.0 / 3.0 && ratio < 6.0, "ratio {ratio}");
    }

    #[test]
    fn tree_bounds() {
        let m = MarketParams::default();
        for s in [60.0, 90.0, 100.0, 120.0] {
            let am = binomial_american(&m, 0.0, s, 500).unwrap();
            let eu = european_put(&m, 0.0, s).unwrap();
            assert!(am >= eu - 1e-9 && am <= m.strike && am >= (m.strike - s).max(0.0));
        }
    }

    #[test]
    fn psor_obstacle_and_boundary() {
        let m = MarketParams::default();
        let grid = GridSpec::new(201, 200, 1.6, 100.0).unwrap();
        let cfg = SolverConfig::default();
        let sol = psor_american(&m, &grid, &cfg).unwrap();
        for (i, _) in sol.surface.times().iter().enumerate() {
            for (j, s) in sol.surface.spots().iter().enumerate() {
                assert!(sol.surface.value(i, j) >= (m.strike - s).max(0.0) - cfg.psor_tol);
            }
        }
        assert!(sol.boundary.iter().all(|y| y.is_some()));
        let mut buf = Vec::new();
        sol.write_boundary_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), grid.n_time + 2);
    }
}
