//! Market and contract constants, the log-moneyness grid, and the solved
//! price surface shared by every pricer in the crate.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Black-Scholes market with a single put contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Risk-free rate per year.
    pub r: f64,
    /// Volatility per square-root year.
    pub sigma: f64,
    pub strike: f64,
    /// Expiry in years.
    pub expiry: f64,
}

impl MarketParams {
    pub fn new(r: f64, sigma: f64, strike: f64, expiry: f64) -> Result<Self> {
        let m = Self {
            r,
            sigma,
            strike,
            expiry,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r.is_finite() && self.r >= 0.0) {
            return Err(Error::InvalidArgument(format!("r must be >= 0, got {}", self.r)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.strike.is_finite() && self.strike > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "strike must be > 0, got {}",
                self.strike
            )));
        }
        if !(self.expiry.is_finite() && self.expiry > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "expiry must be > 0, got {}",
                self.expiry
            )));
        }
        Ok(())
    }

    /// Intrinsic value of the put at spot `s`.
    pub fn payoff(&self, s: f64) -> f64 {
        (self.strike - s).max(0.0)
    }
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            r: 0.05,
            sigma: 0.2,
            strike: 100.0,
            expiry: 1.0,
        }
    }
}

/// `(K - s)^+`.
pub fn put_payoff(s: f64, strike: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("spot must be >= 0, got {s}")));
    }
    if !(strike > 0.0) {
        return Err(Error::Domain(format!("strike must be > 0, got {strike}")));
    }
    Ok((strike - s).max(0.0))
}

/// Uniform grid in `x = ln(s/K)` and calendar time.
///
/// The anchor spot sits on the middle node; nodes are generated outward from
/// it so the anchor is reproduced exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_space: usize,
    pub n_time: usize,
    pub log_half_width: f64,
    pub anchor_spot: f64,
}

pub const DEFAULT_N_SPACE: usize = 801;
pub const DEFAULT_N_TIME: usize = 2000;
/// Truncation half-width in units of `sigma * sqrt(T)`.
pub const DEFAULT_WIDTH_STDEVS: f64 = 8.0;

impl GridSpec {
    pub fn new(n_space: usize, n_time: usize, log_half_width: f64, anchor_spot: f64) -> Result<Self> {
        let g = Self {
            n_space,
            n_time,
            log_half_width,
            anchor_spot,
        };
        g.validate()?;
        Ok(g)
    }

    /// Default resolution with `L = 8 sigma sqrt(T)` around `anchor_spot`.
    pub fn default_for(market: &MarketParams, anchor_spot: f64) -> Result<Self> {
        Self::new(
            DEFAULT_N_SPACE,
            DEFAULT_N_TIME,
            DEFAULT_WIDTH_STDEVS * market.sigma * market.expiry.sqrt(),
            anchor_spot,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_space < 3 || self.n_space.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "n_space must be an odd integer >= 3, got {}",
                self.n_space
            )));
        }
        if self.n_time < 1 {
            return Err(Error::InvalidArgument("n_time must be >= 1".into()));
        }
        if !(self.log_half_width.is_finite() && self.log_half_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "log_half_width must be > 0, got {}",
                self.log_half_width
            )));
        }
        if !(self.anchor_spot.is_finite() && self.anchor_spot > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "anchor_spot must be > 0, got {}",
                self.anchor_spot
            )));
        }
        Ok(())
    }

    /// Same domain with both spacings halved.
    pub fn refined(&self) -> Self {
        Self {
            n_space: 2 * (self.n_space - 1) + 1,
            n_time: 2 * self.n_time,
            ..*self
        }
    }

    /// Same domain with both spacings doubled, if the node counts allow it.
    pub fn coarsened(&self) -> Result<Self> {
        let half = (self.n_space - 1) / 2;
        if !half.is_multiple_of(2) || !self.n_time.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "grid {}x{} cannot be halved around its anchor",
                self.n_space, self.n_time
            )));
        }
        let g = Self {
            n_space: half + 1,
            n_time: self.n_time / 2,
            ..*self
        };
        g.validate()?;
        Ok(g)
    }

    pub fn anchor_index(&self) -> usize {
        (self.n_space - 1) / 2
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.log_half_width / (self.n_space - 1) as f64
    }

    pub fn dt(&self, expiry: f64) -> f64 {
        expiry / self.n_time as f64
    }

    /// Log-moneyness of the anchor, `ln(s0/K)`.
    pub fn anchor_log_moneyness(&self, strike: f64) -> f64 {
        (self.anchor_spot / strike).ln()
    }

    pub fn log_moneyness_nodes(&self, strike: f64) -> Vec<f64> {
        let x0 = self.anchor_log_moneyness(strike);
        let h = self.dx();
        let mid = self.anchor_index() as f64;
        (0..self.n_space).map(|j| x0 + (j as f64 - mid) * h).collect()
    }

    /// Spot nodes `K e^{x_j}`; the middle node is the anchor spot itself.
    pub fn spot_nodes(&self, strike: f64) -> Vec<f64> {
        let mid = self.anchor_index();
        let mut s: Vec<f64> = self
            .log_moneyness_nodes(strike)
            .into_iter()
            .map(|x| strike * x.exp())
            .collect();
        s[mid] = self.anchor_spot;
        s
    }

    pub fn time_nodes(&self, expiry: f64) -> Vec<f64> {
        let dt = self.dt(expiry);
        let mut t: Vec<f64> = (0..=self.n_time).map(|i| i as f64 * dt).collect();
        t[self.n_time] = expiry;
        t
    }
}

/// `P(t_i, s_j)` on a [`GridSpec`], stored time-major from `t = 0` to `t = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSurface {
    pub grid: GridSpec,
    pub market: MarketParams,
    values: Vec<f64>,
    log_moneyness: Vec<f64>,
    spots: Vec<f64>,
    times: Vec<f64>,
}

impl PriceSurface {
    /// Wraps a time-major value matrix of shape `(n_time + 1) x n_space`.
    pub fn from_values(market: MarketParams, grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        market.validate()?;
        grid.validate()?;
        let expected = (grid.n_time + 1) * grid.n_space;
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "surface has {} values, grid needs {expected}",
                values.len()
            )));
        }
        Ok(Self {
            log_moneyness: grid.log_moneyness_nodes(market.strike),
            spots: grid.spot_nodes(market.strike),
            times: grid.time_nodes(market.expiry),
            grid,
            market,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, time_index: usize) -> &[f64] {
        let n = self.grid.n_space;
        &self.values[time_index * n..(time_index + 1) * n]
    }

    pub fn value(&self, time_index: usize, space_index: usize) -> f64 {
        self.values[time_index * self.grid.n_space + space_index]
    }

    pub fn spots(&self) -> &[f64] {
        &self.spots
    }

    pub fn log_moneyness(&self) -> &[f64] {
        &self.log_moneyness
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `P(0, s0)` read directly from the anchor node.
    pub fn anchor_value(&self) -> f64 {
        self.value(0, self.grid.anchor_index())
    }

    pub fn spot_range(&self) -> (f64, f64) {
        (self.spots[0], self.spots[self.spots.len() - 1])
    }

    /// Clamps `s` into the spatial domain of the surface.
    pub fn clamp_spot(&self, s: f64) -> f64 {
        let (lo, hi) = self.spot_range();
        s.clamp(lo, hi)
    }

    /// Bilinear interpolation: linear in `t` between rows and linear in
    /// `ln(s/K)` between nodes.
    pub fn interpolate(&self, t: f64, s: f64) -> Result<f64> {
        let n_t = self.grid.n_time;
        let expiry = self.market.expiry;
        let slack = 1e-12;
        if !(t >= -slack * expiry && t <= expiry * (1.0 + slack)) || !(s > 0.0) {
            return Err(Error::Extrapolation { t, s });
        }
        let x = (s / self.market.strike).ln();
        let x_lo = self.log_moneyness[0];
        let x_hi = self.log_moneyness[self.grid.n_space - 1];
        let h = self.grid.dx();
        if x < x_lo - slack * h || x > x_hi + slack * h {
            return Err(Error::Extrapolation { t, s });
        }

        let (j, wx) = cell(x - x_lo, h, self.grid.n_space - 1);
        let (i, wt) = cell(t, self.grid.dt(expiry), n_t);
        let lower = lerp(self.value(i, j), self.value(i, j + 1), wx);
        if wt == 0.0 {
            return Ok(lower);
        }
        let upper = lerp(self.value(i + 1, j), self.value(i + 1, j + 1), wx);
        Ok(lerp(lower, upper, wt))
    }

    /// Time cell `(row, weight of row + 1)` of calendar time `t`, clamped to `[0, T]`.
    pub(crate) fn time_cell(&self, t: f64) -> (usize, f64) {
        cell(t, self.grid.dt(self.market.expiry), self.grid.n_time)
    }

    /// Bilinear lookup at a precomputed time cell and log-moneyness `x`,
    /// clamped to the spatial domain.
    pub(crate) fn lookup_log(&self, (i, wt): (usize, f64), x: f64) -> f64 {
        let x_lo = self.log_moneyness[0];
        let (j, wx) = cell(x - x_lo, self.grid.dx(), self.grid.n_space - 1);
        let lower = lerp(self.value(i, j), self.value(i, j + 1), wx);
        if wt == 0.0 {
            return lower;
        }
        let upper = lerp(self.value(i + 1, j), self.value(i + 1, j + 1), wx);
        lerp(lower, upper, wt)
    }

    /// Writes `t,s,value` rows, time-major, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,s,value")?;
        for (i, t) in self.times.iter().enumerate() {
            for (j, s) in self.spots.iter().enumerate() {
                writeln!(out, "{},{},{}", fmt_f64(*t), fmt_f64(*s), fmt_f64(self.value(i, j)))?;
            }
        }
        Ok(())
    }
}

/// Locates `offset` in a uniform partition of `n_cells` cells of width `h`,
/// returning the left node and the weight of the right node.
fn cell(offset: f64, h: f64, n_cells: usize) -> (usize, f64) {
    let mut pos = (offset / h).clamp(0.0, n_cells as f64);
    // spots round-trip through exp/ln, so a query at a node lands a few ulps off it
    if (pos - pos.round()).abs() < 1e-9 {
        pos = pos.round();
    }
    let mut idx = pos.floor() as usize;
    if idx >= n_cells {
        idx = n_cells - 1;
    }
    let w = (pos - idx as f64).clamp(0.0, 1.0);
    (idx, w)
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        a
    } else if w == 1.0 {
        b
    } else {
        a + (b - a) * w
    }
}

/// 17 significant digits in scientific notation; round-trips every `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_surface<F: Fn(f64, f64) -> f64>(f: F) -> PriceSurface {
        let market = MarketParams::default();
        let grid = GridSpec::new(11, 4, 0.5, 100.0).unwrap();
        let xs = grid.log_moneyness_nodes(market.strike);
        let ts = grid.time_nodes(market.expiry);
        let mut values = Vec::new();
        for t in &ts {
            for x in &xs {
                values.push(f(*t, *x));
            }
        }
        PriceSurface::from_values(market, grid, values).unwrap()
    }

    #[test]
    fn payoff_examples() {
        assert_eq!(put_payoff(80.0, 100.0).unwrap(), 20.0);
        assert_eq!(put_payoff(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(put_payoff(120.0, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn payoff_rejects_bad_inputs() {
        assert!(matches!(put_payoff(-1.0, 100.0), Err(Error::Domain(_))));
        assert!(matches!(put_payoff(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(put_payoff(f64::NAN, 100.0), Err(Error::Domain(_))));
    }

    #[test]
    fn anchor_is_exactly_on_a_node() {
        let market = MarketParams::default();
        for anchor in [73.3, 100.0, 141.421356] {
            let grid = GridSpec::default_for(&market, anchor).unwrap();
            let spots = grid.spot_nodes(market.strike);
            assert_eq!(spots[grid.anchor_index()], anchor);
            let xs = grid.log_moneyness_nodes(market.strike);
            let x0 = (anchor / market.strike).ln();
            assert_eq!(xs[grid.anchor_index()], x0);
            assert!((xs[0] - (x0 - grid.log_half_width)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_rejects_even_node_count() {
        assert!(GridSpec::new(10, 5, 1.0, 100.0).is_err());
        assert!(GridSpec::new(1, 5, 1.0, 100.0).is_err());
        assert!(GridSpec::new(11, 0, 1.0, 100.0).is_err());
        assert!(GridSpec::new(11, 1, -1.0, 100.0).is_err());
    }

    #[test]
    fn market_validation() {
        assert!(MarketParams::new(0.0, 0.2, 100.0, 1.0).is_ok());
        assert!(MarketParams::new(-0.01, 0.2, 100.0, 1.0).is_err());
        assert!(MarketParams::new(0.05, 0.0, 100.0, 1.0).is_err());
        assert!(MarketParams::new(0.05, 0.2, 0.0, 1.0).is_err());
        assert!(MarketParams::new(0.05, 0.2, 100.0, 0.0).is_err());
    }

    #[test]
    fn interpolation_exact_at_nodes() {
        let surf = small_surface(|t, x| t * 3.0 + x.sin());
        for (i, t) in surf.times().iter().enumerate() {
            for (j, s) in surf.spots().iter().enumerate() {
                assert_eq!(surf.interpolate(*t, *s).unwrap(), surf.value(i, j));
            }
        }
    }

    #[test]
    fn terminal_row_query_returns_payoff() {
        let k = 100.0;
        let surf = small_surface(|t, x| if t == 1.0 { (k - k * x.exp()).max(0.0) } else { 1.0 });
        for s in surf.spots().to_vec() {
            assert_eq!(surf.interpolate(1.0, s).unwrap(), (k - s).max(0.0));
        }
    }

    #[test]
    fn midpoint_of_linear_surface() {
        let surf = small_surface(|_, x| 2.0 * x + 1.0);
        let xs = surf.log_moneyness().to_vec();
        let xm = 0.5 * (xs[3] + xs[4]);
        let s = 100.0 * xm.exp();
        let v = surf.interpolate(0.4, s).unwrap();
        assert!((v - (2.0 * xm + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_is_refused() {
        let surf = small_surface(|_, _| 0.0);
        let (lo, hi) = surf.spot_range();
        assert!(matches!(surf.interpolate(0.5, lo * 0.99), Err(Error::Extrapolation { .. })));
        assert!(matches!(surf.interpolate(0.5, hi * 1.01), Err(Error::Extrapolation { .. })));
        assert!(matches!(surf.interpolate(-0.1, 100.0), Err(Error::Extrapolation { .. })));
        assert!(matches!(surf.interpolate(1.1, 100.0), Err(Error::Extrapolation { .. })));
    }

    #[test]
    fn csv_dump_layout() {
        let surf = small_surface(|t, x| t + x);
        let mut buf = Vec::new();
        surf.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,s,value");
        assert_eq!(lines.len(), 1 + 5 * 11);
        let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first[0], 0.0);
        assert_eq!(first[1], surf.spots()[0]);
        assert_eq!(first[2], surf.value(0, 0));
        // second line is still t = 0: time-major order
        assert!(lines[2].starts_with("0.0000000000000000e0,"));
    }

    proptest! {
        #[test]
        fn payoff_monotone_lipschitz_bounded(a in 0.0f64..500.0, b in 0.0f64..500.0, k in 0.1f64..300.0) {
            let pa = put_payoff(a, k).unwrap();
            let pb = put_payoff(b, k).unwrap();
            prop_assert!(pa <= k && pa >= 0.0);
            prop_assert!((pa - pb).abs() <= (a - b).abs() + 1e-12);
            if a <= b { prop_assert!(pa >= pb); }
        }

        #[test]
        fn interpolation_reproduces_affine(c0 in -5.0f64..5.0, ct in -5.0f64..5.0, cx in -5.0f64..5.0,
                                           t in 0.0f64..1.0, u in 0.0f64..1.0) {
            let surf = small_surface(|t, x| c0 + ct * t + cx * x);
            let xs = surf.log_moneyness();
            let x = xs[0] + u * (xs[xs.len() - 1] - xs[0]);
            let v = surf.interpolate(t, 100.0 * x.exp()).unwrap();
            prop_assert!((v - (c0 + ct * t + cx * x)).abs() < 1e-9);
        }

        #[test]
        fn fmt_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
