//! Run configuration, the theta-sweep convergence experiment and its CSV
//! output.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{default_epsilon, vanishing_terms, IntensityFamily, IntensityKind, DEFAULT_CAP};
use crate::market::{fmt_f64, GridSpec, MarketParams, PriceSurface};
use crate::mc::MCConfig;
use crate::pde::{solve_rational, SolverConfig};
use crate::reference::{binomial_american, psor_american};

pub const DEFAULT_LADDER: [f64; 5] = [1.0, 5.0, 25.0, 125.0, 625.0];
pub const DEFAULT_TREE_STEPS: usize = 10_000;

/// Everything a CLI run needs, with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub market: MarketParams,
    pub grid: GridSpec,
    pub family: IntensityFamily,
    pub theta_ladder: Vec<f64>,
    pub mc: MCConfig,
    pub solver: SolverConfig,
    pub tree_steps: usize,
    pub output: Option<PathBuf>,
    /// Adds the max-over-grid error column to sweep output.
    pub full_surface: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RawConfig::default().resolve().expect("defaults are valid")
    }
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    r: Option<f64>,
    sigma: Option<f64>,
    strike: Option<f64>,
    expiry: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n_space: Option<usize>,
    n_time: Option<usize>,
    log_half_width: Option<f64>,
    anchor_spot: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawIntensity {
    family: Option<String>,
    theta: Option<f64>,
    lambda: Option<f64>,
    cap: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    n_paths: Option<usize>,
    n_steps: Option<usize>,
    seed: Option<u64>,
    antithetic: Option<bool>,
}

/// On-disk JSON layout; every field is optional.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    market: RawMarket,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    intensity: RawIntensity,
    #[serde(default)]
    mc: RawMc,
    theta_ladder: Option<Vec<f64>>,
    tree_steps: Option<usize>,
    output: Option<PathBuf>,
}

impl RawConfig {
    fn resolve(self) -> Result<RunConfig> {
        let dm = MarketParams::default();
        let market = MarketParams::new(
            self.market.r.unwrap_or(dm.r),
            self.market.sigma.unwrap_or(dm.sigma),
            self.market.strike.unwrap_or(dm.strike),
            self.market.expiry.unwrap_or(dm.expiry),
        )?;
        let base = GridSpec::default_for(&market, self.grid.anchor_spot.unwrap_or(market.strike))?;
        let grid = GridSpec::new(
            self.grid.n_space.unwrap_or(base.n_space),
            self.grid.n_time.unwrap_or(base.n_time),
            self.grid.log_half_width.unwrap_or(base.log_half_width),
            base.anchor_spot,
        )?;
        let theta = self.intensity.theta.unwrap_or(10.0);
        let cap = self.intensity.cap.unwrap_or(DEFAULT_CAP);
        let kind = match self.intensity.family.as_deref().unwrap_or("exp") {
            "exp" => IntensityKind::Exponential,
            "const" => IntensityKind::Constant,
            "capped_exp" => IntensityKind::CappedExponential,
            other => return Err(Error::Config(format!("unknown intensity family {other:?}"))),
        };
        let family = IntensityFamily::new(kind, theta, self.intensity.lambda.unwrap_or(1.0), cap)?;
        let dmc = MCConfig::default();
        let mc = MCConfig {
            n_paths: self.mc.n_paths.unwrap_or(dmc.n_paths),
            n_steps: self.mc.n_steps.unwrap_or(dmc.n_steps),
            seed: self.mc.seed.unwrap_or(dmc.seed),
            antithetic: self.mc.antithetic.unwrap_or(dmc.antithetic),
        };
        mc.validate()?;
        Ok(RunConfig {
            market,
            grid,
            family,
            theta_ladder: self.theta_ladder.unwrap_or_else(|| DEFAULT_LADDER.to_vec()),
            mc,
            solver: SolverConfig::for_strike(market.strike),
            tree_steps: self.tree_steps.unwrap_or(DEFAULT_TREE_STEPS),
            output: self.output,
            full_surface: false,
        })
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.resolve()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// One rung of the convergence sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub theta: f64,
    pub p_theta: f64,
    pub p_american_psor: f64,
    pub p_american_tree: f64,
    pub abs_error: f64,
    pub term_bad_regret: f64,
    pub term_ok_regret: f64,
    pub newton_iters_max: usize,
    /// Max over all nodes of `|P_A - P_theta|`, when requested.
    pub max_abs_error_grid: Option<f64>,
    /// Max over all nodes of `P_theta - P_A`.
    pub max_excess_over_american: f64,
}

pub fn validate_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "theta ladder needs at least 3 entries, got {}",
            ladder.len()
        )));
    }
    if ladder.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || ladder.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "theta ladder must be strictly increasing, finite and >= 0".into(),
        ));
    }
    Ok(())
}

/// Solves the American put once and the intensity model for every theta of
/// the ladder; rows come back in ladder order.
pub fn run_sweep(config: &RunConfig) -> Result<Vec<SweepRow>> {
    validate_ladder(&config.theta_ladder)?;
    let market = &config.market;
    let s0 = config.grid.anchor_spot;
    let (american, tree) = rayon::join(
        || psor_american(market, &config.grid, &config.solver),
        || binomial_american(market, 0.0, s0, config.tree_steps),
    );
    let american = american?;
    let tree = tree?;
    let p_a = american.surface.anchor_value();

    config
        .theta_ladder
        .par_iter()
        .map(|&theta| {
            sweep_row(config, &american.surface, p_a, tree, theta).map_err(|e| Error::Sweep {
                theta,
                source: Box::new(e),
            })
        })
        .collect()
}

fn sweep_row(config: &RunConfig, american: &PriceSurface, p_a: f64, tree: f64, theta: f64) -> Result<SweepRow> {
    let family = config.family.with_theta(theta)?;
    let sol = solve_rational(&config.market, &config.grid, &family, &config.solver)?;
    let p_theta = sol.surface.anchor_value();
    let (term_bad_regret, term_ok_regret) = if theta > 0.0 {
        vanishing_terms(&family, config.market.strike, default_epsilon(theta), config.market.expiry)?
    } else {
        // epsilon(theta) = theta^{-1/2} is undefined at zero
        (f64::NAN, f64::NAN)
    };
    let mut max_abs: f64 = 0.0;
    let mut max_excess = f64::NEG_INFINITY;
    for (a, p) in american.values().iter().zip(sol.surface.values()) {
        max_abs = max_abs.max((a - p).abs());
        max_excess = max_excess.max(p - a);
    }
    Ok(SweepRow {
        theta,
        p_theta,
        p_american_psor: p_a,
        p_american_tree: tree,
        abs_error: (p_a - p_theta).abs(),
        term_bad_regret,
        term_ok_regret,
        newton_iters_max: sol.stats.newton_iters_max,
        max_abs_error_grid: config.full_surface.then_some(max_abs),
        max_excess_over_american: max_excess,
    })
}

pub const SWEEP_HEADER: &str = "theta,p_theta,p_american_psor,p_american_tree,abs_error,term_bad,term_ok,newton_iters_max";

/// Writes the sweep table. Identical rows always give identical bytes.
pub fn emit_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no sweep rows to write".into()));
    }
    let full = rows.iter().any(|r| r.max_abs_error_grid.is_some());
    if full {
        writeln!(out, "{SWEEP_HEADER},max_abs_error_grid")?;
    } else {
        writeln!(out, "{SWEEP_HEADER}")?;
    }
    for r in rows {
        write!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt_f64(r.theta),
            fmt_f64(r.p_theta),
            fmt_f64(r.p_american_psor),
            fmt_f64(r.p_american_tree),
            fmt_f64(r.abs_error),
            fmt_f64(r.term_bad_regret),
            fmt_f64(r.term_ok_regret),
            r.newton_iters_max
        )?;
        if full {
            write!(out, ",{}", fmt_f64(r.max_abs_error_grid.unwrap_or(f64::NAN)))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_csv_to_path(rows: &[SweepRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no sweep rows to write".into()));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    emit_csv(rows, std::io::BufWriter::new(file))
}

/// Discretization error estimate for the PSOR price at `(0, s0)` on `grid`.
///
/// Solves on the coarsened, given and refined grids, measures the observed
/// convergence order `p` from the two successive changes and returns the
/// Richardson estimate `|P_N - P_2N| * 2^p / (2^p - 1)`, which is the
/// distance from the given grid's price to the extrapolated limit. The order
/// is clamped to `[1, 4]` so a noisy ratio cannot blow the estimate up or
/// shrink it to nothing.
pub fn psor_grid_error_estimate(market: &MarketParams, grid: &GridSpec, cfg: &SolverConfig) -> Result<GridErrorEstimate> {
    let coarse_grid = grid.coarsened()?;
    let fine_grid = grid.refined();
    let (coarse, (mid, fine)) = rayon::join(
        || psor_american(market, &coarse_grid, cfg),
        || rayon::join(|| psor_american(market, grid, cfg), || psor_american(market, &fine_grid, cfg)),
    );
    let prices = [
        coarse?.surface.anchor_value(),
        mid?.surface.anchor_value(),
        fine?.surface.anchor_value(),
    ];
    let d_coarse = (prices[0] - prices[1]).abs();
    let d_fine = (prices[1] - prices[2]).abs();
    let order = if d_fine > 0.0 && d_coarse > 0.0 {
        (d_coarse / d_fine).log2().clamp(1.0, 4.0)
    } else {
        2.0
    };
    let gain = 2f64.powf(order);
    Ok(GridErrorEstimate {
        prices,
        order,
        error: d_fine * gain / (gain - 1.0),
    })
}

/// Output of [`psor_grid_error_estimate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridErrorEstimate {
    /// PSOR prices on the coarsened, given and refined grids.
    pub prices: [f64; 3],
    pub order: f64,
    pub error: f64,
}
