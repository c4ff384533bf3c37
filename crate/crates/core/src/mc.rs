//! Monte Carlo realisation of the exercise model: exact GBM steps, and an
//! exercise time given by the first jump of a point process whose intensity
//! is read off a solved price surface.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::IntensityFamily;
use crate::market::{fmt_f64, MarketParams, PriceSurface};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Pair every path with its mirror image; `n_paths` is rounded up to even.
    pub antithetic: bool,
}

impl Default for MCConfig {
    fn default() -> Self {
        Self {
            n_paths: 200_000,
            n_steps: 500,
            seed: 42,
            antithetic: true,
        }
    }
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 || self.n_steps < 1 {
            return Err(Error::InvalidArgument("n_paths and n_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCEstimate {
    pub price: f64,
    pub std_error: f64,
    /// Share of paths exercised before expiry.
    pub exercise_fraction: f64,
    /// Mean exercise time among exercised paths; `NaN` when none exercised.
    pub mean_exercise_time: f64,
}

impl MCEstimate {
    pub const CSV_HEADER: &'static str = "price,std_error,exercise_fraction,mean_exercise_time";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            fmt_f64(self.price),
            fmt_f64(self.std_error),
            fmt_f64(self.exercise_fraction),
            fmt_f64(self.mean_exercise_time)
        )
    }
}

/// First time the trapezoidal integral of `intensity` over `times` reaches
/// `threshold`, interpolating linearly inside the crossing step.
pub fn sample_exercise_time(times: &[f64], intensity: &[f64], threshold: f64) -> Result<Option<f64>> {
    if times.len() != intensity.len() || times.len() < 2 {
        return Err(Error::Input("times and intensities must have equal length >= 2".into()));
    }
    if let Some(bad) = intensity.iter().find(|m| !(**m >= 0.0)) {
        return Err(Error::Input(format!("intensity {bad} is negative")));
    }
    let mut acc = 0.0;
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        let inc = 0.5 * (intensity[k] + intensity[k + 1]) * dt;
        if inc > 0.0 && acc + inc >= threshold {
            let frac = ((threshold - acc) / inc).clamp(0.0, 1.0);
            return Ok(Some(times[k] + frac * dt));
        }
        acc += inc;
    }
    Ok(None)
}

/// Paths per parallel work item; the reduction over blocks runs in block order.
const BLOCK: usize = 512;

#[derive(Debug, Clone, Copy, Default)]
struct Partial {
    sum: f64,
    sum_sq: f64,
    exercised: usize,
    exercise_time_sum: f64,
}

impl Partial {
    fn merge(mut self, o: Partial) -> Partial {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.exercised += o.exercised;
        self.exercise_time_sum += o.exercise_time_sum;
        self
    }
}

struct PathOutcome {
    discounted_payoff: f64,
    exercise_time: Option<f64>,
}

/// Estimates the price at `(0, s0)` of the put exercised with intensity
/// `f((K - S)^+ - P(t, S))`, `P` read from `surface`.
///
/// Each path (or antithetic pair) draws from its own ChaCha stream selected
/// by its index, and partial sums are combined in a fixed order, so the
/// estimate does not depend on the number of threads.
pub fn mc_price(market: &MarketParams, surface: &PriceSurface, family: &IntensityFamily, mc: &MCConfig, s0: f64) -> Result<MCEstimate> {
    market.validate()?;
    family.validate()?;
    mc.validate()?;
    if surface.market != *market {
        return Err(Error::Input("surface was solved for a different market".into()));
    }
    if !(s0 > 0.0) {
        return Err(Error::Input(format!("s0 must be > 0, got {s0}")));
    }
    let (lo, hi) = surface.spot_range();
    if s0 < lo || s0 > hi {
        return Err(Error::Input(format!("s0={s0} lies outside the surface domain [{lo}, {hi}]")));
    }

    let sim = PathSimulator::new(market, surface, family, mc.n_steps);
    let units = if mc.antithetic { mc.n_paths.div_ceil(2) } else { mc.n_paths };
    let n_blocks = units.div_ceil(BLOCK);

    let partials: Vec<Result<Partial>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut part = Partial::default();
            let mut scratch = Scratch::new(mc.n_steps);
            for unit in b * BLOCK..((b + 1) * BLOCK).min(units) {
                let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
                rng.set_stream(unit as u64);
                let draws = Draws::sample(&mut rng, mc.n_steps);
                let first = sim.run(s0, &draws, 1.0, &mut scratch)?;
                let mut sample = first.discounted_payoff;
                part.record_exercise(&first);
                if mc.antithetic {
                    let second = sim.run(s0, &draws, -1.0, &mut scratch)?;
                    part.record_exercise(&second);
                    sample = 0.5 * (sample + second.discounted_payoff);
                }
                part.sum += sample;
                part.sum_sq += sample * sample;
            }
            Ok(part)
        })
        .collect();

    let mut total = Partial::default();
    for p in partials {
        total = total.merge(p?);
    }
    let n = units as f64;
    let mean = total.sum / n;
    let var = if units > 1 {
        ((total.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let paths = if mc.antithetic { 2 * units } else { units };
    Ok(MCEstimate {
        price: mean,
        std_error: (var / n).sqrt(),
        exercise_fraction: total.exercised as f64 / paths as f64,
        mean_exercise_time: if total.exercised > 0 {
            total.exercise_time_sum / total.exercised as f64
        } else {
            f64::NAN
        },
    })
}

impl Partial {
    fn record_exercise(&mut self, o: &PathOutcome) {
        if let Some(tau) = o.exercise_time {
            self.exercised += 1;
            self.exercise_time_sum += tau;
        }
    }
}

/// Random inputs of one path; the antithetic partner flips their signs.
struct Draws {
    normals: Vec<f64>,
    uniform: f64,
    bridge: f64,
}

impl Draws {
    fn sample(rng: &mut ChaCha8Rng, n_steps: usize) -> Self {
        let normals = (0..n_steps).map(|_| rng.sample(StandardNormal)).collect();
        // open interval keeps -ln(u) finite for both partners
        let uniform = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        let bridge = rng.sample(StandardNormal);
        Self {
            normals,
            uniform,
            bridge,
        }
    }
}

struct Scratch {
    log_spot: Vec<f64>,
    intensity: Vec<f64>,
}

impl Scratch {
    fn new(n_steps: usize) -> Self {
        Self {
            log_spot: vec![0.0; n_steps + 1],
            intensity: vec![0.0; n_steps + 1],
        }
    }
}

struct PathSimulator<'a> {
    market: &'a MarketParams,
    surface: &'a PriceSurface,
    family: &'a IntensityFamily,
    times: Vec<f64>,
    /// Surface time cell of each path time.
    cells: Vec<(usize, f64)>,
    log_strike: f64,
    dt: f64,
    drift: f64,
    vol: f64,
}

impl<'a> PathSimulator<'a> {
    fn new(market: &'a MarketParams, surface: &'a PriceSurface, family: &'a IntensityFamily, n_steps: usize) -> Self {
        let dt = market.expiry / n_steps as f64;
        let mut times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();
        times[n_steps] = market.expiry;
        let cells = times.iter().map(|t| surface.time_cell(*t)).collect();
        Self {
            market,
            surface,
            family,
            times,
            cells,
            log_strike: market.strike.ln(),
            dt,
            drift: (market.r - 0.5 * market.sigma * market.sigma) * dt,
            vol: market.sigma * dt.sqrt(),
        }
    }

    fn run(&self, s0: f64, draws: &Draws, sign: f64, scratch: &mut Scratch) -> Result<PathOutcome> {
        let k = self.market.strike;
        let n = self.times.len() - 1;
        scratch.log_spot[0] = s0.ln();
        for step in 0..n {
            scratch.log_spot[step + 1] = scratch.log_spot[step] + self.drift + self.vol * sign * draws.normals[step];
        }
        for (i, (cell, ls)) in self.cells.iter().zip(&scratch.log_spot).enumerate() {
            // lookups outside the grid clamp to the boundary node
            let p = self.surface.lookup_log(*cell, ls - self.log_strike);
            scratch.intensity[i] = self.family.eval((k - ls.exp()).max(0.0) - p);
        }
        let u = if sign > 0.0 { draws.uniform } else { 1.0 - draws.uniform };
        let threshold = if u < 1.0 { -u.ln() } else { f64::MIN_POSITIVE };
        let tau = sample_exercise_time(&self.times, &scratch.intensity, threshold)?;
        let (time, log_spot) = match tau {
            Some(tau) => {
                // Brownian bridge between the grid points around tau
                let step = ((tau / self.dt).floor() as usize).min(n - 1);
                let (t0, t1) = (self.times[step], self.times[step + 1]);
                let w = ((tau - t0) / (t1 - t0)).clamp(0.0, 1.0);
                let (x0, x1) = (scratch.log_spot[step], scratch.log_spot[step + 1]);
                let bridge_sd = self.market.sigma * ((tau - t0) * (t1 - tau) / (t1 - t0)).max(0.0).sqrt();
                (tau, x0 + w * (x1 - x0) + bridge_sd * sign * draws.bridge)
            }
            None => (self.market.expiry, scratch.log_spot[n]),
        };
        let payoff = (k - log_spot.exp()).max(0.0);
        Ok(PathOutcome {
            discounted_payoff: (-self.market.r * time).exp() * payoff,
            exercise_time: tau,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::GridSpec;
    use crate::pde::{solve_exogenous, SolverConfig};

    #[test]
    fn zero_intensity_never_exercises() {
        let t: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        assert_eq!(sample_exercise_time(&t, &[0.0; 11], 1e-9).unwrap(), None);
    }

    #[test]
    fn tiny_threshold_exercises_immediately() {
        let t: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let tau = sample_exercise_time(&t, &[1.0; 11], 1e-300).unwrap().unwrap();
        assert!(tau <= 1e-12);
    }

    #[test]
    fn crossing_is_interpolated_within_step() {
        let t = [0.0, 1.0, 2.0];
        // trapezoid over [0,1] gives 1, over [1,2] gives 2
        let tau = sample_exercise_time(&t, &[0.0, 2.0, 2.0], 2.0).unwrap().unwrap();
        assert!((tau - 1.5).abs() < 1e-15);
    }

    #[test]
    fn negative_intensity_rejected() {
        let t = [0.0, 1.0];
        assert!(matches!(sample_exercise_time(&t, &[1.0, -0.5], 1.0), Err(Error::Input(_))));
        assert!(sample_exercise_time(&t, &[1.0], 1.0).is_err());
    }

    #[test]
    fn constant_clock_exercise_probability() {
        // P(exercise before T) = 1 - e^{-lambda T} for an exponential clock
        let lambda = 0.8;
        let horizon = 1.5;
        let t: Vec<f64> = (0..=50).map(|k| k as f64 * horizon / 50.0).collect();
        let mu = vec![lambda; t.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let e: f64 = rng.sample(rand_distr::Exp1);
            if sample_exercise_time(&t, &mu, e).unwrap().is_some() {
                hits += 1;
            }
        }
        let p = 1.0 - (-lambda * horizon).exp();
        let phat = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((phat - p).abs() < 3.0 * se, "{phat} vs {p}");
    }

    fn const_surface(market: &MarketParams, lambda: f64) -> PriceSurface {
        let grid = GridSpec::new(201, 100, 8.0 * market.sigma * market.expiry.sqrt(), 100.0).unwrap();
        solve_exogenous(market, &grid, |_, _| lambda, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn deterministic_path_pays_intrinsic() {
        let market = MarketParams::new(0.0, 1e-6, 100.0, 1.0).unwrap();
        let grid = GridSpec::new(51, 20, 0.01, 90.0).unwrap();
        let surface = solve_exogenous(&market, &grid, |_, _| 1.3, &SolverConfig::default()).unwrap();
        let fam = IntensityFamily::constant(1.3).unwrap();
        let mc = MCConfig {
            n_paths: 2000,
            n_steps: 50,
            seed: 1,
            antithetic: true,
        };
        let est = mc_price(&market, &surface, &fam, &mc, 90.0).unwrap();
        assert!((est.price - 10.0).abs() < 1e-3, "{}", est.price);
        let p = 1.0 - (-1.3f64).exp();
        assert!((est.exercise_fraction - p).abs() < 0.05);
    }

    #[test]
    fn seed_determinism_across_thread_counts() {
        let market = MarketParams::default();
        let surface = const_surface(&market, 1.0);
        let fam = IntensityFamily::constant(1.0).unwrap();
        let mc = MCConfig {
            n_paths: 3000,
            n_steps: 40,
            seed: 99,
            antithetic: true,
        };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_price(&market, &surface, &fam, &mc, 100.0).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.price.to_bits(), b.price.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        assert_eq!(a.csv_row(), b.csv_row());
    }

    #[test]
    fn rejects_mismatched_surface() {
        let market = MarketParams::default();
        let surface = const_surface(&market, 1.0);
        let other = MarketParams::new(0.01, 0.2, 100.0, 1.0).unwrap();
        let fam = IntensityFamily::constant(1.0).unwrap();
        let mc = MCConfig::default();
        assert!(matches!(mc_price(&other, &surface, &fam, &mc, 100.0), Err(Error::Input(_))));
        assert!(matches!(mc_price(&market, &surface, &fam, &mc, 1e6), Err(Error::Input(_))));
    }
}
