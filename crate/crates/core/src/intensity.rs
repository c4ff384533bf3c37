//! Exercise-intensity families `f_theta`, their monotone envelope `nu_theta`,
//! the convergence-condition checker and the two computable terms of the
//! American-price error bound.
//!
//! The intensity is a function of the gap `x = (K - s)^+ - P(t, s)` between
//! intrinsic value and continuation value. The penalty term enters the
//! pricing equation with a `+` sign, `dP/dt = ... + f(x) x`, which matches
//! the exogenous-intensity equation when `mu = f(x)`. One display of the
//! exponential-family equation in the literature carries a `-` sign; that
//! version is not consistent with the exogenous case and is not used here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default numerical cap on the intensity, per year.
pub const DEFAULT_CAP: f64 = 1e12;

/// Offset used for the one-sided limits `nu(0+)` and `nu(0-)`.
pub const ZERO_PROBE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntensityKind {
    /// `e^{theta x}`; the cap is a numerical safeguard only.
    Exponential,
    /// `lambda` everywhere.
    Constant,
    /// `min(e^{theta x}, cap)` with the cap part of the model.
    CappedExponential,
}

/// A rationality model `f_theta` together with its evaluation cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityFamily {
    pub kind: IntensityKind,
    pub theta: f64,
    pub level: f64,
    pub cap: f64,
}

impl IntensityFamily {
    pub fn exponential(theta: f64) -> Result<Self> {
        Self::new(IntensityKind::Exponential, theta, 1.0, DEFAULT_CAP)
    }

    pub fn constant(level: f64) -> Result<Self> {
        Self::new(IntensityKind::Constant, 0.0, level, DEFAULT_CAP)
    }

    pub fn capped_exponential(theta: f64, cap: f64) -> Result<Self> {
        Self::new(IntensityKind::CappedExponential, theta, 1.0, cap)
    }

    pub fn new(kind: IntensityKind, theta: f64, level: f64, cap: f64) -> Result<Self> {
        let f = Self {
            kind,
            theta,
            level,
            cap,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "theta must be finite and >= 0, got {}",
                self.theta
            )));
        }
        if !(self.cap.is_finite() && self.cap > 0.0) {
            return Err(Error::InvalidArgument(format!("cap must be > 0, got {}", self.cap)));
        }
        if self.kind == IntensityKind::Constant && !(self.level.is_finite() && self.level > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "constant intensity must be > 0, got {}",
                self.level
            )));
        }
        Ok(())
    }

    /// The same family with a different rationality parameter.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::new(self.kind, theta, self.level, self.cap)
    }

    /// True when `f` is nondecreasing, so that `nu = f`.
    pub fn is_monotone(&self) -> bool {
        matches!(
            self.kind,
            IntensityKind::Exponential | IntensityKind::Constant | IntensityKind::CappedExponential
        )
    }

    /// `f_theta(x)` capped at `cap`. The exponential is formed in log space,
    /// so no `theta * x` overflows.
    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            IntensityKind::Constant => self.level.min(self.cap),
            IntensityKind::Exponential | IntensityKind::CappedExponential => {
                (self.theta * x).min(self.cap.ln()).exp()
            }
        }
    }

    /// `f_theta'(x)`, consistent with [`eval`](Self::eval) (zero where capped).
    pub fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            IntensityKind::Constant => 0.0,
            IntensityKind::Exponential | IntensityKind::CappedExponential => {
                let z = self.theta * x;
                if z >= self.cap.ln() {
                    0.0
                } else {
                    self.theta * z.exp()
                }
            }
        }
    }

    /// The model's `f_theta` without the numerical cap. For the capped
    /// exponential kind the cap belongs to the model and stays.
    pub fn eval_uncapped(&self, x: f64) -> f64 {
        match self.kind {
            IntensityKind::Constant => self.level,
            IntensityKind::Exponential => (self.theta * x).exp(),
            IntensityKind::CappedExponential => self.eval(x),
        }
    }

    /// Penalty term `f(x) x` and its derivative `f(x) + f'(x) x`.
    pub fn penalty(&self, x: f64) -> (f64, f64) {
        let f = self.eval(x);
        (f * x, f + self.derivative(x) * x)
    }
}

/// `f_theta(x)` with the evaluation cap applied.
pub fn eval_f(family: &IntensityFamily, x: f64) -> f64 {
    family.eval(x)
}

/// Monotone envelope `nu(x) = sup_{y <= x} f(y)` for `x < 0` and
/// `inf_{y >= x} f(y)` for `x >= 0`.
pub fn eval_nu(family: &IntensityFamily, x: f64) -> f64 {
    if family.is_monotone() {
        family.eval(x)
    } else {
        numeric_envelope(|y| family.eval(y), x, ENVELOPE_SPAN)
    }
}

/// Probe range for numerical envelopes; gaps never exceed the strike in size.
const ENVELOPE_SPAN: f64 = 1e3;

/// Number of probe points per side of the geometric probe grid.
const ENVELOPE_PROBES: usize = 2000;

/// `sup`/`inf` envelope of an arbitrary `f`, computed over a probe grid on
/// `[-span, x]` (for `x < 0`) or `[x, span]` (for `x >= 0`). The grid is
/// geometric near `x` and uniform across the whole range.
pub fn numeric_envelope<F: Fn(f64) -> f64>(f: F, x: f64, span: f64) -> f64 {
    let probes = |from: f64, to: f64| -> Vec<f64> {
        let len = (to - from).abs();
        if len == 0.0 {
            return vec![from];
        }
        let first = (len * 1e-9).max(f64::MIN_POSITIVE);
        let ratio = (len / first).powf(1.0 / (ENVELOPE_PROBES - 1) as f64);
        let dir = (to - from).signum();
        let mut pts = vec![from, to];
        let mut d = first;
        for k in 1..=ENVELOPE_PROBES {
            pts.push(from + dir * d.min(len));
            pts.push(from + dir * len * k as f64 / ENVELOPE_PROBES as f64);
            d *= ratio;
        }
        pts
    };
    if x < 0.0 {
        probes(x, (-span).min(x))
            .into_iter()
            .map(&f)
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        probes(x, span.max(x))
            .into_iter()
            .map(&f)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Envelope of the uncapped model, used by the condition checker.
fn nu_uncapped(family: &IntensityFamily, x: f64) -> f64 {
    if family.is_monotone() {
        family.eval_uncapped(x)
    } else {
        numeric_envelope(|y| family.eval_uncapped(y), x, ENVELOPE_SPAN)
    }
}

/// Per-rung values of the convergence conditions along a ladder of `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub thetas: Vec<f64>,
    pub nu_at_zero_plus: Vec<f64>,
    pub epsilon_of_theta: Vec<f64>,
    /// `nu(-epsilon(theta))`
    pub term_bad: Vec<f64>,
    /// `epsilon(theta) * nu(0-)`
    pub term_ok: Vec<f64>,
    pub passes: bool,
}

/// Evaluates both convergence conditions along `theta_ladder` and judges them.
///
/// `nu(0+)` must grow without bound: strictly increasing with increments that
/// do not shrink along the ladder. Both vanishing terms must be strictly
/// decreasing and lose at least a decade between the first and last rung.
pub fn check_conditions<E: Fn(f64) -> f64>(
    template: &IntensityFamily,
    theta_ladder: &[f64],
    epsilon_rule: E,
) -> Result<ConditionReport> {
    if theta_ladder.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "theta ladder needs at least 3 entries, got {}",
            theta_ladder.len()
        )));
    }
    if theta_ladder.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("theta ladder must be strictly increasing".into()));
    }

    let mut report = ConditionReport {
        thetas: theta_ladder.to_vec(),
        nu_at_zero_plus: Vec::with_capacity(theta_ladder.len()),
        epsilon_of_theta: Vec::with_capacity(theta_ladder.len()),
        term_bad: Vec::with_capacity(theta_ladder.len()),
        term_ok: Vec::with_capacity(theta_ladder.len()),
        passes: false,
    };
    for &theta in theta_ladder {
        let fam = template.with_theta(theta)?;
        let eps = epsilon_rule(theta);
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon({theta}) must be finite and > 0, got {eps}"
            )));
        }
        report.nu_at_zero_plus.push(nu_uncapped(&fam, ZERO_PROBE));
        report.epsilon_of_theta.push(eps);
        report.term_bad.push(nu_uncapped(&fam, -eps));
        report.term_ok.push(eps * nu_uncapped(&fam, -ZERO_PROBE));
    }

    report.passes = grows_without_bound(&report.nu_at_zero_plus)
        && decays_to_zero(&report.term_bad)
        && decays_to_zero(&report.term_ok);
    Ok(report)
}

fn grows_without_bound(v: &[f64]) -> bool {
    let steps: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    steps.iter().all(|d| *d > 0.0) && steps.windows(2).all(|w| w[1] >= w[0])
}

fn decays_to_zero(v: &[f64]) -> bool {
    let first = v[0];
    let last = v[v.len() - 1];
    v.windows(2).all(|w| w[1] < w[0]) && last >= 0.0 && last <= 0.1 * first
}

/// The two theta-dependent terms of the bound on `P_A - P_theta`:
/// `K (1 - exp(-(T - t) nu(-eps1)))` and `eps1 (T - t) nu(0-)`.
pub fn vanishing_terms(
    family: &IntensityFamily,
    strike: f64,
    epsilon1: f64,
    horizon: f64,
) -> Result<(f64, f64)> {
    if !(epsilon1.is_finite() && epsilon1 > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon1 must be > 0, got {epsilon1}")));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be >= 0, got {horizon}")));
    }
    let term_bad = -strike * (-horizon * eval_nu(family, -epsilon1)).exp_m1();
    let term_ok = epsilon1 * horizon * eval_nu(family, -ZERO_PROBE);
    Ok((term_bad, term_ok))
}

/// Default `epsilon(theta) = theta^{-1/2}`.
pub fn default_epsilon(theta: f64) -> f64 {
    theta.powf(-0.5)
}
