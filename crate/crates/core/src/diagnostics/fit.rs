//! Least-squares rate fits on sampled series.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Minimum number of samples a fit window must contain.
pub const MIN_FIT_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 1 for a series with no variance.
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Invalid(format!("linear fit needs >= 2 paired samples, got {}/{}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(Error::Invalid("linear fit needs at least two distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { (1.0 - ss_res / syy).clamp(0.0, 1.0) };
    Ok(LinearFit { slope, intercept, r_squared })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Fitted exponential rate `δ̂` (positive for decay).
    pub rate: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    /// Theoretical floor the rate is compared against, when known.
    pub theory: Option<f64>,
}

impl RateEstimate {
    pub fn with_theory(mut self, floor: f64) -> Self {
        self.theory = Some(floor);
        self
    }

    /// `δ̂ >= (1 - slack)·floor`; `false` when no floor is attached.
    pub fn meets_floor(&self, slack: f64) -> bool {
        self.theory.is_some_and(|f| self.rate >= (1.0 - slack) * f)
    }
}

/// Index range used when no explicit window is given: the samples above the
/// round-off floor `1e3·eps·|y₀|`, of which the last 60% are kept.
pub fn default_window(values: &[f64]) -> (usize, usize) {
    let Some(&first) = values.first() else { return (0, 0) };
    let floor = 1e3 * f64::EPSILON * first.abs();
    let end = values.iter().position(|&v| !(v > floor)).unwrap_or(values.len());
    let len = (end as f64 * 0.6).ceil() as usize;
    (end - len.min(end), end)
}

fn window_indices(times: &[f64], window: Option<(f64, f64)>, values: &[f64]) -> (usize, usize) {
    match window {
        Some((t0, t1)) => {
            let lo = times.partition_point(|&t| t < t0);
            let hi = times.partition_point(|&t| t <= t1);
            (lo, hi.max(lo))
        }
        None => default_window(values),
    }
}

fn windowed<'a>(
    times: &'a [f64],
    values: &'a [f64],
    window: Option<(f64, f64)>,
) -> Result<(&'a [f64], &'a [f64])> {
    if times.len() != values.len() {
        return Err(Error::Invalid("times and values differ in length".into()));
    }
    let (lo, hi) = window_indices(times, window, values);
    if hi - lo < MIN_FIT_SAMPLES {
        return Err(Error::Invalid(format!(
            "fit window holds {} samples, need at least {MIN_FIT_SAMPLES}",
            hi - lo
        )));
    }
    let (t, v) = (&times[lo..hi], &values[lo..hi]);
    if let Some(bad) = v.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::Domain(format!("series must be positive on the fit window, found {bad}")));
    }
    Ok((t, v))
}

/// Exponential rate: least-squares slope of `ln y` against `t`, sign flipped.
pub fn fit_decay_rate(times: &[f64], values: &[f64], window: Option<(f64, f64)>) -> Result<RateEstimate> {
    let (t, v) = windowed(times, values, window)?;
    let logs: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let fit = fit_linear(t, &logs)?;
    Ok(RateEstimate {
        rate: -fit.slope,
        window: (t[0], t[t.len() - 1]),
        r_squared: fit.r_squared,
        theory: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgebraicFit {
    /// Fitted exponent `p̂` in `y ~ ⟨t⟩^(-p̂)`.
    pub exponent: f64,
    pub target: f64,
    pub r_squared: f64,
    pub pass: bool,
}

/// Slack below the target exponent that still passes.
pub const ALGEBRAIC_SLACK: f64 = 0.15;

/// Log-log fit of `y` against `⟨t⟩ = sqrt(1 + t²)`; passes iff
/// `p̂ >= p - 0.15`.
pub fn algebraic_decay_check(
    times: &[f64],
    values: &[f64],
    target: f64,
    window: Option<(f64, f64)>,
) -> Result<AlgebraicFit> {
    let (t, v) = windowed(times, values, window)?;
    let lx: Vec<f64> = t.iter().map(|s| (1.0 + s * s).sqrt().ln()).collect();
    let ly: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let fit = fit_linear(&lx, &ly)?;
    let exponent = -fit.slope;
    Ok(AlgebraicFit { exponent, target, r_squared: fit.r_squared, pass: exponent >= target - ALGEBRAIC_SLACK })
}

/// A-priori diameter growth exponent `d(β)` of the attraction model.
pub fn diameter_growth_bound(beta: f64) -> f64 {
    if beta < 4.0 / 3.0 {
        1.0
    } else if beta < 2.0 {
        2.0 / (3.0 * beta - 2.0)
    } else {
        0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub exponent: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Log-log growth exponent of a diameter series over `t >= 1`, checked
/// against `d(β) + 0.1`.
pub fn diameter_growth_check(times: &[f64], diameters: &[f64], beta: f64) -> Result<GrowthFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(diameters)
        .filter(|(t, d)| **t >= 1.0 && **d > 0.0)
        .map(|(t, d)| ((1.0 + t * t).sqrt().ln(), d.ln()))
        .unzip();
    if x.len() < MIN_FIT_SAMPLES {
        return Err(Error::Invalid(format!("growth fit needs {MIN_FIT_SAMPLES} samples with t >= 1")));
    }
    let fit = fit_linear(&x, &y)?;
    let bound = diameter_growth_bound(beta);
    Ok(GrowthFit { exponent: fit.slope, bound, pass: fit.slope <= bound + 0.1 })
}
