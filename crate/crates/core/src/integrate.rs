//! Time integration: adaptive Dormand–Prince 5(4), fixed-step RK4, a
//! post-step collision guard, blow-up detection and an event log.
//!
//! The drivers work on any [`OdeSystem`] over a flat `f64` vector; the
//! multi-flock wrappers [`integrate`] and [`reference_integrate`] pack a
//! [`MultiFlockState`] through [`MasterSystem`].

use serde::{Deserialize, Serialize};

use crate::dynamics::{superagent_state, MasterSystem, Mode, ModelParams};
use crate::mfstate::MultiFlockState;
use crate::{Error, Result};

/// Magnitude past which a state is treated as blown up.
pub const BLOWUP_MAGNITUDE: f64 = 1e12;

/// A first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn len(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;

    /// Post-step check used by the collision guard: `Some((error, reason))`
    /// rejects the step from `y0` to `y1`; `error` is reported if the guard
    /// keeps rejecting down to the minimum step.
    fn guard(&self, _y0: &[f64], _y1: &[f64], _theta: f64) -> Option<(Error, String)> {
        None
    }

    /// Inspected after every accepted step; `Some(reason)` ends the run.
    fn stop(&self, _t: f64, _y: &[f64]) -> Option<String> {
        None
    }

    /// Magnitude past which the state is declared blown up.
    fn magnitude_limit(&self) -> f64 {
        BLOWUP_MAGNITUDE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    #[default]
    Rk45Adaptive,
}

impl Method {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "rk4_fixed" => Some(Self::Rk4Fixed),
            "rk45_adaptive" => Some(Self::Rk45Adaptive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSpec {
    #[serde(default)]
    pub method: Method,
    /// Step of `rk4_fixed`; initial-step hint for `rk45_adaptive` (0 = auto).
    #[serde(default)]
    pub dt: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    pub t_end: f64,
    #[serde(default)]
    pub collision_guard: bool,
    /// `θ`: a guarded step is rejected if a pair distance falls below `θ`
    /// times its start-of-step value.
    #[serde(default = "default_theta")]
    pub min_pair_fraction: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_rtol() -> f64 {
    1e-8
}
fn default_atol() -> f64 {
    1e-10
}
fn default_theta() -> f64 {
    0.5
}
fn default_max_steps() -> usize {
    10_000_000
}

impl IntegratorSpec {
    pub fn adaptive(t_end: f64) -> Self {
        Self {
            method: Method::Rk45Adaptive,
            dt: 0.0,
            rtol: default_rtol(),
            atol: default_atol(),
            t_end,
            collision_guard: false,
            min_pair_fraction: default_theta(),
            max_steps: default_max_steps(),
        }
    }

    pub fn rk4(dt: f64, t_end: f64) -> Self {
        Self { method: Method::Rk4Fixed, dt, ..Self::adaptive(t_end) }
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            out.push(format!("t_end: must be positive, got {}", self.t_end));
        }
        match self.method {
            Method::Rk4Fixed if !(self.dt > 0.0) => out.push(format!("dt: must be positive, got {}", self.dt)),
            Method::Rk45Adaptive => {
                if !(self.rtol > 0.0) {
                    out.push(format!("rtol: must be positive, got {}", self.rtol));
                }
                if !(self.atol > 0.0) {
                    out.push(format!("atol: must be positive, got {}", self.atol));
                }
                if !(self.dt >= 0.0) {
                    out.push(format!("dt: initial step must be nonnegative, got {}", self.dt));
                }
            }
            _ => {}
        }
        if !(self.min_pair_fraction > 0.0 && self.min_pair_fraction < 1.0) {
            out.push(format!("min_pair_fraction: must lie in (0, 1), got {}", self.min_pair_fraction));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CollisionNearMiss,
    StepRejected,
    BlowupSuspected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub payload: String,
}

/// Events in non-decreasing time order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, time: f64, kind: EventKind, payload: impl Into<String>) {
        let time = self.events.last().map_or(time, |e| time.max(e.time));
        self.events.push(Event { time, kind, payload: payload.into() });
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn first(&self, kind: EventKind) -> Option<&Event> {
        self.events.iter().find(|e| e.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Completed,
    /// The system's stop hook ended the run.
    Stopped { time: f64, reason: String },
    Failed(Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// Smallest accepted step, excluding steps shortened to land on a sample.
    pub min_step: f64,
    pub max_step: f64,
}

/// Raw solver output on the flat vector.
#[derive(Debug, Clone)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub log: EventLog,
    pub termination: Termination,
    pub stats: StepStats,
    /// Last accepted point.
    pub t_last: f64,
    pub y_last: Vec<f64>,
}

fn check_samples(t0: f64, t_end: f64, samples: &[f64]) -> Result<()> {
    if samples.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Invalid("sample times must be sorted".into()));
    }
    if let (Some(&lo), Some(&hi)) = (samples.first(), samples.last()) {
        if !(lo >= t0 && hi <= t_end) {
            return Err(Error::Invalid(format!("sample times must lie in [{t0}, {t_end}]")));
        }
    }
    Ok(())
}

/// Largest magnitude in `y`; `inf` if any entry is not finite.
fn max_abs(y: &[f64]) -> f64 {
    y.iter().try_fold(0.0f64, |m, v| v.is_finite().then(|| m.max(v.abs()))).unwrap_or(f64::INFINITY)
}

/// Integrates `sys` from `(t0, y0)` to `spec.t_end`, recording `y` at each
/// sample time. Steps are shortened to land on sample times exactly.
pub fn solve<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    spec: &IntegratorSpec,
    samples: &[f64],
) -> Result<Solution> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    check_samples(t0, spec.t_end, samples)?;
    if y0.len() != sys.len() {
        return Err(Error::Invalid(format!("state length {} != system length {}", y0.len(), sys.len())));
    }
    let mut driver = Driver::new(sys, spec, y0.len());
    driver.run(t0, y0, samples);
    Ok(driver.finish())
}

struct Driver<'a, S: ?Sized> {
    sys: &'a S,
    spec: &'a IntegratorSpec,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    last_guard: Option<(f64, Error)>,
    sol: Solution,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

enum StepOutcome {
    Accepted,
    /// Error test or guard failed; retry with the given step.
    Retry(f64),
    Fatal(Error),
}

impl<'a, S: OdeSystem + ?Sized> Driver<'a, S> {
    fn new(sys: &'a S, spec: &'a IntegratorSpec, n: usize) -> Self {
        Self {
            sys,
            spec,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
            last_guard: None,
            sol: Solution {
                times: Vec::new(),
                states: Vec::new(),
                log: EventLog::default(),
                termination: Termination::Completed,
                stats: StepStats { min_step: f64::INFINITY, ..Default::default() },
                t_last: 0.0,
                y_last: Vec::new(),
            },
        }
    }

    fn finish(mut self) -> Solution {
        if !self.sol.stats.min_step.is_finite() {
            self.sol.stats.min_step = 0.0;
        }
        self.sol
    }

    fn eval(&mut self, t: f64, stage: usize) -> Result<()> {
        self.sol.stats.rhs_evals += 1;
        let (tmp, k) = (&self.tmp, &mut self.k[stage]);
        self.sys.rhs(t, tmp, k)
    }

    fn record(&mut self, t: f64, y: &[f64], samples: &[f64], next: &mut usize) {
        while *next < samples.len() && samples[*next] <= t {
            self.sol.times.push(samples[*next]);
            self.sol.states.push(y.to_vec());
            *next += 1;
        }
    }

    fn run(&mut self, t0: f64, y0: &[f64], samples: &[f64]) {
        let spec = self.spec;
        let mut t = t0;
        let mut y = y0.to_vec();
        let mut next = 0;
        self.record(t, &y, samples, &mut next);
        let t_end = spec.t_end;
        let adaptive = spec.method == Method::Rk45Adaptive;
        let mut h = match spec.method {
            Method::Rk4Fixed => spec.dt,
            Method::Rk45Adaptive => match self.initial_step(t, &y) {
                Ok(h) => h,
                Err(e) => return self.fail(t, &y, e),
            },
        };
        let span = (t_end - t0).abs().max(1.0);
        let h_min = 1e-14 * span;
        let mut fsal_valid = false;
        while t < t_end {
            if self.sol.stats.accepted + self.sol.stats.rejected >= spec.max_steps {
                let msg = format!("step budget of {} exhausted at t = {t}", spec.max_steps);
                return self.fail(t, &y, Error::Numerical(msg));
            }
            let target = samples.get(next).copied().filter(|&s| s > t).unwrap_or(t_end).min(t_end);
            let mut step = h;
            let clipped = t + step >= target;
            if clipped {
                step = target - t;
            }
            let outcome = if adaptive {
                self.dopri_step(t, &y, step, fsal_valid)
            } else {
                self.rk4_step(t, &y, step)
            };
            match outcome {
                StepOutcome::Accepted => {
                    let t_new = if clipped { target } else { t + step };
                    if !clipped || step >= h {
                        self.sol.stats.min_step = self.sol.stats.min_step.min(step);
                    }
                    self.sol.stats.max_step = self.sol.stats.max_step.max(step);
                    self.sol.stats.accepted += 1;
                    let mag = max_abs(&self.y_new);
                    if !(mag <= self.sys.magnitude_limit()) {
                        self.sol.log.push(t_new, EventKind::BlowupSuspected, format!("max |y| = {mag:e}"));
                        return self.fail(t, &y, Error::Blowup { time: t_new, last_good: t });
                    }
                    std::mem::swap(&mut y, &mut self.y_new);
                    t = t_new;
                    if adaptive {
                        // FSAL: stage 7 at the new point is stage 1 of the next step
                        self.k.swap(0, 6);
                        fsal_valid = true;
                        h = self.next_step(step, clipped, h);
                    } else if !clipped {
                        h = spec.dt.min(2.0 * h);
                    }
                    self.record(t, &y, samples, &mut next);
                    if let Some(reason) = self.sys.stop(t, &y) {
                        self.sol.termination = Termination::Stopped { time: t, reason };
                        break;
                    }
                }
                StepOutcome::Retry(h_new) => {
                    self.sol.stats.rejected += 1;
                    if h_new < h_min {
                        let e = match self.last_guard.take() {
                            Some((tg, e)) if tg == t => e,
                            _ => {
                                self.sol.log.push(t, EventKind::BlowupSuspected, "step size underflow");
                                Error::Blowup { time: t + step, last_good: t }
                            }
                        };
                        return self.fail(t, &y, e);
                    }
                    h = h_new;
                }
                StepOutcome::Fatal(e) => return self.fail(t, &y, e),
            }
        }
        self.sol.t_last = t;
        self.sol.y_last = y;
    }

    fn fail(&mut self, t: f64, y: &[f64], e: Error) {
        self.sol.termination = Termination::Failed(e);
        self.sol.t_last = t;
        self.sol.y_last = y.to_vec();
    }

    fn scale(&self, y0: f64, y1: f64) -> f64 {
        self.spec.atol + self.spec.rtol * y0.abs().max(y1.abs())
    }

    fn initial_step(&mut self, t: f64, y: &[f64]) -> Result<f64> {
        let span = self.spec.t_end - t;
        if self.spec.dt > 0.0 {
            return Ok(self.spec.dt.min(span));
        }
        self.tmp.copy_from_slice(y);
        self.eval(t, 0)?;
        let n = y.len().max(1) as f64;
        let sc: Vec<f64> = y.iter().map(|v| self.spec.atol + self.spec.rtol * v.abs()).collect();
        let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
        let d1 = (self.k[0].iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        for i in 0..y.len() {
            self.tmp[i] = y[i] + h0 * self.k[0][i];
        }
        self.eval(t + h0, 1)?;
        let d2 = (self.k[1]
            .iter()
            .zip(&self.k[0])
            .zip(&sc)
            .map(|((a, b), s)| ((a - b) / s).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        Ok((100.0 * h0).min(h1).min(span).max(1e-12 * span))
    }

    fn next_step(&self, step: f64, clipped: bool, h_prev: f64) -> f64 {
        let err = self.sol_err_norm();
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        let proposed = step * fac;
        if clipped && step < h_prev {
            // a shortened landing step says little about the natural step size
            proposed.max(h_prev)
        } else {
            proposed
        }
    }

    fn sol_err_norm(&self) -> f64 {
        self.err.iter().fold(0.0f64, |m, &e| m.max(e))
    }

    fn dopri_step(&mut self, t: f64, y: &[f64], h: f64, fsal_valid: bool) -> StepOutcome {
        let n = y.len();
        if !fsal_valid {
            self.tmp.copy_from_slice(y);
            if let Err(e) = self.eval(t, 0) {
                return StepOutcome::Fatal(e);
            }
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in A[s].iter().enumerate().take(s) {
                    acc += a * self.k[j][i];
                }
                self.tmp[i] = y[i] + h * acc;
            }
            match self.eval(t + C[s] * h, s) {
                Ok(()) => {}
                Err(e @ Error::Collision { .. }) if self.spec.collision_guard => {
                    self.sol.log.push(t, EventKind::CollisionNearMiss, e.to_string());
                    self.last_guard = Some((t, e));
                    return StepOutcome::Retry(0.25 * h);
                }
                Err(e) => return StepOutcome::Fatal(e),
            }
        }
        // stage 7 was evaluated at y_{n+1}
        self.y_new.copy_from_slice(&self.tmp);
        let mut worst = 0.0f64;
        let mut finite = true;
        for i in 0..n {
            let mut e = 0.0;
            for (s, es) in E.iter().enumerate() {
                e += es * self.k[s][i];
            }
            let r = (h * e).abs() / self.scale(y[i], self.y_new[i]);
            if !r.is_finite() || !self.y_new[i].is_finite() {
                finite = false;
            }
            self.err[i] = r;
            worst = worst.max(r);
        }
        if !finite {
            self.sol.log.push(t, EventKind::StepRejected, format!("non-finite stage values at h = {h:e}"));
            return StepOutcome::Retry(0.2 * h);
        }
        if worst > 1.0 {
            return StepOutcome::Retry(h * (0.9 * worst.powf(-0.2)).clamp(0.2, 1.0));
        }
        if self.spec.collision_guard {
            if let Some((e, reason)) = self.sys.guard(y, &self.y_new, self.spec.min_pair_fraction) {
                self.sol.log.push(t, EventKind::CollisionNearMiss, reason);
                self.last_guard = Some((t, e));
                return StepOutcome::Retry(0.5 * h);
            }
        }
        StepOutcome::Accepted
    }

    fn rk4_step(&mut self, t: f64, y: &[f64], h: f64) -> StepOutcome {
        match rk4_into(self.sys, t, y, h, &mut self.k, &mut self.tmp, &mut self.y_new) {
            Ok(()) => {}
            Err(e @ Error::Collision { .. }) if self.spec.collision_guard => {
                self.sol.log.push(t, EventKind::CollisionNearMiss, e.to_string());
                self.last_guard = Some((t, e));
                return StepOutcome::Retry(0.5 * h);
            }
            Err(e) => return StepOutcome::Fatal(e),
        }
        self.sol.stats.rhs_evals += 4;
        if self.y_new.iter().any(|v| !v.is_finite()) {
            self.sol.log.push(t, EventKind::StepRejected, format!("non-finite stage values at h = {h:e}"));
            return StepOutcome::Retry(0.5 * h);
        }
        if self.spec.collision_guard {
            if let Some((e, reason)) = self.sys.guard(y, &self.y_new, self.spec.min_pair_fraction) {
                self.sol.log.push(t, EventKind::CollisionNearMiss, reason);
                self.last_guard = Some((t, e));
                return StepOutcome::Retry(0.5 * h);
            }
        }
        StepOutcome::Accepted
    }
}

/// One classical RK4 step from `(t, y)` with step `h` into `out`.
pub(crate) fn rk4_into<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    h: f64,
    k: &mut [Vec<f64>; 7],
    tmp: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    let n = y.len();
    let [k1, k2, k3, k4, ..] = k;
    sys.rhs(t, y, k1)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    sys.rhs(t + 0.5 * h, tmp, k2)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    sys.rhs(t + 0.5 * h, tmp, k3)?;
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    sys.rhs(t + h, tmp, k4)?;
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }
    Ok(())
}

/// One RK4 step of any system (allocating convenience form).
pub fn rk4_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = y.len();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut out = vec![0.0; n];
    rk4_into(sys, t, y, h, &mut k, &mut tmp, &mut out)?;
    Ok(out)
}

/// Result of a multi-flock run.
#[derive(Debug, Clone)]
pub struct Run {
    pub trajectory: Vec<MultiFlockState>,
    pub log: EventLog,
    pub termination: Termination,
    pub stats: StepStats,
    /// Last accepted state (the last finite state on failure).
    pub last: MultiFlockState,
}

impl Run {
    pub fn into_result(self) -> Result<Self> {
        match &self.termination {
            Termination::Failed(e) => Err(e.clone()),
            _ => Ok(self),
        }
    }
}

impl MasterSystem<'_> {
    fn guard_pairs(&self, y0: &[f64], y1: &[f64], theta: f64) -> Option<(Error, String)> {
        let dim = self.dim();
        for a in 0..self.num_flocks() {
            if !self.singular_flock(a) {
                continue;
            }
            let n = self.flock_len(a);
            let (p0, _) = self.split(a, y0);
            let (p1, _) = self.split(a, y1);
            for i in 0..n {
                for j in i + 1..n {
                    let r0 = crate::mfstate::pair_dist_sq(p0, n, dim, i, j);
                    let r1 = crate::mfstate::pair_dist_sq(p1, n, dim, i, j);
                    if r1 < theta * theta * r0 {
                        let msg = format!(
                            "flock {a} pair ({i}, {j}) distance {:e} -> {:e}",
                            r0.sqrt(),
                            r1.sqrt()
                        );
                        return Some((Error::Collision { flock: a, i, j }, msg));
                    }
                }
            }
        }
        None
    }
}

struct Guarded<'a>(MasterSystem<'a>);

impl OdeSystem for Guarded<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        self.0.rhs(t, y, dy)
    }
    fn guard(&self, y0: &[f64], y1: &[f64], theta: f64) -> Option<(Error, String)> {
        self.0.guard_pairs(y0, y1, theta)
    }
}

/// Integrates the master equation and returns whatever was computed, with
/// the termination reason. `superagent_only` runs integrate the collapsed
/// one-agent-per-flock system.
pub fn integrate_partial(
    state0: &MultiFlockState,
    params: &ModelParams,
    ispec: &IntegratorSpec,
    sample_times: &[f64],
) -> Result<Run> {
    let violations = state0.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations.iter().map(ToString::to_string).collect()));
    }
    params.check_state(state0)?;
    let collapsed;
    let start = if params.mode == Mode::SuperagentOnly {
        collapsed = superagent_state(state0);
        &collapsed
    } else {
        state0
    };
    let mut spec = ispec.clone();
    if start.flocks.iter().any(|f| f.kernel.is_singular()) {
        spec.collision_guard = true;
    }
    let sys = Guarded(MasterSystem::new(start, params));
    let y0 = sys.0.pack(start);
    let t0 = start.time;
    let sol = solve(&sys, t0, &y0, &spec, sample_times)?;
    let trajectory = sol.times.iter().zip(&sol.states).map(|(&t, y)| sys.0.unpack(t, y)).collect();
    Ok(Run {
        trajectory,
        last: sys.0.unpack(sol.t_last, &sol.y_last),
        log: sol.log,
        termination: sol.termination,
        stats: sol.stats,
    })
}

/// Integrates the master equation; fails on blow-up or collision.
pub fn integrate(
    state0: &MultiFlockState,
    params: &ModelParams,
    ispec: &IntegratorSpec,
    sample_times: &[f64],
) -> Result<Run> {
    integrate_partial(state0, params, ispec, sample_times)?.into_result()
}

/// Fixed-step RK4 oracle sampled at every multiple of `dt_ref` (plus `t_end`).
pub fn reference_integrate(
    state0: &MultiFlockState,
    params: &ModelParams,
    dt_ref: f64,
    t_end: f64,
) -> Result<Vec<MultiFlockState>> {
    if !(dt_ref > 0.0) {
        return Err(Error::Invalid(format!("dt_ref must be positive, got {dt_ref}")));
    }
    let t0 = state0.time;
    let steps = ((t_end - t0) / dt_ref).round().max(1.0) as usize;
    let sys = MasterSystem::new(state0, params);
    let mut y = sys.pack(state0);
    let n = y.len();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut traj = vec![state0.clone()];
    let h = (t_end - t0) / steps as f64;
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        rk4_into(&sys, t, &y, h, &mut k, &mut tmp, &mut out)?;
        std::mem::swap(&mut y, &mut out);
        if max_abs(&y) > BLOWUP_MAGNITUDE || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Blowup { time: t + h, last_good: t });
        }
        traj.push(sys.unpack(t0 + (s + 1) as f64 * h, &y));
    }
    Ok(traj)
}

/// Per-flock minimum intra-flock pair distance and the argmin pair;
/// single-agent flocks report `+∞` and no pair.
pub fn min_pair_distance(state: &MultiFlockState) -> Vec<(f64, Option<(usize, usize)>)> {
    state
        .flocks
        .iter()
        .map(|f| {
            let n = f.len();
            let mut best = (f64::INFINITY, None);
            for i in 0..n {
                for j in i + 1..n {
                    let r2 = crate::mfstate::pair_dist_sq(&f.positions, n, state.dim, i, j);
                    if r2 < best.0 {
                        best = (r2, Some((i, j)));
                    }
                }
            }
            (best.0.sqrt(), best.1)
        })
        .collect()
}

/// Uniform sample grid `t0, t0 + dt, …` up to and including `t_end`.
pub fn uniform_samples(t0: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let n = ((t_end - t0) / dt).round() as usize;
    (0..=n).map(|k| (t0 + k as f64 * dt).min(t_end)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::mfstate::Flock;

    struct Decay;
    impl OdeSystem for Decay {
        fn len(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = -y[0];
            dy[1] = y[0];
            Ok(())
        }
    }

    struct Riccati;
    impl OdeSystem for Riccati {
        fn len(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[0] * y[0];
            Ok(())
        }
    }

    fn pair(dv: f64) -> MultiFlockState {
        let f = Flock::from_points(
            1,
            &[vec![0.0], vec![1.0]],
            &[vec![0.0], vec![dv]],
            vec![0.5, 0.5],
            KernelSpec::constant(1.0),
            1.0,
        );
        MultiFlockState::new(1, vec![f])
    }

    #[test]
    fn adaptive_hits_samples_and_accuracy() {
        let samples = uniform_samples(0.0, 2.0, 0.5);
        let sol = solve(&Decay, 0.0, &[1.0, 0.0], &IntegratorSpec::adaptive(2.0), &samples).unwrap();
        assert_eq!(sol.times, samples);
        for (t, y) in sol.times.iter().zip(&sol.states) {
            assert!((y[0] - (-t).exp()).abs() < 1e-8);
            assert!((y[0] + y[1] - 1.0).abs() < 1e-14);
        }
        assert_eq!(sol.termination, Termination::Completed);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |dt: f64| {
            let sol = solve(&Decay, 0.0, &[1.0, 0.0], &IntegratorSpec::rk4(dt, 1.0), &[1.0]).unwrap();
            (sol.states[0][0] - (-1f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn blowup_is_reported_with_last_good_time() {
        let sol = solve(&Riccati, 0.0, &[1.0], &IntegratorSpec::adaptive(2.0), &[]).unwrap();
        match sol.termination {
            Termination::Failed(Error::Blowup { time, last_good }) => {
                assert!(last_good < 1.0 + 1e-6 && time <= 1.0 + 1e-6, "{last_good} {time}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(sol.log.count(EventKind::BlowupSuspected) >= 1);
        assert!(sol.y_last[0].is_finite());
    }

    #[test]
    fn spec_validation() {
        let mut s = IntegratorSpec::adaptive(1.0);
        s.rtol = 0.0;
        s.min_pair_fraction = 1.5;
        let msgs = s.validate();
        assert!(msgs.iter().any(|m| m.starts_with("rtol")));
        assert!(msgs.iter().any(|m| m.starts_with("min_pair_fraction")));
        assert!(IntegratorSpec::rk4(0.0, 1.0).validate().iter().any(|m| m.starts_with("dt")));
    }

    #[test]
    fn unsorted_samples_rejected() {
        assert!(solve(&Decay, 0.0, &[1.0, 0.0], &IntegratorSpec::adaptive(1.0), &[0.5, 0.2]).is_err());
        assert!(solve(&Decay, 0.0, &[1.0, 0.0], &IntegratorSpec::adaptive(1.0), &[2.0]).is_err());
    }

    #[test]
    fn two_agent_closed_form() {
        let run = integrate(&pair(2.0), &ModelParams::decoupled(), &IntegratorSpec::adaptive(1.0), &[1.0]).unwrap();
        let f = &run.trajectory[0].flocks[0];
        let dv = f.velocities[1] - f.velocities[0];
        assert!((dv - 0.735_758_882_342_884_6).abs() < 1e-6);
    }

    #[test]
    fn uniform_translation_is_exact() {
        let mut s = pair(0.0);
        s.flocks[0].velocities = vec![1.5, 1.5];
        let run = integrate(&s, &ModelParams::decoupled(), &IntegratorSpec::adaptive(2.0), &[2.0]).unwrap();
        let f = &run.trajectory[0].flocks[0];
        assert_eq!(f.velocities, vec![1.5, 1.5]);
        assert!((f.positions[0] - 3.0).abs() < 1e-14 && (f.positions[1] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn reference_zero_velocity() {
        let mut s = pair(0.0);
        s.flocks[0].velocities = vec![0.0, 0.0];
        let traj = reference_integrate(&s, &ModelParams::decoupled(), 0.1, 1.0).unwrap();
        assert_eq!(traj.len(), 11);
        assert_eq!(traj.last().unwrap().flocks[0].positions, vec![0.0, 1.0]);
    }

    #[test]
    fn min_pair_examples() {
        let f = Flock::from_points(
            1,
            &[vec![0.0], vec![1.0], vec![3.0]],
            &vec![vec![0.0]; 3],
            vec![1.0; 3],
            KernelSpec::constant(1.0),
            1.0,
        );
        let single = Flock::from_points(1, &[vec![0.0]], &[vec![0.0]], vec![1.0], KernelSpec::constant(1.0), 1.0);
        let sq = Flock::from_points(
            2,
            &[vec![0.0, 0.0], vec![2.0, 0.0], vec![2.0, 2.0], vec![0.0, 2.0]],
            &vec![vec![0.0, 0.0]; 4],
            vec![1.0; 4],
            KernelSpec::constant(1.0),
            1.0,
        );
        let m = min_pair_distance(&MultiFlockState::new(1, vec![f, single]));
        assert_eq!(m[0], (1.0, Some((0, 1))));
        assert_eq!(m[1].0, f64::INFINITY);
        assert_eq!(min_pair_distance(&MultiFlockState::new(2, vec![sq]))[0].0, 2.0);
    }

    #[test]
    fn superagent_mode_collapses() {
        let f1 = Flock::from_points(1, &[vec![0.0], vec![0.2]], &[vec![0.0], vec![0.0]], vec![0.5, 0.5], KernelSpec::constant(1.0), 1.0);
        let f2 = Flock::from_points(1, &[vec![10.0]], &[vec![2.0]], vec![1.0], KernelSpec::constant(1.0), 1.0);
        let s = MultiFlockState::new(1, vec![f1, f2]);
        let params = ModelParams::new(1.0, KernelSpec::constant(1.0)).with_mode(Mode::SuperagentOnly);
        let run = integrate(&s, &params, &IntegratorSpec::adaptive(1.0), &[1.0]).unwrap();
        let end = &run.trajectory[0];
        assert_eq!(end.flocks[0].len(), 1);
        let dv = end.flocks[1].velocities[0] - end.flocks[0].velocities[0];
        assert!((dv - 2.0 * (-2f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn event_log_times_are_monotone() {
        let mut log = EventLog::default();
        log.push(1.0, EventKind::StepRejected, "a");
        log.push(0.5, EventKind::StepRejected, "b");
        assert!(log.events[1].time >= log.events[0].time);
    }
}
