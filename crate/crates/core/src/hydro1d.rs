//! One-dimensional multi-flock hydrodynamics in Lagrangian form.
//!
//! Each flock is a chain of mass particles carrying `(x, v, e, ρ)`, where
//! `e = v′ + λ φ∗ρ` is the threshold quantity. The particle velocities follow
//! the pairwise alignment system with mass weights; `e` and `ρ` ride along as
//! per-particle scalar ODEs:
//!
//! ```text
//! ė = (εR + e)(λ φ∗ρ − e),     ρ̇ = −ρ (e − λ φ∗ρ)
//! ```
//!
//! with the convolution evaluated by particle quadrature `Σ_j m_j φ(|x − x_j|)`.

use std::cell::Cell;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{fit_decay_rate, solve_flock_bound, RateEstimate};
use crate::dynamics::{coupling_terms, ModelParams};
use crate::integrate::{rk4_step, solve, EventLog, IntegratorSpec, OdeSystem, StepStats, Termination};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::mfstate::{FlockMacro, MacroObservables};
use crate::quadrature::trapezoid;
use crate::{Error, Result};

/// `e` below this ends a run as a blow-up.
pub const BLOWUP_STOP: f64 = -1e9;
/// Crossing level reported by [`detect_blowup`].
pub const BLOWUP_DETECT: f64 = -1e6;

const PAR_THRESHOLD: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroFlock1D {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub e: Vec<f64>,
    pub rho: Vec<f64>,
    pub m: Vec<f64>,
    pub kernel: KernelSpec,
    pub lambda: f64,
}

/// Sampling grid `[a, b]` with `points` nodes for the initial profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileGrid {
    pub a: f64,
    pub b: f64,
    pub points: usize,
}

impl ProfileGrid {
    pub fn new(a: f64, b: f64, points: usize) -> Self {
        Self { a, b, points }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points).map(|k| self.a + k as f64 * h).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.b - self.a) / (self.points - 1) as f64
    }
}

fn check_kernel(kernel: &KernelSpec) -> Result<()> {
    let problems = kernel.validate();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    match kernel.family {
        KernelFamily::Constant | KernelFamily::CuckerSmale => Ok(()),
        other => Err(Error::Unsupported(format!(
            "hydro solver needs a smooth bounded kernel, got {}",
            other.name()
        ))),
    }
}

/// Places `n` equal-mass particles at the mass quantiles of `rho0` on
/// `grid` and initializes `v = u0(x)`, `ρ = rho0(x)` and
/// `e = u0′(x) + λ (φ∗ρ0)(x)`, with `u0′` by centered differences at the grid
/// spacing and the convolution by the trapezoid rule on the grid.
pub fn init_from_profiles(
    rho0: impl Fn(f64) -> f64,
    u0: impl Fn(f64) -> f64,
    grid: ProfileGrid,
    n: usize,
    kernel: KernelSpec,
    lambda: f64,
) -> Result<HydroFlock1D> {
    check_kernel(&kernel)?;
    if n == 0 || grid.points < 2 || !(grid.b > grid.a) {
        return Err(Error::Invalid("need n >= 1 particles and a grid with b > a and >= 2 points".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid(format!("lambda must be positive, got {lambda}")));
    }
    let nodes = grid.nodes();
    let dens: Vec<f64> = nodes.iter().map(|&s| rho0(s)).collect();
    if let Some(bad) = dens.iter().find(|d| !(**d >= 0.0 && d.is_finite())) {
        return Err(Error::Domain(format!("density profile must be finite and non-negative, found {bad}")));
    }
    // cumulative mass by the trapezoid rule
    let h = grid.spacing();
    let mut cum = vec![0.0; nodes.len()];
    for k in 1..nodes.len() {
        cum[k] = cum[k - 1] + 0.5 * h * (dens[k - 1] + dens[k]);
    }
    let total = cum[nodes.len() - 1];
    if !(total > 0.0) {
        return Err(Error::Domain("density profile has zero total mass".into()));
    }
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let target = total * (i as f64 + 0.5) / n as f64;
        let k = cum.partition_point(|&c| c < target).clamp(1, nodes.len() - 1);
        let (c0, c1) = (cum[k - 1], cum[k]);
        let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        x.push(nodes[k - 1] + frac * h);
    }
    let mut e = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    let mut integrand = vec![0.0; nodes.len()];
    for &xi in &x {
        for (slot, (&s, &d)) in integrand.iter_mut().zip(nodes.iter().zip(&dens)) {
            *slot = kernel.value((xi - s).abs()) * d;
        }
        let conv = trapezoid(&integrand, grid.a, grid.b);
        let du = (u0(xi + h) - u0(xi - h)) / (2.0 * h);
        v.push(u0(xi));
        e.push(du + lambda * conv);
        rho.push(rho0(xi));
    }
    Ok(HydroFlock1D { x, v, e, rho, m: vec![total / n as f64; n], kernel, lambda })
}

impl HydroFlock1D {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.m.iter().sum()
    }

    pub fn center(&self) -> f64 {
        self.weighted(&self.x)
    }

    pub fn mean_velocity(&self) -> f64 {
        self.weighted(&self.v)
    }

    fn weighted(&self, q: &[f64]) -> f64 {
        let m = self.mass();
        if m > 0.0 {
            self.m.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / m
        } else {
            0.0
        }
    }

    pub fn macro_obs(&self) -> FlockMacro {
        FlockMacro { mass: self.mass(), center: vec![self.center()], momentum: vec![self.mean_velocity()] }
    }

    /// Particle quadrature `Σ_j m_j φ(|x_i − x_j|)` at every particle.
    pub fn convolution(&self) -> Vec<f64> {
        convolve(&self.kernel, &self.x, &self.m)
    }

    /// `v′ = e − λ φ∗ρ`.
    pub fn velocity_gradient(&self) -> Vec<f64> {
        self.e.iter().zip(self.convolution()).map(|(e, c)| e - self.lambda * c).collect()
    }

    /// `v′` recomputed by differencing neighbouring particles.
    pub fn differenced_gradient(&self) -> Vec<f64> {
        difference(&self.x, &self.v)
    }

    /// Density estimate `m_i / Δx_i` from the particle spacing.
    pub fn spacing_density(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
                if hi == lo {
                    return f64::NAN;
                }
                let width = (self.x[hi] - self.x[lo]) / (hi - lo) as f64;
                self.m[i] / width
            })
            .collect()
    }

    /// First index `i` with `x[i+1] <= x[i]`.
    pub fn ordering_violation(&self) -> Option<usize> {
        first_unordered(&self.x)
    }

    pub fn min_e(&self) -> Option<(usize, f64)> {
        self.e.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.len();
        if [self.v.len(), self.e.len(), self.rho.len(), self.m.len()].iter().any(|&l| l != n) {
            out.push("particle arrays differ in length".into());
        }
        if self.m.iter().any(|m| !(*m > 0.0)) {
            out.push("masses must be positive".into());
        }
        if self.rho.iter().any(|r| !(*r > 0.0)) {
            out.push("densities must be positive".into());
        }
        if let Some(i) = self.ordering_violation() {
            out.push(format!("positions not strictly increasing at particle {i}"));
        }
        if !(self.lambda > 0.0) {
            out.push("lambda must be positive".into());
        }
        if let Err(e) = check_kernel(&self.kernel) {
            out.push(e.to_string());
        }
        out
    }
}

fn first_unordered(x: &[f64]) -> Option<usize> {
    x.windows(2).position(|w| !(w[1] > w[0]))
}

/// Second-order three-point derivative on a non-uniform grid (one-sided
/// stencils at the ends).
fn difference(x: &[f64], q: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 3 {
        let d = if n == 2 { (q[1] - q[0]) / (x[1] - x[0]) } else { 0.0 };
        return vec![d; n];
    }
    // derivative at x[c] of the parabola through three nodes
    let three = |i: [usize; 3], c: f64| -> f64 {
        let [a, b, d] = i;
        let (x0, x1, x2) = (x[a], x[b], x[d]);
        q[a] * (2.0 * c - x1 - x2) / ((x0 - x1) * (x0 - x2))
            + q[b] * (2.0 * c - x0 - x2) / ((x1 - x0) * (x1 - x2))
            + q[d] * (2.0 * c - x0 - x1) / ((x2 - x0) * (x2 - x1))
    };
    (0..n)
        .map(|i| {
            let s = i.clamp(1, n - 2) - 1;
            three([s, s + 1, s + 2], x[i])
        })
        .collect()
}

fn convolve(kernel: &KernelSpec, x: &[f64], m: &[f64]) -> Vec<f64> {
    let one = |i: usize| -> f64 { x.iter().zip(m).map(|(xj, mj)| mj * kernel.value((x[i] - xj).abs())).sum() };
    if x.len() >= PAR_THRESHOLD {
        (0..x.len()).into_par_iter().map(one).collect()
    } else {
        (0..x.len()).map(one).collect()
    }
}

/// Which variables the solver integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// `(x, v)` with coupling `ε Σ M_β ψ (V_β − v)`.
    #[default]
    Original,
    /// `(x − X_α, v − V_α)` with damping `−εR_α w`, plus the flock centres
    /// `(X_α, V_α)` driven by the super-agent system.
    Shifted,
}

/// Flat-vector form of the hydro system. Layout per flock: four blocks of
/// length `N_α` (`x|y`, `v|w`, `e`, `ρ`); the shifted frame appends `(X_α, V_α)`
/// for every flock.
pub struct HydroSystem<'a> {
    template: &'a [HydroFlock1D],
    params: &'a ModelParams,
    frame: Frame,
    offsets: Vec<usize>,
    len: usize,
    crossing: Cell<Option<(f64, f64)>>,
}

impl<'a> HydroSystem<'a> {
    pub fn new(template: &'a [HydroFlock1D], params: &'a ModelParams, frame: Frame) -> Self {
        let mut offsets = Vec::with_capacity(template.len());
        let mut len = 0;
        for f in template {
            offsets.push(len);
            len += 4 * f.len();
        }
        if frame == Frame::Shifted {
            len += 2 * template.len();
        }
        Self { template, params, frame, offsets, len, crossing: Cell::new(None) }
    }

    fn block<'y>(&self, a: usize, y: &'y [f64]) -> [&'y [f64]; 4] {
        let (o, n) = (self.offsets[a], self.template[a].len());
        [&y[o..o + n], &y[o + n..o + 2 * n], &y[o + 2 * n..o + 3 * n], &y[o + 3 * n..o + 4 * n]]
    }

    fn centers_offset(&self) -> usize {
        self.len - 2 * self.template.len()
    }

    pub fn pack(&self, flocks: &[HydroFlock1D]) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.len);
        for f in flocks {
            let (xc, vc) = match self.frame {
                Frame::Original => (0.0, 0.0),
                Frame::Shifted => (f.center(), f.mean_velocity()),
            };
            y.extend(f.x.iter().map(|x| x - xc));
            y.extend(f.v.iter().map(|v| v - vc));
            y.extend_from_slice(&f.e);
            y.extend_from_slice(&f.rho);
        }
        if self.frame == Frame::Shifted {
            for f in flocks {
                y.push(f.center());
                y.push(f.mean_velocity());
            }
        }
        y
    }

    pub fn unpack(&self, y: &[f64]) -> Vec<HydroFlock1D> {
        self.template
            .iter()
            .enumerate()
            .map(|(a, t)| {
                let [p, q, e, rho] = self.block(a, y);
                let (xc, vc) = self.center_of(a, y);
                HydroFlock1D {
                    x: p.iter().map(|s| s + xc).collect(),
                    v: q.iter().map(|s| s + vc).collect(),
                    e: e.to_vec(),
                    rho: rho.to_vec(),
                    m: t.m.clone(),
                    kernel: t.kernel.clone(),
                    lambda: t.lambda,
                }
            })
            .collect()
    }

    fn center_of(&self, a: usize, y: &[f64]) -> (f64, f64) {
        match self.frame {
            Frame::Original => (0.0, 0.0),
            Frame::Shifted => {
                let o = self.centers_offset() + 2 * a;
                (y[o], y[o + 1])
            }
        }
    }

    fn macro_from(&self, y: &[f64]) -> MacroObservables {
        let flocks = self
            .template
            .iter()
            .enumerate()
            .map(|(a, t)| {
                let m = t.mass();
                let (x, v) = match self.frame {
                    Frame::Shifted => self.center_of(a, y),
                    Frame::Original => {
                        let [p, q, _, _] = self.block(a, y);
                        let avg = |s: &[f64]| t.m.iter().zip(s).map(|(w, z)| w * z).sum::<f64>() / m;
                        (avg(p), avg(q))
                    }
                };
                FlockMacro { mass: m, center: vec![x], momentum: vec![v] }
            })
            .collect();
        MacroObservables::from_flocks(1, flocks)
    }

    /// First time the minimum of `e` crossed [`BLOWUP_DETECT`] on an accepted
    /// step, with the value seen there.
    pub fn detect_crossing(&self) -> Option<(f64, f64)> {
        self.crossing.get()
    }
}

impl OdeSystem for HydroSystem<'_> {
    fn len(&self) -> usize {
        self.len
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let mo = self.macro_from(y);
        let (r, s) = coupling_terms(&mo, &self.params.psi);
        let eps = self.params.epsilon;
        for (a, f) in self.template.iter().enumerate() {
            let n = f.len();
            let [p, q, e, rho] = self.block(a, y);
            let (er, es) = (eps * r[a], eps * s[a][0]);
            // in the shifted frame the forcing cancels against the centre drift
            let forcing = match self.frame {
                Frame::Original => es,
                Frame::Shifted => 0.0,
            };
            let particle = |i: usize| -> [f64; 4] {
                let (mut conv, mut align) = (0.0, 0.0);
                for j in 0..n {
                    let w = f.m[j] * f.kernel.value((p[i] - p[j]).abs());
                    conv += w;
                    align += w * (q[j] - q[i]);
                }
                let lc = f.lambda * conv;
                [q[i], f.lambda * align + forcing - er * q[i], (er + e[i]) * (lc - e[i]), -rho[i] * (e[i] - lc)]
            };
            let vals: Vec<[f64; 4]> = if n >= PAR_THRESHOLD {
                (0..n).into_par_iter().map(particle).collect()
            } else {
                (0..n).map(particle).collect()
            };
            let o = self.offsets[a];
            for (i, d) in vals.iter().enumerate() {
                for (k, dk) in d.iter().enumerate() {
                    dy[o + k * n + i] = *dk;
                }
            }
        }
        if self.frame == Frame::Shifted {
            let c = self.centers_offset();
            for (a, fm) in mo.flocks.iter().enumerate() {
                dy[c + 2 * a] = fm.momentum[0];
                dy[c + 2 * a + 1] = eps * (s[a][0] - r[a] * fm.momentum[0]);
            }
        }
        Ok(())
    }

    fn stop(&self, t: f64, y: &[f64]) -> Option<String> {
        let mut min_e = f64::INFINITY;
        for a in 0..self.template.len() {
            let [p, _, e, _] = self.block(a, y);
            if let Some(i) = first_unordered(p) {
                return Some(format!("ordering lost in flock {a} at particle {i}"));
            }
            min_e = e.iter().copied().fold(min_e, f64::min);
        }
        if min_e < BLOWUP_DETECT && self.crossing.get().is_none() {
            self.crossing.set(Some((t, min_e)));
        }
        (min_e < BLOWUP_STOP).then(|| format!("e fell to {min_e:.3e}"))
    }
}

fn check_flocks(flocks: &[HydroFlock1D], params: &ModelParams) -> Result<()> {
    let mut problems = params.validate();
    for (a, f) in flocks.iter().enumerate() {
        problems.extend(f.validate().into_iter().map(|p| format!("flock {a}: {p}")));
    }
    if flocks.is_empty() {
        problems.push("no flocks".into());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems))
    }
}

/// One classical RK4 step of length `dt` in original variables.
pub fn step_hydro(flocks: &[HydroFlock1D], params: &ModelParams, dt: f64) -> Result<Vec<HydroFlock1D>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Invalid(format!("dt must be positive, got {dt}")));
    }
    check_flocks(flocks, params)?;
    let sys = HydroSystem::new(flocks, params, Frame::Original);
    let y1 = rk4_step(&sys, 0.0, &sys.pack(flocks), dt)?;
    let next = sys.unpack(&y1);
    for (a, f) in next.iter().enumerate() {
        if f.ordering_violation().is_some() {
            return Err(Error::Ordering { flock: a, time: dt });
        }
        if f.min_e().is_some_and(|(_, e)| e < BLOWUP_STOP) {
            return Err(Error::Blowup { time: dt, last_good: 0.0 });
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HydroOutcome {
    Completed,
    Blowup { time: f64 },
    OrderingLost { time: f64, reason: String },
    Failed { message: String },
}

#[derive(Debug, Clone)]
pub struct HydroRun {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<HydroFlock1D>>,
    pub outcome: HydroOutcome,
    pub log: EventLog,
    pub stats: StepStats,
    /// First accepted point where `min e` dropped below [`BLOWUP_DETECT`].
    pub crossing: Option<(f64, f64)>,
    pub t_last: f64,
    pub last: Vec<HydroFlock1D>,
}

impl HydroRun {
    pub fn is_global(&self) -> bool {
        self.outcome == HydroOutcome::Completed
    }
}

/// Integrates the hydro system from `t = 0`, sampling at `samples`.
pub fn run_hydro(
    flocks: &[HydroFlock1D],
    params: &ModelParams,
    spec: &IntegratorSpec,
    samples: &[f64],
    frame: Frame,
) -> Result<HydroRun> {
    check_flocks(flocks, params)?;
    let sys = HydroSystem::new(flocks, params, frame);
    let sol = solve(&sys, 0.0, &sys.pack(flocks), spec, samples)?;
    let outcome = match &sol.termination {
        Termination::Completed => HydroOutcome::Completed,
        Termination::Stopped { time, reason } if reason.starts_with("ordering") => {
            HydroOutcome::OrderingLost { time: *time, reason: reason.clone() }
        }
        Termination::Stopped { time, .. } => HydroOutcome::Blowup { time: *time },
        Termination::Failed(Error::Blowup { time, .. }) => HydroOutcome::Blowup { time: *time },
        Termination::Failed(e) => HydroOutcome::Failed { message: e.to_string() },
    };
    Ok(HydroRun {
        snapshots: sol.states.iter().map(|y| sys.unpack(y)).collect(),
        times: sol.times,
        outcome,
        log: sol.log,
        stats: sol.stats,
        crossing: sys.detect_crossing(),
        t_last: sol.t_last,
        last: sys.unpack(&sol.y_last),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    GlobalGuaranteed,
    IndeterminateBand,
    BlowupGuaranteed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVerdict {
    pub classification: Classification,
    pub witness_flock: usize,
    pub witness_particle: usize,
    pub witness_position: f64,
    /// `min e` over all particles.
    pub min_e: f64,
    /// `−εMψ(0)`.
    pub floor: f64,
    /// `−εMψ(D̄)` when ψ has a fat tail and the bound is solvable.
    pub improved_floor: Option<f64>,
    /// Classification against the improved floor.
    pub improved: Option<Classification>,
}

fn classify(min_e: f64, floor: f64) -> Classification {
    if min_e >= 0.0 {
        Classification::GlobalGuaranteed
    } else if min_e < floor {
        Classification::BlowupGuaranteed
    } else {
        Classification::IndeterminateBand
    }
}

/// Classifies initial data: global iff `min e ≥ 0`, blow-up iff
/// `min e < −εMψ(0)`, otherwise the indeterminate band. With a fat-tailed ψ
/// the global floor `−εMψ(D̄)` is reported separately.
pub fn threshold_verdict(flocks: &[HydroFlock1D], params: &ModelParams) -> ThresholdVerdict {
    let (mut wa, mut wi, mut min_e) = (0, 0, f64::INFINITY);
    for (a, f) in flocks.iter().enumerate() {
        if let Some((i, e)) = f.min_e() {
            if e < min_e {
                (wa, wi, min_e) = (a, i, e);
            }
        }
    }
    let total: f64 = flocks.iter().map(|f| f.mass()).sum();
    let eps = params.epsilon;
    let floor = -eps * total * params.psi.value(0.0);
    let classification = classify(min_e, floor);
    let improved_floor = (eps > 0.0 && flocks.len() > 1)
        .then(|| {
            let centers: Vec<f64> = flocks.iter().map(|f| f.center()).collect();
            let vels: Vec<f64> = flocks.iter().map(|f| f.mean_velocity()).collect();
            let spread = |s: &[f64]| {
                s.iter().copied().fold(f64::NEG_INFINITY, f64::max) - s.iter().copied().fold(f64::INFINITY, f64::min)
            };
            let b = solve_flock_bound(&params.psi, eps * total, spread(&centers), spread(&vels)).ok()?;
            b.solvable.then(|| -eps * total * params.psi.value(b.d_bar))
        })
        .flatten();
    ThresholdVerdict {
        classification,
        witness_flock: wa,
        witness_particle: wi,
        witness_position: flocks.get(wa).and_then(|f| f.x.get(wi)).copied().unwrap_or(f64::NAN),
        min_e,
        floor,
        improved_floor,
        improved: improved_floor.map(|fl| classify(min_e, fl)),
    }
}

/// Blow-up detection result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupEstimate {
    /// First time `min e < −1e6`.
    pub crossing_time: f64,
    pub crossing_value: f64,
    /// `t + 1/|e|` from the Riccati asymptotics `ė ≈ −e²`.
    pub blowup_time: f64,
}

/// Reports the first crossing of `min e` below `−1e6` with its Riccati
/// extrapolation. A run that stopped on loss of ordering before the crossing
/// is extrapolated from its last state when `min e` is negative there.
pub fn detect_blowup(run: &HydroRun) -> Option<BlowupEstimate> {
    if let Some((t, e)) = run.crossing {
        return Some(BlowupEstimate { crossing_time: t, crossing_value: e, blowup_time: t + 1.0 / e.abs() });
    }
    if matches!(run.outcome, HydroOutcome::OrderingLost { .. } | HydroOutcome::Blowup { .. }) {
        let e = run.last.iter().filter_map(|f| f.min_e()).map(|p| p.1).fold(f64::INFINITY, f64::min);
        if e < 0.0 {
            return Some(BlowupEstimate { crossing_time: run.t_last, crossing_value: e, blowup_time: run.t_last + 1.0 / e.abs() });
        }
    }
    None
}

/// Upper bound on the blow-up time from `ė ≤ −c e²`, `c = δ/(1+δ)`, when
/// `min e₀ = −(1+δ)εMψ(0)` with `δ > 0`: `T ≤ 1/(c |e₀|)`.
pub fn riccati_bound(min_e0: f64, floor: f64) -> Option<f64> {
    if !(min_e0 < floor && floor <= 0.0) {
        return None;
    }
    let c = if floor < 0.0 { 1.0 - floor / min_e0 } else { 1.0 };
    Some(1.0 / (c * min_e0.abs()))
}

/// Closed form of `ė = (a + e)(b − e)` with constant `a, b`.
pub fn riccati_solution(e0: f64, a: f64, b: f64, t: f64) -> f64 {
    let k = a + b;
    let f0 = e0 + a;
    if k == 0.0 {
        return f0 / (1.0 + f0 * t) - a;
    }
    k * f0 / (f0 + (k - f0) * (-k * t).exp()) - a
}

/// Piecewise-linear profiles on a fixed grid in the frame `x − X_α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    /// Trapezoid mass of the raw interpolant before rescaling to `M_α`.
    pub raw_mass: f64,
}

fn interp(xs: &[f64], ys: &[f64], s: f64) -> f64 {
    if xs.is_empty() || s < xs[0] || s > xs[xs.len() - 1] {
        return 0.0;
    }
    let k = xs.partition_point(|&x| x < s).clamp(1, xs.len().max(2) - 1);
    if xs.len() == 1 {
        return ys[0];
    }
    let (x0, x1) = (xs[k - 1], xs[k]);
    let w = if x1 > x0 { (s - x0) / (x1 - x0) } else { 0.0 };
    ys[k - 1] + w * (ys[k] - ys[k - 1])
}

/// Linear interpolation of `(x_i − X_α, ρ_i)` onto `grid`, zero outside the
/// particle hull, rescaled so that its trapezoid mass equals `M_α`.
pub fn reconstruct(flock: &HydroFlock1D, grid: &[f64]) -> Reconstruction {
    let xc = flock.center();
    let rel: Vec<f64> = flock.x.iter().map(|x| x - xc).collect();
    let mut rho: Vec<f64> = grid.iter().map(|&s| interp(&rel, &flock.rho, s)).collect();
    let u: Vec<f64> = grid.iter().map(|&s| interp(&rel, &flock.v, s)).collect();
    let raw_mass = if grid.len() >= 2 { trapezoid(&rho, grid[0], grid[grid.len() - 1]) } else { 0.0 };
    if raw_mass > 0.0 {
        let scale = flock.mass() / raw_mass;
        rho.iter_mut().for_each(|r| *r *= scale);
    }
    Reconstruction { grid: grid.to_vec(), rho, u, raw_mass }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConvergence {
    /// `max_α ‖ρ_α(t) − ρ_α(t_end)‖_∞` at each sample.
    pub cauchy: Vec<f64>,
    pub sup_du: Vec<f64>,
    pub sup_ddu: Vec<f64>,
    pub density_rate: RateEstimate,
    pub du_rate: RateEstimate,
    pub ddu_rate: RateEstimate,
    /// Limit profile of every flock at `t_end`.
    pub limit: Vec<Reconstruction>,
}

/// Grid points used for the density reconstruction.
pub const RECONSTRUCTION_POINTS: usize = 201;

/// Strong-flocking diagnostics of a global run: sup-norm Cauchy differences of
/// the reconstructed densities against the final profile, and the decay of
/// `sup|u′|` and `sup|u″|`. The Cauchy rate is fitted on `[0.1, 0.6]·t_end`
/// (the tail collapses onto the reference), the derivative rates on the
/// default window.
pub fn profile_convergence(run: &HydroRun) -> Result<ProfileConvergence> {
    if !run.is_global() {
        return Err(Error::Precondition(format!("profile convergence needs a global run, got {:?}", run.outcome)));
    }
    let Some(last) = run.snapshots.last() else {
        return Err(Error::Precondition("run has no samples".into()));
    };
    let grids: Vec<Vec<f64>> = last
        .iter()
        .map(|f| {
            let xc = f.center();
            let (lo, hi) = (f.x[0] - xc, f.x[f.len() - 1] - xc);
            let pad = 0.1 * (hi - lo).max(1e-12);
            let (a, b) = (lo - pad, hi + pad);
            let h = (b - a) / (RECONSTRUCTION_POINTS - 1) as f64;
            (0..RECONSTRUCTION_POINTS).map(|k| a + k as f64 * h).collect()
        })
        .collect();
    let limit: Vec<Reconstruction> = last.iter().zip(&grids).map(|(f, g)| reconstruct(f, g)).collect();
    let mut cauchy = Vec::with_capacity(run.times.len());
    let mut sup_du = Vec::with_capacity(run.times.len());
    let mut sup_ddu = Vec::with_capacity(run.times.len());
    for snap in &run.snapshots {
        let (mut c, mut d1, mut d2) = (0.0f64, 0.0f64, 0.0f64);
        for (a, f) in snap.iter().enumerate() {
            let rec = reconstruct(f, &grids[a]);
            c = rec.rho.iter().zip(&limit[a].rho).map(|(p, q)| (p - q).abs()).fold(c, f64::max);
            let du = f.velocity_gradient();
            d1 = du.iter().map(|s| s.abs()).fold(d1, f64::max);
            let ddu = f.x.windows(2).zip(du.windows(2)).map(|(x, d)| ((d[1] - d[0]) / (x[1] - x[0])).abs());
            d2 = ddu.fold(d2, f64::max);
        }
        cauchy.push(c);
        sup_du.push(d1);
        sup_ddu.push(d2);
    }
    let t_end = *run.times.last().unwrap_or(&0.0);
    let density_rate = fit_decay_rate(&run.times, &cauchy, Some((0.1 * t_end, 0.6 * t_end)))?;
    let du_rate = fit_decay_rate(&run.times, &sup_du, None)?;
    let ddu_rate = fit_decay_rate(&run.times, &sup_ddu, None)?;
    Ok(ProfileConvergence { cauchy, sup_du, sup_ddu, density_rate, du_rate, ddu_rate, limit })
}

/// Snapshot rows `flock_id,particle_id,m,x,v,e,rho`.
pub fn write_snapshot_csv<W: Write>(flocks: &[HydroFlock1D], mut w: W) -> Result<()> {
    writeln!(w, "flock_id,particle_id,m,x,v,e,rho")?;
    for (a, f) in flocks.iter().enumerate() {
        for i in 0..f.len() {
            writeln!(w, "{a},{i},{:e},{:e},{:e},{:e},{:e}", f.m[i], f.x[i], f.v[i], f.e[i], f.rho[i])?;
        }
    }
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot_csv`] into a copy of
/// `template`, which supplies kernels, amplitudes and particle counts.
pub fn read_snapshot_csv<R: BufRead>(template: &[HydroFlock1D], input: R) -> Result<Vec<HydroFlock1D>> {
    let mut out = template.to_vec();
    let mut seen = 0usize;
    for (ln, line) in input.lines().enumerate() {
        let line = line?;
        if ln == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Invalid(format!("snapshot line {}: malformed row", ln + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(bad());
        }
        let a: usize = cols[0].trim().parse().map_err(|_| bad())?;
        let i: usize = cols[1].trim().parse().map_err(|_| bad())?;
        let mut vals = [0.0; 5];
        for (slot, c) in vals.iter_mut().zip(&cols[2..]) {
            *slot = c.trim().parse().map_err(|_| bad())?;
        }
        let f = out.get_mut(a).filter(|f| i < f.len()).ok_or_else(bad)?;
        [f.m[i], f.x[i], f.v[i], f.e[i], f.rho[i]] = vals;
        seen += 1;
    }
    let expected: usize = template.iter().map(|f| f.len()).sum();
    if seen != expected {
        return Err(Error::Invalid(format!("snapshot has {seen} rows, expected {expected}")));
    }
    Ok(out)
}

/// Reconstruction rows `x_grid,rho,u`.
pub fn write_reconstruction_csv<W: Write>(rec: &Reconstruction, mut w: W) -> Result<()> {
    writeln!(w, "x_grid,rho,u")?;
    for k in 0..rec.grid.len() {
        writeln!(w, "{:e},{:e},{:e}", rec.grid[k], rec.rho[k], rec.u[k])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::uniform_samples;

    fn uniform(s: f64) -> f64 {
        if (0.0..=1.0).contains(&s) {
            1.0
        } else {
            0.0
        }
    }

    fn bump(c: f64) -> impl Fn(f64) -> f64 {
        move |s: f64| {
            let z = s - c;
            if z.abs() < 1.0 {
                (std::f64::consts::FRAC_PI_2 * z).cos().powi(2)
            } else {
                0.0
            }
        }
    }

    #[test]
    fn quantile_placement() {
        let f = init_from_profiles(uniform, |_| 0.0, ProfileGrid::new(0.0, 1.0, 1001), 4, KernelSpec::constant(1.0), 1.0)
            .unwrap();
        for (x, want) in f.x.iter().zip([0.125, 0.375, 0.625, 0.875]) {
            assert!((x - want).abs() < 1e-9, "{x}");
        }
        assert!(f.m.iter().all(|m| (m - 0.25).abs() < 1e-9));
        // φ ≡ 1 ⇒ φ∗ρ ≡ M = 1
        let g = init_from_profiles(uniform, |s| 0.3 * s, ProfileGrid::new(0.0, 1.0, 1001), 8, KernelSpec::constant(1.0), 1.0)
            .unwrap();
        assert!(g.e.iter().all(|e| (e - 1.3).abs() < 1e-6));
        let h = init_from_profiles(uniform, |_| 2.0, ProfileGrid::new(0.0, 1.0, 101), 8, KernelSpec::cucker_smale(1.0, 1.0), 1.0)
            .unwrap();
        assert!(h.v.iter().all(|v| *v == 2.0) && h.e.iter().all(|e| *e > 0.0));
    }

    #[test]
    fn init_errors() {
        let grid = ProfileGrid::new(0.0, 1.0, 11);
        let r = init_from_profiles(|_| 0.0, |_| 0.0, grid, 4, KernelSpec::constant(1.0), 1.0);
        assert!(matches!(r, Err(Error::Domain(_))));
        let r = init_from_profiles(uniform, |_| 0.0, grid, 4, KernelSpec::power_singular(1.0, 0.5), 1.0);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    fn two_constant_flocks(e0: f64) -> (Vec<HydroFlock1D>, ModelParams) {
        let mk = |c: f64, v: f64| {
            let mut f = init_from_profiles(
                |s| uniform(s - c),
                move |_| v,
                ProfileGrid::new(c, c + 1.0, 101),
                6,
                KernelSpec::constant(0.5),
                1.0,
            )
            .unwrap();
            f.e = vec![e0; f.len()];
            f
        };
        (vec![mk(0.0, 0.0), mk(5.0, 0.0)], ModelParams::new(0.2, KernelSpec::constant(1.0)))
    }

    #[test]
    fn logistic_oracle() {
        let (flocks, params) = two_constant_flocks(0.3);
        // λφ∗ρ = 0.5, εR = 0.2
        let mut cur = flocks;
        let dt = 0.05;
        for k in 1..=20 {
            cur = step_hydro(&cur, &params, dt).unwrap();
            let want = riccati_solution(0.3, 0.2, 0.5, k as f64 * dt);
            for f in &cur {
                assert!(f.e.iter().all(|e| (e - want).abs() < 1e-9), "{:?} vs {want}", f.e);
            }
        }
        assert!((riccati_solution(0.3, 0.2, 0.5, 50.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rigid_translation_and_zero_e() {
        let (mut flocks, _) = two_constant_flocks(0.0);
        flocks.truncate(1);
        flocks[0].v = vec![1.5; flocks[0].len()];
        let params = ModelParams::decoupled();
        let after = step_hydro(&flocks, &params, 0.1).unwrap();
        assert!(after[0].e.iter().all(|e| *e == 0.0));
        // consistent e with homogeneous v: pure translation
        flocks[0].e = flocks[0].convolution().iter().map(|c| flocks[0].lambda * c).collect();
        let before = flocks[0].clone();
        let after = step_hydro(&flocks, &params, 0.1).unwrap();
        for i in 0..before.len() {
            assert!((after[0].x[i] - before.x[i] - 0.15).abs() < 1e-14);
            assert!((after[0].rho[i] - before.rho[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn crossing_is_an_ordering_error() {
        let (mut flocks, params) = two_constant_flocks(0.5);
        flocks[0].v = (0..6).map(|i| -10.0 * i as f64).collect();
        assert!(matches!(step_hydro(&flocks, &params, 0.1), Err(Error::Ordering { flock: 0, .. })));
    }

    #[test]
    fn verdict_examples() {
        let grid = ProfileGrid::new(-1.0, 1.0, 401);
        let f = init_from_profiles(bump(0.0), |s| s.tanh(), grid, 32, KernelSpec::cucker_smale(1.0, 1.0), 1.0).unwrap();
        let p = ModelParams::new(0.1, KernelSpec::cucker_smale(1.0, 0.5));
        assert_eq!(threshold_verdict(std::slice::from_ref(&f), &p).classification, Classification::GlobalGuaranteed);

        let mut g = f.clone();
        g.e[3] = -0.01;
        let v = threshold_verdict(&[g.clone()], &ModelParams::decoupled());
        assert_eq!(v.classification, Classification::BlowupGuaranteed);
        assert_eq!((v.witness_flock, v.witness_particle), (0, 3));

        // M = 1 after normalisation of the single-flock mass
        let mut h = g.clone();
        let scale = 1.0 / h.mass();
        h.m.iter_mut().for_each(|m| *m *= scale);
        h.e[3] = -0.05;
        let v = threshold_verdict(&[h], &ModelParams::new(0.1, KernelSpec::constant(1.0)));
        assert!((v.floor + 0.1).abs() < 1e-12);
        assert_eq!(v.classification, Classification::IndeterminateBand);
    }

    #[test]
    fn improved_floor_is_reported() {
        let grid = ProfileGrid::new(-1.0, 1.0, 201);
        let a = init_from_profiles(bump(0.0), |_| 0.0, grid, 16, KernelSpec::cucker_smale(1.0, 1.0), 1.0).unwrap();
        let grid = ProfileGrid::new(2.0, 4.0, 201);
        let b = init_from_profiles(bump(3.0), |_| 0.1, grid, 16, KernelSpec::cucker_smale(1.0, 1.0), 1.0).unwrap();
        let p = ModelParams::new(0.5, KernelSpec::cucker_smale(1.0, 0.5));
        let v = threshold_verdict(&[a, b], &p);
        let fl = v.improved_floor.unwrap();
        assert!(fl > v.floor && fl < 0.0);
    }

    #[test]
    fn frames_agree() {
        let grid = ProfileGrid::new(-1.0, 1.0, 401);
        let a = init_from_profiles(bump(0.0), |s| 0.2 * s.tanh(), grid, 24, KernelSpec::cucker_smale(1.0, 1.0), 1.0)
            .unwrap();
        let grid = ProfileGrid::new(3.0, 5.0, 401);
        let b = init_from_profiles(bump(4.0), |s| -0.5 + 0.1 * (s - 4.0), grid, 24, KernelSpec::cucker_smale(1.0, 1.0), 0.8)
            .unwrap();
        let flocks = vec![a, b];
        let p = ModelParams::new(0.3, KernelSpec::cucker_smale(1.0, 0.5));
        let spec = IntegratorSpec::adaptive(4.0).with_tolerances(1e-10, 1e-12);
        let ts = uniform_samples(0.0, 4.0, 1.0);
        let o = run_hydro(&flocks, &p, &spec, &ts, Frame::Original).unwrap();
        let s = run_hydro(&flocks, &p, &spec, &ts, Frame::Shifted).unwrap();
        for (fo, fs) in o.last.iter().zip(&s.last) {
            for i in 0..fo.len() {
                assert!((fo.x[i] - fs.x[i]).abs() < 1e-7);
                assert!((fo.v[i] - fs.v[i]).abs() < 1e-7);
                assert!((fo.e[i] - fs.e[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn macro_residual_matches_superagent() {
        let grid = ProfileGrid::new(-1.0, 1.0, 201);
        let a = init_from_profiles(bump(0.0), |s| s.sin(), grid, 20, KernelSpec::cucker_smale(1.0, 1.0), 1.0).unwrap();
        let grid = ProfileGrid::new(2.0, 4.0, 201);
        let b = init_from_profiles(bump(3.0), |s| 1.0 - 0.2 * s, grid, 20, KernelSpec::cucker_smale(1.0, 1.0), 1.0)
            .unwrap();
        let flocks = vec![a, b];
        let p = ModelParams::new(0.4, KernelSpec::cucker_smale(1.0, 0.5));
        let sys = HydroSystem::new(&flocks, &p, Frame::Original);
        let y = sys.pack(&flocks);
        let mut dy = vec![0.0; y.len()];
        sys.rhs(0.0, &y, &mut dy).unwrap();
        let mo = sys.macro_from(&y);
        let (r, s) = coupling_terms(&mo, &p.psi);
        for (a, f) in flocks.iter().enumerate() {
            let n = f.len();
            let o = sys.offsets[a];
            let vdot: f64 = (0..n).map(|i| f.m[i] * dy[o + n + i]).sum::<f64>() / f.mass();
            let want = p.epsilon * (s[a][0] - r[a] * mo.flocks[a].momentum[0]);
            assert!((vdot - want).abs() < 1e-12);
        }
    }

    #[test]
    fn riccati_bound_formula() {
        // e0 = -(1+δ)F with δ = 0.5 ⇒ bound = (1+δ)/(δ|e0|)
        let b = riccati_bound(-0.3, -0.2).unwrap();
        assert!((b - 1.5 / (0.5 * 0.3)).abs() < 1e-12);
        assert_eq!(riccati_bound(-0.1, -0.2), None);
        assert!((riccati_bound(-2.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_conserves_mass() {
        let grid = ProfileGrid::new(-1.0, 1.0, 401);
        let f = init_from_profiles(bump(0.0), |_| 0.0, grid, 64, KernelSpec::constant(1.0), 1.0).unwrap();
        let g: Vec<f64> = (0..201).map(|k| -1.2 + 2.4 * k as f64 / 200.0).collect();
        let rec = reconstruct(&f, &g);
        assert!((trapezoid(&rec.rho, -1.2, 1.2) - f.mass()).abs() < 1e-6 * f.mass());
        assert!((rec.raw_mass - f.mass()).abs() < 0.05 * f.mass());
        let mut buf = Vec::new();
        write_reconstruction_csv(&rec, &mut buf).unwrap();
        write_snapshot_csv(std::slice::from_ref(&f), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x_grid,rho,u\n") && text.contains("flock_id,particle_id,m,x,v,e,rho\n"));
        let mut snap = Vec::new();
        write_snapshot_csv(std::slice::from_ref(&f), &mut snap).unwrap();
        let back = read_snapshot_csv(std::slice::from_ref(&f), snap.as_slice()).unwrap();
        assert_eq!(back[0], f);
        assert!(read_snapshot_csv(&[f.clone(), f], snap.as_slice()).is_err());
    }

    #[test]
    fn steady_translation_has_no_cauchy_drift() {
        let grid = ProfileGrid::new(-1.0, 1.0, 401);
        let mut f = init_from_profiles(bump(0.0), |_| 0.7, grid, 32, KernelSpec::cucker_smale(1.0, 1.0), 1.0).unwrap();
        // consistent with particle quadrature so nothing moves relative to the centre
        f.e = f.convolution().iter().map(|c| f.lambda * c).collect();
        let run = run_hydro(&[f], &ModelParams::decoupled(), &IntegratorSpec::adaptive(5.0), &uniform_samples(0.0, 5.0, 0.25), Frame::Original)
            .unwrap();
        assert!(detect_blowup(&run).is_none());
        let snaps = &run.snapshots;
        let g: Vec<f64> = (0..51).map(|k| -1.0 + 0.04 * k as f64).collect();
        let r0 = reconstruct(&snaps[0][0], &g);
        let r1 = reconstruct(&snaps[snaps.len() - 1][0], &g);
        let diff = r0.rho.iter().zip(&r1.rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
    }
}
