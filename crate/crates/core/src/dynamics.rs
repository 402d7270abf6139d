//! Right-hand sides of the master equation, the super-agent system, the
//! attraction-forced system and the shifted-frame system.
//!
//! Every pairwise sum for agent `i` is accumulated in increasing `j` order,
//! so results are bit-identical whether or not the agent loop runs on the
//! rayon pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrate::OdeSystem;
use crate::kernels::{KernelFamily, KernelSpec, PotentialSpec};
use crate::mfstate::{Flock, FlockMacro, MacroObservables, MultiFlockState, ShiftedState};
use crate::{Error, Result};

/// Agent count from which the per-agent loop is handed to rayon.
const PAR_THRESHOLD: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    AlignmentOnly,
    AlignmentAttraction,
    SuperagentOnly,
}

impl Mode {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "alignment_only" => Some(Self::AlignmentOnly),
            "alignment_attraction" => Some(Self::AlignmentAttraction),
            "superagent_only" => Some(Self::SuperagentOnly),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AlignmentOnly => "alignment_only",
            Self::AlignmentAttraction => "alignment_attraction",
            Self::SuperagentOnly => "superagent_only",
        }
    }
}

/// Inter-flock coupling and model switches. The intra-flock amplitudes
/// `λ_α` and kernels `φ_α` live on each [`Flock`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub epsilon: f64,
    pub psi: KernelSpec,
    #[serde(default)]
    pub mode: Mode,
    /// Lets attraction run on flocks without `m = 1/N` masses.
    #[serde(default)]
    pub allow_heterogeneous_attraction: bool,
}

impl ModelParams {
    pub fn new(epsilon: f64, psi: KernelSpec) -> Self {
        Self { epsilon, psi, mode: Mode::AlignmentOnly, allow_heterogeneous_attraction: false }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Uncoupled flocks (`ε = 0`).
    pub fn decoupled() -> Self {
        Self::new(0.0, KernelSpec::constant(0.0))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            out.push(format!("epsilon: must be finite and nonnegative, got {}", self.epsilon));
        }
        if self.psi.family == KernelFamily::PowerSingular {
            out.push("psi.family: the inter-flock kernel must be bounded".into());
        }
        out.extend(self.psi.validate().into_iter().map(|m| format!("psi.{m}")));
        out
    }

    /// Checks the model against a concrete state (mode-specific rules).
    pub fn check_state(&self, state: &MultiFlockState) -> Result<()> {
        let problems = self.validate();
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        for (a, f) in state.flocks.iter().enumerate() {
            if !(f.lambda > 0.0 && f.lambda.is_finite()) && f.kernel.c0 != 0.0 {
                return Err(Error::Invalid(format!("flock {a}: lambda must be positive, got {}", f.lambda)));
            }
            if self.mode == Mode::AlignmentAttraction && f.potential.is_some()
                && !self.allow_heterogeneous_attraction && !f.has_unit_mass_convention() {
                    return Err(Error::Precondition(format!(
                        "flock {a}: attraction requires masses 1/N (set allow_heterogeneous_attraction to override)"
                    )));
                }
        }
        Ok(())
    }

    pub(crate) fn attraction_on(&self) -> bool {
        self.mode == Mode::AlignmentAttraction
    }
}

/// Time derivative of one flock: SoA `dx`, `dv` per agent, plus the flock
/// drift `dX/dt`, `dV/dt`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlockDerivative {
    pub dx: Vec<f64>,
    pub dv: Vec<f64>,
    pub d_center: Vec<f64>,
    pub d_momentum: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Derivative {
    pub flocks: Vec<FlockDerivative>,
}

impl Derivative {
    pub fn is_finite(&self) -> bool {
        self.flocks.iter().all(|f| {
            f.dx.iter().chain(&f.dv).chain(&f.d_center).chain(&f.d_momentum).all(|v| v.is_finite())
        })
    }
}

/// Inter-flock damping `R_α = Σ_{β≠α} M_β ψ(|X_α−X_β|)` and the forcing
/// `S_α = Σ_{β≠α} M_β ψ(|X_α−X_β|) V_β`, so the ε-term of agent `i` is
/// `ε (S_α − R_α v_i)`.
pub fn coupling_terms(macro_obs: &MacroObservables, psi: &KernelSpec) -> (Vec<f64>, Vec<Vec<f64>>) {
    let a_count = macro_obs.flocks.len();
    let dim = macro_obs.global_momentum.len();
    let mut r = vec![0.0; a_count];
    let mut s = vec![vec![0.0; dim]; a_count];
    for (a, fa) in macro_obs.flocks.iter().enumerate() {
        for (b, fb) in macro_obs.flocks.iter().enumerate() {
            if a == b {
                continue;
            }
            let d2: f64 = fa.center.iter().zip(&fb.center).map(|(x, y)| (x - y) * (x - y)).sum();
            let w = fb.mass * psi.value_sq(d2);
            r[a] += w;
            for k in 0..dim {
                s[a][k] += w * fb.momentum[k];
            }
        }
    }
    (r, s)
}

/// Borrowed SoA view of one flock for the pairwise loops.
#[derive(Clone, Copy)]
pub(crate) struct FlockView<'a> {
    pub dim: usize,
    pub pos: &'a [f64],
    pub vel: &'a [f64],
    pub masses: &'a [f64],
    pub kernel: &'a KernelSpec,
    pub lambda: f64,
    pub potential: Option<&'a PotentialSpec>,
}

impl<'a> FlockView<'a> {
    pub(crate) fn of(dim: usize, f: &'a Flock) -> Self {
        Self {
            dim,
            pos: &f.positions,
            vel: &f.velocities,
            masses: &f.masses,
            kernel: &f.kernel,
            lambda: f.lambda,
            potential: f.potential.as_ref(),
        }
    }

    fn len(&self) -> usize {
        self.masses.len()
    }
}

/// Per-agent accelerations of one flock, agent-major (`out[i*dim + k]`).
///
/// `damping` and `forcing` are the flock's `ε R_α` and `ε S_α`. Returns the
/// first colliding pair if a singular kernel meets a zero distance.
pub(crate) fn flock_accel(
    view: FlockView<'_>,
    attraction: bool,
    damping: f64,
    forcing: &[f64],
    out: &mut [f64],
) -> std::result::Result<(), (usize, usize)> {
    let dim = view.dim;
    let n = view.len();
    let singular = view.kernel.is_singular();
    let align = view.lambda != 0.0 && view.kernel.c0 != 0.0;
    let potential = if attraction { view.potential } else { None };
    let agent = |i: usize, acc: &mut [f64]| -> Option<usize> {
        let mut al = [0.0f64; 8];
        let mut at = [0.0f64; 8];
        let mut al_big;
        let mut at_big;
        let (al, at): (&mut [f64], &mut [f64]) = if dim <= 8 {
            (&mut al[..dim], &mut at[..dim])
        } else {
            al_big = vec![0.0; dim];
            at_big = vec![0.0; dim];
            (&mut al_big[..], &mut at_big[..])
        };
        if align || potential.is_some() {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mut r2 = 0.0;
                for k in 0..dim {
                    let d = view.pos[k * n + i] - view.pos[k * n + j];
                    r2 += d * d;
                }
                if align {
                    if singular && r2 == 0.0 {
                        return Some(j);
                    }
                    let c = view.masses[j] * view.kernel.value_sq(r2);
                    for k in 0..dim {
                        al[k] += c * (view.vel[k * n + j] - view.vel[k * n + i]);
                    }
                }
                if let Some(u) = potential {
                    if r2 > 0.0 {
                        let r = r2.sqrt();
                        let up = u.evaluate(r).1;
                        if up != 0.0 {
                            let c = view.masses[j] * up / r;
                            for k in 0..dim {
                                at[k] -= c * (view.pos[k * n + i] - view.pos[k * n + j]);
                            }
                        }
                    }
                }
            }
        }
        for k in 0..dim {
            acc[k] = view.lambda * al[k] + at[k] + (forcing[k] - damping * view.vel[k * n + i]);
        }
        None
    };
    let flags: Vec<Option<usize>> = if n >= PAR_THRESHOLD && dim > 0 {
        out.par_chunks_mut(dim).enumerate().map(|(i, acc)| agent(i, acc)).collect()
    } else {
        out.chunks_mut(dim.max(1)).enumerate().map(|(i, acc)| agent(i, acc)).collect()
    };
    match flags.iter().enumerate().find_map(|(i, f)| f.map(|j| (i, j))) {
        Some((i, j)) => Err((i.min(j), i.max(j))),
        None => Ok(()),
    }
}

fn scatter_soa(dim: usize, n: usize, agent_major: &[f64], out: &mut [f64]) {
    for i in 0..n {
        for k in 0..dim {
            out[k * n + i] = agent_major[i * dim + k];
        }
    }
}

fn momentum_drift(dim: usize, masses: &[f64], dv: &[f64]) -> Vec<f64> {
    let n = masses.len();
    let m: f64 = masses.iter().sum();
    (0..dim)
        .map(|k| dv[k * n..(k + 1) * n].iter().zip(masses).map(|(a, w)| w * a).sum::<f64>() / m)
        .collect()
}

/// Master-equation right-hand side.
///
/// `dv_i = λ_α Σ_j m_j φ_α(|x_i−x_j|)(v_j−v_i) + ε Σ_{β≠α} M_β ψ(|X_α−X_β|)(V_β−v_i)`,
/// plus `−Σ_j m_j U'(r_ij) e_ij` in attraction mode.
pub fn rhs_master(
    state: &MultiFlockState,
    macro_obs: &MacroObservables,
    params: &ModelParams,
) -> Result<Derivative> {
    let dim = state.dim;
    let (r, s) = coupling_terms(macro_obs, &params.psi);
    let eps = params.epsilon;
    let mut flocks = Vec::with_capacity(state.flocks.len());
    for (a, f) in state.flocks.iter().enumerate() {
        let n = f.len();
        let forcing: Vec<f64> = s[a].iter().map(|x| eps * x).collect();
        let mut acc = vec![0.0; n * dim];
        flock_accel(FlockView::of(dim, f), params.attraction_on(), eps * r[a], &forcing, &mut acc)
            .map_err(|(i, j)| Error::Collision { flock: a, i, j })?;
        let mut dv = vec![0.0; n * dim];
        scatter_soa(dim, n, &acc, &mut dv);
        flocks.push(FlockDerivative {
            dx: f.velocities.clone(),
            d_center: macro_obs.flocks[a].momentum.clone(),
            d_momentum: momentum_drift(dim, &f.masses, &dv),
            dv,
        });
    }
    Ok(Derivative { flocks })
}

/// Super-agent right-hand side: `dX_α = V_α`,
/// `dV_α = ε Σ_{β≠α} M_β ψ(|X_α−X_β|)(V_β−V_α)`.
pub fn rhs_superagent(macro_obs: &MacroObservables, params: &ModelParams) -> Derivative {
    let (r, s) = coupling_terms(macro_obs, &params.psi);
    let flocks = macro_obs
        .flocks
        .iter()
        .enumerate()
        .map(|(a, f)| FlockDerivative {
            dx: Vec::new(),
            dv: Vec::new(),
            d_center: f.momentum.clone(),
            d_momentum: f
                .momentum
                .iter()
                .zip(&s[a])
                .map(|(v, sk)| params.epsilon * (sk - r[a] * v))
                .collect(),
        })
        .collect();
    Derivative { flocks }
}

/// Attraction forces `F_i = −Σ_j m_j U'(|x_i−x_j|) (x_i−x_j)/|x_i−x_j|`,
/// which is the `1/N_α`-weighted sum under the unit-mass convention.
pub fn attraction_force(dim: usize, flock: &Flock) -> Result<Vec<Vec<f64>>> {
    if flock.potential.is_none() {
        return Err(Error::Precondition("flock has no attraction potential".into()));
    }
    let view = FlockView { kernel: &KernelSpec::constant(0.0), lambda: 0.0, ..FlockView::of(dim, flock) };
    let mut acc = vec![0.0; flock.len() * dim];
    flock_accel(view, true, 0.0, &vec![0.0; dim], &mut acc).expect("no alignment term, no collision check");
    Ok(acc.chunks(dim.max(1)).map(<[f64]>::to_vec).collect())
}

/// Shifted-frame right-hand side:
/// `dw_i = λ_α Σ_j m_j φ_α(|y_i−y_j|)(w_j−w_i) − ε R_α w_i`.
/// `dx` carries `dy/dt = w`.
pub fn rhs_shifted(
    shifted: &ShiftedState,
    macro_obs: &MacroObservables,
    params: &ModelParams,
) -> Result<Derivative> {
    let dim = shifted.dim;
    let (r, _) = coupling_terms(macro_obs, &params.psi);
    let zero = vec![0.0; dim];
    let mut flocks = Vec::with_capacity(shifted.flocks.len());
    for (a, f) in shifted.flocks.iter().enumerate() {
        let n = f.masses.len();
        let view = FlockView {
            dim,
            pos: &f.y,
            vel: &f.w,
            masses: &f.masses,
            kernel: &f.kernel,
            lambda: f.lambda,
            potential: f.potential.as_ref(),
        };
        let mut acc = vec![0.0; n * dim];
        flock_accel(view, params.attraction_on(), params.epsilon * r[a], &zero, &mut acc)
            .map_err(|(i, j)| Error::Collision { flock: a, i, j })?;
        let mut dv = vec![0.0; n * dim];
        scatter_soa(dim, n, &acc, &mut dv);
        flocks.push(FlockDerivative {
            dx: f.w.clone(),
            d_center: macro_obs.flocks[a].momentum.clone(),
            d_momentum: momentum_drift(dim, &f.masses, &dv),
            dv,
        });
    }
    Ok(Derivative { flocks })
}

/// Collapses every flock to a single agent of mass `M_α` at `(X_α, V_α)`.
pub fn superagent_state(state: &MultiFlockState) -> MultiFlockState {
    let flocks = state
        .flocks
        .iter()
        .enumerate()
        .map(|(a, f)| collapse_flock(&state.flock_macro(a), f))
        .collect();
    MultiFlockState { dim: state.dim, flocks, time: state.time }
}

pub(crate) fn collapse_flock(m: &FlockMacro, f: &Flock) -> Flock {
    Flock {
        positions: m.center.clone(),
        velocities: m.momentum.clone(),
        masses: vec![m.mass],
        kernel: f.kernel.clone(),
        lambda: f.lambda,
        potential: f.potential,
    }
}

/// Master equation over a packed state vector: per flock, positions then
/// velocities, each in the SoA layout of [`Flock`].
pub struct MasterSystem<'a> {
    template: &'a MultiFlockState,
    params: &'a ModelParams,
    offsets: Vec<usize>,
    masses: Vec<f64>,
}

impl<'a> MasterSystem<'a> {
    pub fn new(template: &'a MultiFlockState, params: &'a ModelParams) -> Self {
        let mut offsets = Vec::with_capacity(template.flocks.len() + 1);
        let mut off = 0;
        for f in &template.flocks {
            offsets.push(off);
            off += 2 * template.dim * f.len();
        }
        offsets.push(off);
        let masses = template.flocks.iter().map(Flock::mass).collect();
        Self { template, params, offsets, masses }
    }

    pub fn pack(&self, state: &MultiFlockState) -> Vec<f64> {
        let mut y = Vec::with_capacity(*self.offsets.last().unwrap_or(&0));
        for f in &state.flocks {
            y.extend_from_slice(&f.positions);
            y.extend_from_slice(&f.velocities);
        }
        y
    }

    pub fn unpack(&self, t: f64, y: &[f64]) -> MultiFlockState {
        let mut state = self.template.clone();
        state.time = t;
        for (a, f) in state.flocks.iter_mut().enumerate() {
            let (p, v) = self.split(a, y);
            f.positions.copy_from_slice(p);
            f.velocities.copy_from_slice(v);
        }
        state
    }

    /// Position and velocity blocks of flock `a` inside a packed vector.
    pub fn split<'y>(&self, a: usize, y: &'y [f64]) -> (&'y [f64], &'y [f64]) {
        let lo = self.offsets[a];
        let half = (self.offsets[a + 1] - lo) / 2;
        (&y[lo..lo + half], &y[lo + half..lo + 2 * half])
    }

    pub fn num_flocks(&self) -> usize {
        self.template.flocks.len()
    }

    pub fn flock_len(&self, a: usize) -> usize {
        self.template.flocks[a].len()
    }

    pub fn dim(&self) -> usize {
        self.template.dim
    }

    pub fn macro_from(&self, y: &[f64]) -> MacroObservables {
        let dim = self.template.dim;
        let flocks = (0..self.num_flocks())
            .map(|a| {
                let (p, v) = self.split(a, y);
                let masses = &self.template.flocks[a].masses;
                let n = masses.len();
                let mean = |c: &[f64]| -> Vec<f64> {
                    (0..dim)
                        .map(|k| {
                            c[k * n..(k + 1) * n].iter().zip(masses).map(|(x, m)| m * x).sum::<f64>()
                                / self.masses[a]
                        })
                        .collect()
                };
                FlockMacro { mass: self.masses[a], center: mean(p), momentum: mean(v) }
            })
            .collect();
        MacroObservables::from_flocks(dim, flocks)
    }

    /// Agents of flock `a` that are kernel-singular (for the collision guard).
    pub fn singular_flock(&self, a: usize) -> bool {
        self.template.flocks[a].kernel.is_singular()
    }
}

impl OdeSystem for MasterSystem<'_> {
    fn len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let dim = self.template.dim;
        let macro_obs = self.macro_from(y);
        let (r, s) = coupling_terms(&macro_obs, &self.params.psi);
        let eps = self.params.epsilon;
        let mut acc = Vec::new();
        for (a, f) in self.template.flocks.iter().enumerate() {
            let n = f.len();
            let (p, v) = self.split(a, y);
            let view = FlockView { pos: p, vel: v, ..FlockView::of(dim, f) };
            let forcing: Vec<f64> = s[a].iter().map(|x| eps * x).collect();
            acc.clear();
            acc.resize(n * dim, 0.0);
            flock_accel(view, self.params.attraction_on(), eps * r[a], &forcing, &mut acc)
                .map_err(|(i, j)| Error::Collision { flock: a, i, j })?;
            let lo = self.offsets[a];
            let half = n * dim;
            dy[lo..lo + half].copy_from_slice(v);
            scatter_soa(dim, n, &acc, &mut dy[lo + half..lo + 2 * half]);
        }
        Ok(())
    }
}
