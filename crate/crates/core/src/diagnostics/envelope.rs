//! Scalar comparison systems: the amplitude/diameter envelope, flock-size
//! bounds and the Lyapunov functional of the super-agent system.

use serde::{Deserialize, Serialize};

use super::DiagnosticsRecord;
use crate::dynamics::ModelParams;
use crate::integrate::{solve, IntegratorSpec, OdeSystem, Termination};
use crate::kernels::KernelSpec;
use crate::mfstate::MultiFlockState;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlockBound {
    /// `D̄`; infinite when not solvable.
    pub d_bar: f64,
    pub solvable: bool,
}

/// Solves `coupling · ∫_{D₀}^{D̄} kernel(r) dr = A₀` for `D̄` by bisection.
///
/// Solvable iff the tail mass `coupling · ∫_{D₀}^∞ kernel` exceeds `A₀`,
/// which always holds for fat tails.
pub fn solve_flock_bound(kernel: &KernelSpec, coupling: f64, d0: f64, a0: f64) -> Result<FlockBound> {
    if !(coupling > 0.0) {
        return Err(Error::Invalid(format!("coupling must be positive, got {coupling}")));
    }
    if !(d0 >= 0.0 && a0 >= 0.0) {
        return Err(Error::Invalid(format!("D0 and A0 must be nonnegative, got {d0}, {a0}")));
    }
    if a0 == 0.0 {
        return Ok(FlockBound { d_bar: d0, solvable: true });
    }
    let mass = |b: f64| -> Result<f64> { Ok(coupling * kernel.tail_integral(d0, b)?) };
    if mass(f64::INFINITY)? <= a0 {
        return Ok(FlockBound { d_bar: f64::INFINITY, solvable: false });
    }
    let mut lo = d0;
    let mut hi = d0 + 1.0;
    while mass(hi)? < a0 {
        lo = hi;
        hi = d0 + 2.0 * (hi - d0);
        if !hi.is_finite() {
            return Err(Error::Numerical("flock bound bracket overflowed".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
        if mass(mid)? < a0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let d_bar = 0.5 * (lo + hi);
    if !d_bar.is_finite() {
        return Err(Error::Numerical("flock bound bisection diverged".into()));
    }
    Ok(FlockBound { d_bar, solvable: true })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdiFlock {
    pub lambda: f64,
    pub mass: f64,
    pub kernel: KernelSpec,
}

/// Coefficients of the envelope system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdiModel {
    pub flocks: Vec<OdiFlock>,
    pub total_mass: f64,
    pub epsilon: f64,
    pub psi: KernelSpec,
}

impl OdiModel {
    pub fn from_state(state: &MultiFlockState, params: &ModelParams) -> Self {
        let flocks: Vec<OdiFlock> = state
            .flocks
            .iter()
            .map(|f| OdiFlock { lambda: f.lambda, mass: f.mass(), kernel: f.kernel.clone() })
            .collect();
        let total_mass = flocks.iter().map(|f| f.mass).sum();
        Self { flocks, total_mass, epsilon: params.epsilon, psi: params.psi.clone() }
    }
}

/// Initial amplitudes and diameters `(A_α, D_α)` per flock and `(A, D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdiInitial {
    pub flocks: Vec<(f64, f64)>,
    pub amplitude: f64,
    pub diameter: f64,
}

impl OdiInitial {
    pub fn from_record(r: &DiagnosticsRecord) -> Self {
        Self {
            flocks: r.flocks.iter().map(|f| (f.amplitude, f.diameter)).collect(),
            amplitude: r.global.amplitude,
            diameter: r.global.diameter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Envelope {
    pub times: Vec<f64>,
    /// `[flock][sample]`
    pub flock_amplitude: Vec<Vec<f64>>,
    pub flock_diameter: Vec<Vec<f64>>,
    pub amplitude: Vec<f64>,
    pub diameter: Vec<f64>,
}

struct OdiSystem<'a>(&'a OdiModel);

impl OdeSystem for OdiSystem<'_> {
    fn len(&self) -> usize {
        2 * self.0.flocks.len() + 2
    }

    // y = [A_0, D_0, A_1, D_1, …, A, D]
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let m = self.0;
        let g = 2 * m.flocks.len();
        let psi_d = m.psi.value(y[g + 1].max(0.0));
        for (a, f) in m.flocks.iter().enumerate() {
            let (amp, diam) = (y[2 * a], y[2 * a + 1]);
            let inner = f.lambda * f.mass * f.kernel.value(diam.max(0.0));
            let outer = m.epsilon * (m.total_mass - f.mass) * psi_d;
            dy[2 * a] = -(inner + outer) * amp;
            dy[2 * a + 1] = amp;
        }
        dy[g] = -m.epsilon * m.total_mass * psi_d * y[g];
        dy[g + 1] = y[g];
        Ok(())
    }
}

/// Integrates the equality version of the amplitude/diameter inequalities:
///
/// `A_α' = −λ_α M_α φ_α(D_α) A_α − ε (M − M_α) ψ(D) A_α`, `D_α' = A_α`,
/// `A' = −ε M ψ(D) A`, `D' = A`.
///
/// The inter-flock damping of flock `α` is `R_α = Σ_{β≠α} M_β ψ(|X_α − X_β|)`,
/// bounded below by `(M − M_α) ψ(D)`, which is the coefficient used here.
pub fn odi_envelope(model: &OdiModel, init: &OdiInitial, times: &[f64]) -> Result<Envelope> {
    if init.flocks.len() != model.flocks.len() {
        return Err(Error::Invalid("initial data and model disagree on the flock count".into()));
    }
    let neg = init.flocks.iter().any(|&(a, d)| !(a >= 0.0 && d >= 0.0));
    if neg || !(init.amplitude >= 0.0 && init.diameter >= 0.0) {
        return Err(Error::Invalid("envelope initial values must be nonnegative".into()));
    }
    if times.is_empty() {
        return Ok(Envelope::default());
    }
    let mut y0: Vec<f64> = init.flocks.iter().flat_map(|&(a, d)| [a, d]).collect();
    y0.extend([init.amplitude, init.diameter]);
    let t_end = times.last().copied().unwrap_or(0.0);
    let mut env = Envelope {
        times: times.to_vec(),
        flock_amplitude: vec![Vec::new(); model.flocks.len()],
        flock_diameter: vec![Vec::new(); model.flocks.len()],
        ..Default::default()
    };
    let states = if t_end > times[0] {
        let spec = IntegratorSpec::adaptive(t_end).with_tolerances(1e-11, 1e-13);
        let sol = solve(&OdiSystem(model), times[0], &y0, &spec, times)?;
        if let Termination::Failed(e) = sol.termination {
            return Err(e);
        }
        sol.states
    } else {
        vec![y0; times.len()]
    };
    let g = 2 * model.flocks.len();
    for y in &states {
        for a in 0..model.flocks.len() {
            env.flock_amplitude[a].push(y[2 * a]);
            env.flock_diameter[a].push(y[2 * a + 1]);
        }
        env.amplitude.push(y[g]);
        env.diameter.push(y[g + 1]);
    }
    Ok(env)
}

/// `L(t) = A(t) + coupling · ∫₀^{D(t)} ψ`, non-increasing along the
/// super-agent system with `coupling = ε M`.
pub fn lyapunov(amplitude: f64, diameter: f64, coupling: f64, psi: &KernelSpec) -> Result<f64> {
    let integral = if diameter > 0.0 { psi.tail_integral(0.0, diameter)? } else { 0.0 };
    Ok(amplitude + coupling * integral)
}
