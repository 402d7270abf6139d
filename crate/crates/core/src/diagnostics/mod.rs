//! Functionals of a multi-flock state: diameters, amplitudes, energies,
//! dissipation, envelopes and fitted rates.
//!
//! Energies use the mass-weighted normalization
//! `K_α = (1/2M_α) Σ m_i |w_i|²`, `P_α = (1/2M_α) Σ m_i m_j U(|y_ij|)`,
//! `I_α = (λ_α/2M_α) Σ m_i m_j φ_ij |w_ij|²`, which reduce to the `1/N_α`
//! forms when `m_i = 1/N_α`. With these, `dE_α/dt = −I_α − 2εR_α K_α`.

mod envelope;
mod fit;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use envelope::{lyapunov, odi_envelope, solve_flock_bound, Envelope, FlockBound, OdiFlock, OdiInitial, OdiModel};
pub use fit::{
    algebraic_decay_check, default_window, diameter_growth_bound, diameter_growth_check, fit_decay_rate, fit_linear,
    AlgebraicFit, GrowthFit, LinearFit, RateEstimate, ALGEBRAIC_SLACK, MIN_FIT_SAMPLES,
};

use crate::dynamics::{coupling_terms, Mode, ModelParams};
use crate::mfstate::{pair_dist_sq, MultiFlockState};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlockRecord {
    pub diameter: f64,
    pub amplitude: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub energy: f64,
    pub dissipation: f64,
    /// `R_α`
    pub damping: f64,
    /// `max_i E_αi`, `E_αi = ½|w_i|² + Σ_k m_k U(|y_ik|)`.
    pub max_particle_energy: f64,
    /// `max_i |v_i − V_α|`
    pub max_deviation: f64,
    /// `(1/M_α) Σ m_i y_i·w_i`
    pub corrector: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalRecord {
    /// `max |X_α − X_β|`
    pub diameter: f64,
    /// `max |V_α − V_β|`
    pub amplitude: f64,
    /// `max_{α,i} |v_αi − V|`
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub flocks: Vec<FlockRecord>,
    pub global: GlobalRecord,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn pairwise_max(points: &[Vec<f64>]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.max(dist(&points[i], &points[j]));
        }
    }
    best
}

pub fn compute_record(state: &MultiFlockState, params: &ModelParams) -> DiagnosticsRecord {
    let dim = state.dim;
    let macro_obs = state.macro_observables();
    let (r, _) = coupling_terms(&macro_obs, &params.psi);
    let attraction = params.mode == Mode::AlignmentAttraction;
    let shifted = state.to_shifted_frame();
    let mut flocks = Vec::with_capacity(state.flocks.len());
    let mut global_dev = 0.0f64;
    for (a, (f, sh)) in state.flocks.iter().zip(&shifted.flocks).enumerate() {
        let n = f.len();
        let mass = f.mass();
        let potential = if attraction { f.potential } else { None };
        let mut rec = FlockRecord { damping: r[a], ..Default::default() };
        let mut diam2 = 0.0f64;
        let mut amp2 = 0.0f64;
        let mut kin = 0.0;
        let mut pot = 0.0;
        let mut diss = 0.0;
        let mut corr = 0.0;
        for i in 0..n {
            let w2: f64 = (0..dim).map(|k| sh.w[k * n + i].powi(2)).sum();
            kin += f.masses[i] * w2;
            corr += f.masses[i] * (0..dim).map(|k| sh.y[k * n + i] * sh.w[k * n + i]).sum::<f64>();
            rec.max_deviation = rec.max_deviation.max(w2.sqrt());
            let dv: f64 = (0..dim).map(|k| (f.velocities[k * n + i] - macro_obs.global_momentum[k]).powi(2)).sum();
            global_dev = global_dev.max(dv.sqrt());
            let mut u_i = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let x2 = pair_dist_sq(&f.positions, n, dim, i, j);
                let v2 = pair_dist_sq(&f.velocities, n, dim, i, j);
                diam2 = diam2.max(x2);
                amp2 = amp2.max(v2);
                if x2 > 0.0 || !f.kernel.is_singular() {
                    diss += f.masses[i] * f.masses[j] * f.kernel.value_sq(x2) * v2;
                }
                if let Some(u) = &potential {
                    let uij = u.evaluate(x2.sqrt()).0;
                    pot += f.masses[i] * f.masses[j] * uij;
                    u_i += f.masses[j] * uij;
                }
            }
            rec.max_particle_energy = rec.max_particle_energy.max(0.5 * w2 + u_i);
        }
        rec.diameter = diam2.sqrt();
        rec.amplitude = amp2.sqrt();
        rec.kinetic = kin / (2.0 * mass);
        rec.potential = pot / (2.0 * mass);
        rec.energy = rec.kinetic + rec.potential;
        rec.dissipation = f.lambda * diss / (2.0 * mass);
        rec.corrector = corr / mass;
        flocks.push(rec);
    }
    let centers: Vec<Vec<f64>> = macro_obs.flocks.iter().map(|m| m.center.clone()).collect();
    let momenta: Vec<Vec<f64>> = macro_obs.flocks.iter().map(|m| m.momentum.clone()).collect();
    DiagnosticsRecord {
        time: state.time,
        flocks,
        global: GlobalRecord {
            diameter: pairwise_max(&centers),
            amplitude: pairwise_max(&momenta),
            max_deviation: global_dev,
        },
    }
}

/// Centered-difference residual of `dE_α/dt + I_α + 2εR_α K_α`, maximized
/// over flocks, at every interior sample. Samples must be uniform in time.
pub fn energy_law_residual(trajectory: &[MultiFlockState], params: &ModelParams) -> Result<Vec<(f64, f64)>> {
    if trajectory.len() < 3 {
        return Err(Error::Invalid(format!("energy law residual needs >= 3 samples, got {}", trajectory.len())));
    }
    let dt = trajectory[1].time - trajectory[0].time;
    if !(dt > 0.0) || trajectory.windows(2).any(|w| ((w[1].time - w[0].time) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(Error::Invalid("energy law residual needs uniformly spaced samples".into()));
    }
    let recs: Vec<DiagnosticsRecord> = trajectory.iter().map(|s| compute_record(s, params)).collect();
    let eps = params.epsilon;
    Ok((1..recs.len() - 1)
        .map(|k| {
            let worst = (0..recs[k].flocks.len())
                .map(|a| {
                    let de = (recs[k + 1].flocks[a].energy - recs[k - 1].flocks[a].energy) / (2.0 * dt);
                    let f = &recs[k].flocks[a];
                    (de + f.dissipation + 2.0 * eps * f.damping * f.kinetic).abs()
                })
                .fold(0.0, f64::max);
            (recs[k].time, worst)
        })
        .collect())
}

/// Collision energy of a flock around its closest pair `(i, j)`:
/// `A* + C₂ ∫_{D*}^1 φ(r) dr` with `D* = |x_i − x_j|`, `A* = |v_i − v_j|`
/// and `C₂ = λ_α (m_i + m_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEnergy {
    pub pair: (usize, usize),
    pub a_star: f64,
    pub d_star: f64,
    pub value: f64,
}

pub fn collision_energy(state: &MultiFlockState, alpha: usize) -> Result<Option<CollisionEnergy>> {
    let f = state
        .flocks
        .get(alpha)
        .ok_or_else(|| Error::Invalid(format!("no flock {alpha}")))?;
    let n = f.len();
    let dim = state.dim;
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let r2 = pair_dist_sq(&f.positions, n, dim, i, j);
            if best.is_none_or(|b| r2 < b.0) {
                best = Some((r2, i, j));
            }
        }
    }
    let Some((r2, i, j)) = best else { return Ok(None) };
    let d_star = r2.sqrt();
    let a_star = pair_dist_sq(&f.velocities, n, dim, i, j).sqrt();
    let c2 = f.lambda * (f.masses[i] + f.masses[j]);
    let integral = if d_star < 1.0 {
        f.kernel.tail_integral(d_star, 1.0)?
    } else if d_star > 1.0 {
        -f.kernel.tail_integral(1.0, d_star)?
    } else {
        0.0
    };
    Ok(Some(CollisionEnergy { pair: (i, j), a_star, d_star, value: a_star + c2 * integral }))
}

/// `max_{i,j} |Δx_ij(t) − Δx_ij(t_end)|` for each sample of one flock.
pub fn displacement_deviation(trajectory: &[MultiFlockState], alpha: usize) -> Vec<f64> {
    let Some(last) = trajectory.last() else { return Vec::new() };
    let dim = last.dim;
    let fl = &last.flocks[alpha];
    let n = fl.len();
    trajectory
        .iter()
        .map(|s| {
            let f = &s.flocks[alpha];
            let mut worst = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    let mut e2 = 0.0;
                    for k in 0..dim {
                        let now = f.positions[k * n + i] - f.positions[k * n + j];
                        let end = fl.positions[k * n + i] - fl.positions[k * n + j];
                        e2 += (now - end) * (now - end);
                    }
                    worst = worst.max(e2);
                }
            }
            worst.sqrt()
        })
        .collect()
}

const FLOCK_COLUMNS: [&str; 10] = [
    "diameter",
    "amplitude",
    "kinetic",
    "potential",
    "energy",
    "dissipation",
    "damping",
    "max_particle_energy",
    "max_deviation",
    "corrector",
];

/// Wide CSV: one row per record, global columns first, then
/// `<field>_<flock>` for every flock field.
pub fn write_csv<W: Write>(records: &[DiagnosticsRecord], mut out: W) -> Result<()> {
    let flocks = records.first().map_or(0, |r| r.flocks.len());
    let mut header = vec!["time".to_string(), "diameter".into(), "amplitude".into(), "max_deviation".into()];
    for a in 0..flocks {
        header.extend(FLOCK_COLUMNS.iter().map(|c| format!("{c}_{a}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![r.time, r.global.diameter, r.global.amplitude, r.global.max_deviation];
        for f in &r.flocks {
            row.extend([
                f.diameter,
                f.amplitude,
                f.kinetic,
                f.potential,
                f.energy,
                f.dissipation,
                f.damping,
                f.max_particle_energy,
                f.max_deviation,
                f.corrector,
            ]);
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Column of one flock field across records, by CSV column name stem.
pub fn flock_series(records: &[DiagnosticsRecord], alpha: usize, field: &str) -> Option<Vec<f64>> {
    let pick: fn(&FlockRecord) -> f64 = match field {
        "diameter" => |f| f.diameter,
        "amplitude" => |f| f.amplitude,
        "kinetic" => |f| f.kinetic,
        "potential" => |f| f.potential,
        "energy" => |f| f.energy,
        "dissipation" => |f| f.dissipation,
        "damping" => |f| f.damping,
        "max_particle_energy" => |f| f.max_particle_energy,
        "max_deviation" => |f| f.max_deviation,
        "corrector" => |f| f.corrector,
        _ => return None,
    };
    Some(records.iter().map(|r| pick(&r.flocks[alpha])).collect())
}
