//! Initial-state samplers.
//!
//! Random samplers draw from ChaCha20 keyed by the 64-bit seed (little-endian
//! in the first 8 key bytes, remaining bytes zero) on stream `α` for flock
//! `α`. A uniform variate is `(u64 >> 11 + 1)·2⁻⁵³ ∈ (0, 1]`; normals come from
//! Box–Muller using both outputs of each pair, in order.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::{FlockConfig, HydroConfig, Scenario};
use crate::hydro1d::{init_from_profiles, HydroFlock1D, ProfileGrid};
use crate::mfstate::{Flock, MultiFlockState};
use crate::{Error, Result};

/// Normal variates from a seeded ChaCha20 stream.
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (u1, u2) = (self.uniform(), self.uniform());
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * th.sin());
        r * th.cos()
    }
}

fn or_zero(v: &[f64], d: usize) -> Vec<f64> {
    if v.is_empty() {
        vec![0.0; d]
    } else {
        v.to_vec()
    }
}

fn masses(f: &FlockConfig) -> Vec<f64> {
    match f.mass.law.as_str() {
        "equal" => vec![f.mass.total.unwrap_or(1.0) / f.size as f64; f.size],
        "table" => f.mass.values.clone(),
        _ => vec![1.0; f.size],
    }
}

fn sample_points(f: &FlockConfig, d: usize, seed: Option<u64>, stream: u64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let s = &f.sampler;
    let n = f.size;
    let center = or_zero(&s.center, d);
    let vel = or_zero(&s.velocity, d);
    let need_seed = || seed.ok_or_else(|| Error::Config(format!("sampler '{}' needs a seed", s.kind)));
    let mut xs = Vec::with_capacity(n);
    let mut vs = Vec::with_capacity(n);
    match s.kind.as_str() {
        "grid" => {
            let side = (1..).find(|k: &usize| k.pow(d as u32) >= n).unwrap_or(1);
            let half = (side as f64 - 1.0) / 2.0;
            for idx in 0..n {
                let mut rest = idx;
                let x: Vec<f64> = (0..d)
                    .map(|k| {
                        let c = rest % side;
                        rest /= side;
                        center[k] + s.spacing * (c as f64 - half)
                    })
                    .collect();
                let v = (0..d).map(|k| vel[k] + s.shear * (x[k] - center[k])).collect();
                xs.push(x);
                vs.push(v);
            }
        }
        "gaussian_blob" => {
            let mut g = NormalStream::new(need_seed()?, stream);
            for _ in 0..n {
                xs.push((0..d).map(|k| center[k] + s.spread * g.normal()).collect());
                vs.push((0..d).map(|k| vel[k] + s.velocity_spread * g.normal()).collect());
            }
        }
        "two_cluster" => {
            let mut g = NormalStream::new(need_seed()?, stream);
            for i in 0..n {
                // first half on the left moving right, second half mirrored
                let side = if i < n / 2 { -1.0 } else { 1.0 };
                xs.push(
                    (0..d)
                        .map(|k| {
                            let shift = if k == 0 { side * s.separation / 2.0 } else { 0.0 };
                            center[k] + shift + s.spread * g.normal()
                        })
                        .collect(),
                );
                vs.push(
                    (0..d)
                        .map(|k| {
                            let closing = if k == 0 { -side * s.approach_speed / 2.0 } else { 0.0 };
                            vel[k] + closing + s.velocity_spread * g.normal()
                        })
                        .collect(),
                );
            }
        }
        "custom_table" => {
            xs = s.positions.clone();
            vs = s.velocities.clone();
        }
        other => return Err(Error::Config(format!("unknown sampler '{other}'"))),
    }
    Ok((xs, vs))
}

/// Builds the initial agent state of a validated scenario.
pub fn initial_state(s: &Scenario) -> Result<MultiFlockState> {
    let d = s.dimension;
    let mut problems = Vec::new();
    let mut flocks = Vec::with_capacity(s.flocks.len());
    for (a, f) in s.flocks.iter().enumerate() {
        let Some(kernel) = f.kernel.to_spec(&format!("flocks[{a}].kernel"), &mut problems) else {
            continue;
        };
        let (xs, vs) = sample_points(f, d, f.seed.or(s.seed), a as u64)?;
        let mut flock = Flock::from_points(d, &xs, &vs, masses(f), kernel, f.lambda);
        if let Some(u) = f.potential {
            flock = flock.with_potential(u);
        }
        flocks.push(flock);
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    Ok(MultiFlockState::new(d, flocks))
}

/// Builds the hydro flocks of a validated hydro scenario.
pub fn initial_hydro(h: &HydroConfig) -> Result<Vec<HydroFlock1D>> {
    let mut problems = Vec::new();
    let mut out = Vec::with_capacity(h.flocks.len());
    for (a, f) in h.flocks.iter().enumerate() {
        let Some(kernel) = f.kernel.to_spec(&format!("hydro.flocks[{a}].kernel"), &mut problems) else {
            continue;
        };
        let d = &f.density;
        let grid = ProfileGrid::new(d.center - d.half_width, d.center + d.half_width, h.grid_points);
        let c = d.center;
        out.push(init_from_profiles(
            |x| d.density(x),
            |x| f.velocity.velocity(c, x),
            grid,
            f.particles,
            kernel,
            f.lambda,
        )?);
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    Ok(out)
}
