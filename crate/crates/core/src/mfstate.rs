//! Multi-flock phase state.
//!
//! Coordinates are stored structure-of-arrays: for a flock of `n` agents in
//! dimension `d`, component `k` of agent `i` lives at `k * n + i`, so each
//! coordinate is one contiguous slice.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::kernels::{KernelSpec, PotentialSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Flock {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub masses: Vec<f64>,
    pub kernel: KernelSpec,
    /// Intra-flock amplitude `λ_α`.
    pub lambda: f64,
    pub potential: Option<PotentialSpec>,
}

impl Flock {
    /// Builds a flock from per-agent point lists (array-of-structs input).
    pub fn from_points(
        dim: usize,
        positions: &[Vec<f64>],
        velocities: &[Vec<f64>],
        masses: Vec<f64>,
        kernel: KernelSpec,
        lambda: f64,
    ) -> Self {
        Self {
            positions: to_soa(dim, positions),
            velocities: to_soa(dim, velocities),
            masses,
            kernel,
            lambda,
            potential: None,
        }
    }

    pub fn with_potential(mut self, potential: PotentialSpec) -> Self {
        self.potential = Some(potential);
        self
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn position(&self, dim: usize, i: usize) -> Vec<f64> {
        let n = self.len();
        (0..dim).map(|k| self.positions[k * n + i]).collect()
    }

    pub fn velocity(&self, dim: usize, i: usize) -> Vec<f64> {
        let n = self.len();
        (0..dim).map(|k| self.velocities[k * n + i]).collect()
    }

    /// True when every mass equals `1/N` (the attraction-mode normalization).
    pub fn has_unit_mass_convention(&self) -> bool {
        let n = self.len() as f64;
        self.masses.iter().all(|&m| (m * n - 1.0).abs() <= 1e-12)
    }
}

pub(crate) fn to_soa(dim: usize, points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut out = vec![0.0; dim * n];
    for (i, p) in points.iter().enumerate() {
        for k in 0..dim.min(p.len()) {
            out[k * n + i] = p[k];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiFlockState {
    pub dim: usize,
    pub flocks: Vec<Flock>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlockMacro {
    pub mass: f64,
    pub center: Vec<f64>,
    pub momentum: Vec<f64>,
}

/// Per-flock `(M_α, X_α, V_α)` plus the global mass and momentum average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroObservables {
    pub flocks: Vec<FlockMacro>,
    pub total_mass: f64,
    pub global_momentum: Vec<f64>,
}

impl MacroObservables {
    /// Assembles the global part from per-flock values.
    pub fn from_flocks(dim: usize, flocks: Vec<FlockMacro>) -> Self {
        let total_mass: f64 = flocks.iter().map(|f| f.mass).sum();
        let mut global = vec![0.0; dim];
        for f in &flocks {
            for k in 0..dim {
                global[k] += f.mass * f.momentum[k];
            }
        }
        if total_mass > 0.0 {
            global.iter_mut().for_each(|g| *g /= total_mass);
        }
        Self { flocks, total_mass, global_momentum: global }
    }

    pub fn len(&self) -> usize {
        self.flocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flocks.is_empty()
    }
}

/// Flock-centred coordinates `y = x - X_α`, `w = v - V_α`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedFlock {
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub masses: Vec<f64>,
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub potential: Option<PotentialSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedState {
    pub dim: usize,
    pub flocks: Vec<ShiftedFlock>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    Cardinality,
    Positivity,
    Finiteness,
    Dimension,
    Parameter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub flock: Option<usize>,
    pub agent: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.flock, self.agent) {
            (Some(a), Some(i)) => write!(f, "flock {a}, agent {i}: {}", self.message),
            (Some(a), None) => write!(f, "flock {a}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

fn weighted_mean(dim: usize, n: usize, masses: &[f64], coords: &[f64], total: f64) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            let s: f64 = coords[k * n..(k + 1) * n].iter().zip(masses).map(|(x, m)| m * x).sum();
            s / total
        })
        .collect()
}

impl MultiFlockState {
    pub fn new(dim: usize, flocks: Vec<Flock>) -> Self {
        Self { dim, flocks, time: 0.0 }
    }

    pub fn num_flocks(&self) -> usize {
        self.flocks.len()
    }

    pub fn num_agents(&self) -> usize {
        self.flocks.iter().map(Flock::len).sum()
    }

    pub fn flock_macro(&self, alpha: usize) -> FlockMacro {
        let f = &self.flocks[alpha];
        let n = f.len();
        let mass = f.mass();
        FlockMacro {
            mass,
            center: weighted_mean(self.dim, n, &f.masses, &f.positions, mass),
            momentum: weighted_mean(self.dim, n, &f.masses, &f.velocities, mass),
        }
    }

    pub fn macro_observables(&self) -> MacroObservables {
        let flocks = (0..self.flocks.len()).map(|a| self.flock_macro(a)).collect();
        MacroObservables::from_flocks(self.dim, flocks)
    }

    pub fn to_shifted_frame(&self) -> ShiftedState {
        let macros = self.macro_observables();
        let flocks = self
            .flocks
            .iter()
            .zip(&macros.flocks)
            .map(|(f, m)| {
                let n = f.len();
                let mut y = f.positions.clone();
                let mut w = f.velocities.clone();
                for k in 0..self.dim {
                    y[k * n..(k + 1) * n].iter_mut().for_each(|v| *v -= m.center[k]);
                    w[k * n..(k + 1) * n].iter_mut().for_each(|v| *v -= m.momentum[k]);
                }
                ShiftedFlock {
                    y,
                    w,
                    masses: f.masses.clone(),
                    kernel: f.kernel.clone(),
                    lambda: f.lambda,
                    potential: f.potential,
                }
            })
            .collect();
        ShiftedState { dim: self.dim, flocks }
    }

    /// Lists every broken invariant; empty iff the state is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let d = self.dim;
        if d == 0 {
            out.push(Violation {
                flock: None,
                agent: None,
                kind: ViolationKind::Dimension,
                message: "dimension must be positive".into(),
            });
            return out;
        }
        for (a, f) in self.flocks.iter().enumerate() {
            let n = f.masses.len();
            if n == 0 {
                out.push(Violation {
                    flock: Some(a),
                    agent: None,
                    kind: ViolationKind::Cardinality,
                    message: "cardinality: flock has no agents".into(),
                });
                continue;
            }
            if f.positions.len() != d * n || f.velocities.len() != d * n {
                out.push(Violation {
                    flock: Some(a),
                    agent: None,
                    kind: ViolationKind::Cardinality,
                    message: format!(
                        "cardinality: {} masses but {} position and {} velocity coordinates (dimension {d})",
                        n,
                        f.positions.len(),
                        f.velocities.len()
                    ),
                });
                continue;
            }
            for (i, &m) in f.masses.iter().enumerate() {
                if !(m > 0.0) || !m.is_finite() {
                    out.push(Violation {
                        flock: Some(a),
                        agent: Some(i),
                        kind: ViolationKind::Positivity,
                        message: format!("positivity: mass must be strictly positive and finite, got {m}"),
                    });
                }
            }
            for i in 0..n {
                let bad = (0..d).any(|k| !f.positions[k * n + i].is_finite() || !f.velocities[k * n + i].is_finite());
                if bad {
                    out.push(Violation {
                        flock: Some(a),
                        agent: Some(i),
                        kind: ViolationKind::Finiteness,
                        message: "finiteness: non-finite position or velocity".into(),
                    });
                }
            }
            if !(f.lambda > 0.0) {
                out.push(Violation {
                    flock: Some(a),
                    agent: None,
                    kind: ViolationKind::Parameter,
                    message: format!("lambda must be positive, got {}", f.lambda),
                });
            }
            for msg in f.kernel.validate() {
                out.push(Violation { flock: Some(a), agent: None, kind: ViolationKind::Parameter, message: format!("kernel.{msg}") });
            }
            if let Some(p) = &f.potential {
                for msg in p.validate() {
                    out.push(Violation {
                        flock: Some(a),
                        agent: None,
                        kind: ViolationKind::Parameter,
                        message: format!("potential.{msg}"),
                    });
                }
            }
        }
        out
    }

    /// Writes the snapshot as CSV: `flock_id,agent_id,mass,x0..,v0..`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::from("flock_id,agent_id,mass");
        for k in 0..self.dim {
            let _ = write!(line, ",x{k}");
        }
        for k in 0..self.dim {
            let _ = write!(line, ",v{k}");
        }
        writeln!(out, "{line}")?;
        for (a, f) in self.flocks.iter().enumerate() {
            let n = f.len();
            for i in 0..n {
                line.clear();
                let _ = write!(line, "{a},{i},{:e}", f.masses[i]);
                for k in 0..self.dim {
                    let _ = write!(line, ",{:e}", f.positions[k * n + i]);
                }
                for k in 0..self.dim {
                    let _ = write!(line, ",{:e}", f.velocities[k * n + i]);
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    /// Reads positions, velocities and masses from a snapshot CSV into a copy
    /// of `template`, which supplies kernels and amplitudes.
    pub fn read_csv<R: BufRead>(template: &MultiFlockState, input: R) -> Result<MultiFlockState> {
        let mut state = template.clone();
        let d = state.dim;
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Invalid("empty snapshot".into()))??;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() != 3 + 2 * d || cols[0] != "flock_id" || cols[1] != "agent_id" || cols[2] != "mass" {
            return Err(Error::Invalid(format!("unexpected snapshot header `{header}`")));
        }
        let mut seen = 0usize;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let bad = || Error::Invalid(format!("snapshot line {}: malformed record", lineno + 2));
            if fields.len() != cols.len() {
                return Err(bad());
            }
            let a: usize = fields[0].trim().parse().map_err(|_| bad())?;
            let i: usize = fields[1].trim().parse().map_err(|_| bad())?;
            let f = state.flocks.get_mut(a).ok_or_else(bad)?;
            let n = f.len();
            if i >= n {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            f.masses[i] = num(fields[2])?;
            for k in 0..d {
                f.positions[k * n + i] = num(fields[3 + k])?;
                f.velocities[k * n + i] = num(fields[3 + d + k])?;
            }
            seen += 1;
        }
        if seen != state.num_agents() {
            return Err(Error::Invalid(format!(
                "snapshot has {seen} records, template has {} agents",
                state.num_agents()
            )));
        }
        Ok(state)
    }
}

/// Distance between agents `i` and `j` of one SoA coordinate block.
#[inline]
pub(crate) fn pair_dist_sq(coords: &[f64], n: usize, dim: usize, i: usize, j: usize) -> f64 {
    let mut r2 = 0.0;
    for k in 0..dim {
        let d = coords[k * n + i] - coords[k * n + j];
        r2 += d * d;
    }
    r2
}
