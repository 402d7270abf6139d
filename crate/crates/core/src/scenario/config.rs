//! Scenario files: TOML key tree, validation with config paths, canonical
//! serialization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Mode, ModelParams};
use crate::integrate::IntegratorSpec;
use crate::kernels::{KernelFamily, KernelSpec, PotentialSpec};
use crate::upscale::DEFAULT_THRESHOLD;
use crate::{Error, Result};

fn one() -> f64 {
    1.0
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Kernel entry as written in a scenario; the family stays a string so that
/// an unknown name is reported against its config path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: String,
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub exponent: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<(f64, f64)>,
}

impl KernelConfig {
    pub fn to_spec(&self, path: &str, problems: &mut Vec<String>) -> Option<KernelSpec> {
        let Some(family) = KernelFamily::parse(&self.family) else {
            problems.push(format!(
                "{path}.family: unknown kernel family '{}' (expected constant, cucker_smale, power_singular, tabulated)",
                self.family
            ));
            return None;
        };
        let spec = KernelSpec {
            family,
            c0: self.c0,
            exponent: self.exponent,
            s: self.s,
            cutoff: self.cutoff,
            table: self.table.clone(),
        };
        let issues = spec.validate();
        if issues.is_empty() {
            Some(spec)
        } else {
            problems.extend(issues.into_iter().map(|m| format!("{path}.{m}")));
            None
        }
    }
}

impl From<&KernelSpec> for KernelConfig {
    fn from(k: &KernelSpec) -> Self {
        Self {
            family: k.family.name().to_string(),
            c0: k.c0,
            exponent: k.exponent,
            s: k.s,
            cutoff: k.cutoff,
            table: k.table.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default)]
    pub epsilon: f64,
    pub psi: KernelConfig,
    /// Permit attraction on flocks with non-unit masses.
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_heterogeneous_attraction: bool,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.0,
            psi: KernelConfig::from(&KernelSpec::constant(1.0)),
            allow_heterogeneous_attraction: false,
        }
    }
}

/// Mass law of a flock: `unit` (every `m_i = 1`), `equal` (`total/N`
/// each) or `table` (explicit `values`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassConfig {
    pub law: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

impl Default for MassConfig {
    fn default() -> Self {
        Self { law: "unit".into(), total: None, values: Vec::new() }
    }
}

/// Initial sampler. `kind` selects the meaning of the remaining fields:
///
/// * `grid`: lattice of spacing `spacing` around `center`, velocity
///   `velocity + shear·(x − center)`
/// * `gaussian_blob`: `center + spread·N(0, I)`, `velocity + velocity_spread·N(0, I)`
/// * `two_cluster`: two blobs at `center ± separation/2·e₁` closing at
///   `approach_speed` along `e₁`
/// * `custom_table`: explicit `positions` and `velocities`
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub center: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub velocity: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub spread: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub velocity_spread: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub spacing: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shear: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub separation: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub approach_speed: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub positions: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub velocities: Vec<Vec<f64>>,
}

impl SamplerConfig {
    pub fn is_random(&self) -> bool {
        matches!(self.kind.as_str(), "gaussian_blob" | "two_cluster")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlockConfig {
    pub size: usize,
    #[serde(default = "one")]
    pub lambda: f64,
    pub kernel: KernelConfig,
    #[serde(default)]
    pub mass: MassConfig,
    pub sampler: SamplerConfig,
    /// Per-flock seed; falls back to the scenario seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialSpec>,
}

/// Density profile of a hydro flock: `uniform` or `cos2_bump` on
/// `[center − half_width, center + half_width]` carrying `mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityProfile {
    pub shape: String,
    pub center: f64,
    #[serde(default = "one")]
    pub half_width: f64,
    #[serde(default = "one")]
    pub mass: f64,
}

impl DensityProfile {
    /// Unnormalized shape; the mass is fixed afterwards by rescaling.
    fn raw(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.half_width;
        if z.abs() > 1.0 {
            return 0.0;
        }
        match self.shape.as_str() {
            "cos2_bump" => (std::f64::consts::FRAC_PI_2 * z).cos().powi(2),
            _ => 1.0,
        }
    }

    /// Shape integral over its support.
    fn raw_mass(&self) -> f64 {
        match self.shape.as_str() {
            "cos2_bump" => self.half_width,
            _ => 2.0 * self.half_width,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.mass * self.raw(x) / self.raw_mass()
    }
}

/// `u(x) = offset + slope·(x − c) + amplitude·tanh((x − c)/width)` with `c`
/// the density centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityProfile {
    #[serde(default, skip_serializing_if = "is_zero")]
    pub offset: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub slope: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub width: f64,
}

impl Default for VelocityProfile {
    fn default() -> Self {
        Self { offset: 0.0, slope: 0.0, amplitude: 0.0, width: 1.0 }
    }
}

impl VelocityProfile {
    pub fn velocity(&self, center: f64, x: f64) -> f64 {
        let z = x - center;
        self.offset + self.slope * z + self.amplitude * (z / self.width).tanh()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroFlockConfig {
    pub particles: usize,
    #[serde(default = "one")]
    pub lambda: f64,
    pub kernel: KernelConfig,
    pub density: DensityProfile,
    #[serde(default)]
    pub velocity: VelocityProfile,
}

fn default_grid_points() -> usize {
    2001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroConfig {
    /// Nodes of the profile sampling grid per flock.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub flocks: Vec<HydroFlockConfig>,
}

fn default_eta() -> f64 {
    1.0
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpscaleConfig {
    /// Flocks collapsed to super-agents before the run.
    pub reduce: Vec<usize>,
    /// Skip the separation check.
    #[serde(default, skip_serializing_if = "is_false")]
    pub force: bool,
    /// Far-field decay exponent used in the separation report.
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Also run the unreduced pairwise model and report the discrepancy.
    #[serde(default, skip_serializing_if = "is_false")]
    pub compare_full: bool,
}

/// Sample schedule: `every` (uniform spacing from 0 to `t_end`) or explicit
/// `times`. An explicit empty list requests no samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSchedule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
}

fn default_dimension() -> usize {
    2
}

fn default_mode() -> String {
    Mode::default().name().to_string()
}

/// Diagnostics that may be requested in `diagnostics = [...]`.
pub const DIAGNOSTICS: &[&str] = &["envelope", "rates", "energy_law", "separation", "collision_energy", "profile"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub coupling: CouplingConfig,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub samples: SampleSchedule,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flocks: Vec<FlockConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hydro: Option<HydroConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upscale: Option<UpscaleConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    /// Output directory; the CLI `--out` flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Declared desk-scale wall-clock budget in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_seconds: Option<f64>,
}

impl Scenario {
    /// Parses TOML text and validates the result.
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let problems = s.validate();
        if problems.is_empty() {
            Ok(s)
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Canonical text: keys sorted at every level.
    pub fn to_canonical_toml(&self) -> Result<String> {
        let value = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        toml::to_string(&value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn is_hydro(&self) -> bool {
        self.hydro.is_some()
    }

    pub fn mode(&self) -> Option<Mode> {
        Mode::parse(&self.mode)
    }

    /// Model parameters; only meaningful on a validated scenario.
    pub fn model_params(&self) -> Result<ModelParams> {
        let mut problems = Vec::new();
        let psi = self.coupling.psi.to_spec("coupling.psi", &mut problems);
        let mode = self.mode();
        match (psi, mode) {
            (Some(psi), Some(mode)) if problems.is_empty() => {
                let mut p = ModelParams::new(self.coupling.epsilon, psi).with_mode(mode);
                p.allow_heterogeneous_attraction = self.coupling.allow_heterogeneous_attraction;
                Ok(p)
            }
            _ => {
                if mode.is_none() {
                    problems.push(format!("mode: unknown mode '{}'", self.mode));
                }
                Err(Error::Validation(problems))
            }
        }
    }

    /// Sample times in `[0, t_end]`.
    pub fn sample_times(&self) -> Vec<f64> {
        let t_end = self.integrator.t_end;
        match (&self.samples.times, self.samples.every) {
            (Some(times), _) => times.clone(),
            (None, Some(dt)) if dt > 0.0 => crate::integrate::uniform_samples(0.0, t_end, dt),
            _ => vec![0.0, t_end],
        }
    }

    /// Every problem, prefixed with its path in the config tree.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push("name: must not be empty".into());
        }
        if !(1..=3).contains(&self.dimension) {
            out.push(format!("dimension: must be 1, 2 or 3, got {}", self.dimension));
        }
        let mode = self.mode();
        if mode.is_none() {
            out.push(format!(
                "mode: unknown mode '{}' (expected alignment_only, alignment_attraction, superagent_only)",
                self.mode
            ));
        }
        if !(self.coupling.epsilon >= 0.0 && self.coupling.epsilon.is_finite()) {
            out.push(format!("coupling.epsilon: must be finite and nonnegative, got {}", self.coupling.epsilon));
        }
        if let Some(psi) = self.coupling.psi.to_spec("coupling.psi", &mut out) {
            if psi.is_singular() {
                out.push("coupling.psi.family: inter-flock kernel must be bounded".into());
            }
        }
        out.extend(self.integrator.validate().into_iter().map(|m| format!("integrator.{m}")));
        if let Some(every) = self.samples.every {
            if !(every > 0.0) {
                out.push(format!("samples.every: must be positive, got {every}"));
            }
        }
        if let Some(times) = &self.samples.times {
            if times.windows(2).any(|w| !(w[0] <= w[1])) {
                out.push("samples.times: must be sorted".into());
            }
            if times.iter().any(|t| !(*t >= 0.0 && *t <= self.integrator.t_end)) {
                out.push("samples.times: must lie in [0, t_end]".into());
            }
        }
        for d in &self.diagnostics {
            if !DIAGNOSTICS.contains(&d.as_str()) {
                out.push(format!("diagnostics: unknown diagnostic '{d}' (expected one of {})", DIAGNOSTICS.join(", ")));
            }
        }
        if let Some(b) = self.budget_seconds {
            if !(b > 0.0) {
                out.push(format!("budget_seconds: must be positive, got {b}"));
            }
        }
        match (&self.hydro, self.flocks.is_empty()) {
            (Some(_), false) => out.push("flocks: a hydro scenario defines its flocks under hydro.flocks".into()),
            (None, true) => out.push("flocks: at least one flock is required".into()),
            _ => {}
        }
        for (a, f) in self.flocks.iter().enumerate() {
            self.validate_flock(a, f, mode, &mut out);
        }
        if let Some(h) = &self.hydro {
            validate_hydro(h, self.dimension, &mut out);
        }
        if let Some(u) = &self.upscale {
            if self.is_hydro() {
                out.push("upscale: not available for hydro scenarios".into());
            }
            if let Some(&bad) = u.reduce.iter().find(|&&a| a >= self.flocks.len()) {
                out.push(format!("upscale.reduce: no flock {bad}"));
            }
            if !(u.eta >= 0.0) {
                out.push(format!("upscale.eta: must be nonnegative, got {}", u.eta));
            }
            if !(u.threshold > 0.0) {
                out.push(format!("upscale.threshold: must be positive, got {}", u.threshold));
            }
            if self.flocks.len() < 2 {
                out.push("upscale: needs at least two flocks".into());
            }
        }
        out
    }

    fn validate_flock(&self, a: usize, f: &FlockConfig, mode: Option<Mode>, out: &mut Vec<String>) {
        let p = format!("flocks[{a}]");
        let d = self.dimension;
        if f.size == 0 {
            out.push(format!("{p}.size: must be positive"));
        }
        if !(f.lambda >= 0.0 && f.lambda.is_finite()) {
            out.push(format!("{p}.lambda: must be finite and nonnegative, got {}", f.lambda));
        }
        f.kernel.to_spec(&format!("{p}.kernel"), out);
        match f.mass.law.as_str() {
            "unit" => {}
            "equal" => {
                if !f.mass.total.is_some_and(|t| t > 0.0) {
                    out.push(format!("{p}.mass.total: required and positive for the equal law"));
                }
            }
            "table" => {
                if f.mass.values.len() != f.size {
                    out.push(format!("{p}.mass.values: expected {} entries, got {}", f.size, f.mass.values.len()));
                }
                if f.mass.values.iter().any(|m| !(*m > 0.0)) {
                    out.push(format!("{p}.mass.values: masses must be positive"));
                }
            }
            other => out.push(format!("{p}.mass.law: unknown mass law '{other}' (expected unit, equal, table)")),
        }
        let s = &f.sampler;
        let sp = format!("{p}.sampler");
        let vec_ok = |v: &Vec<f64>| v.is_empty() || v.len() == d;
        if !vec_ok(&s.center) {
            out.push(format!("{sp}.center: expected {d} components"));
        }
        if !vec_ok(&s.velocity) {
            out.push(format!("{sp}.velocity: expected {d} components"));
        }
        match s.kind.as_str() {
            "grid" => {
                if !(s.spacing > 0.0) {
                    out.push(format!("{sp}.spacing: must be positive"));
                }
            }
            "gaussian_blob" | "two_cluster" => {
                if !(s.spread > 0.0) {
                    out.push(format!("{sp}.spread: must be positive"));
                }
                if !(s.velocity_spread >= 0.0) {
                    out.push(format!("{sp}.velocity_spread: must be nonnegative"));
                }
                if s.kind == "two_cluster" {
                    if !(s.separation > 0.0) {
                        out.push(format!("{sp}.separation: must be positive"));
                    }
                    if f.size < 2 {
                        out.push(format!("{p}.size: two_cluster needs at least two agents"));
                    }
                }
                if f.seed.or(self.seed).is_none() {
                    out.push(format!("{p}.seed: required by the random sampler '{}' (or set the top-level seed)", s.kind));
                }
            }
            "custom_table" => {
                if s.positions.len() != f.size || s.velocities.len() != f.size {
                    out.push(format!("{sp}.positions: expected {} rows of positions and velocities", f.size));
                }
                if s.positions.iter().chain(&s.velocities).any(|r| r.len() != d) {
                    out.push(format!("{sp}.positions: every row needs {d} components"));
                }
            }
            other => out.push(format!(
                "{sp}.kind: unknown sampler '{other}' (expected grid, gaussian_blob, two_cluster, custom_table)"
            )),
        }
        match (&f.potential, mode) {
            (Some(u), _) => out.extend(u.validate().into_iter().map(|m| format!("{p}.potential.{m}"))),
            (None, Some(Mode::AlignmentAttraction)) => {
                out.push(format!("{p}.potential: required in alignment_attraction mode"))
            }
            _ => {}
        }
    }
}

fn validate_hydro(h: &HydroConfig, dimension: usize, out: &mut Vec<String>) {
    if dimension != 1 {
        out.push(format!("dimension: hydro scenarios are one-dimensional, got {dimension}"));
    }
    if h.grid_points < 3 {
        out.push("hydro.grid_points: need at least 3".into());
    }
    if h.flocks.is_empty() {
        out.push("hydro.flocks: at least one flock is required".into());
    }
    for (a, f) in h.flocks.iter().enumerate() {
        let p = format!("hydro.flocks[{a}]");
        if f.particles < 3 {
            out.push(format!("{p}.particles: need at least 3"));
        }
        if !(f.lambda > 0.0) {
            out.push(format!("{p}.lambda: must be positive"));
        }
        if let Some(k) = f.kernel.to_spec(&format!("{p}.kernel"), out) {
            if !matches!(k.family, KernelFamily::Constant | KernelFamily::CuckerSmale) {
                out.push(format!("{p}.kernel.family: hydro flocks need a smooth bounded kernel"));
            }
        }
        if !matches!(f.density.shape.as_str(), "uniform" | "cos2_bump") {
            out.push(format!("{p}.density.shape: unknown profile '{}' (expected uniform, cos2_bump)", f.density.shape));
        }
        if !(f.density.half_width > 0.0) {
            out.push(format!("{p}.density.half_width: must be positive"));
        }
        if !(f.density.mass > 0.0) {
            out.push(format!("{p}.density.mass: must be positive"));
        }
        if !(f.velocity.width > 0.0) {
            out.push(format!("{p}.velocity.width: must be positive"));
        }
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Scenario::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
dimension = 2

[integrator]
t_end = 1.0

[[flocks]]
size = 4
kernel = { family = "constant" }
sampler = { kind = "gaussian_blob", spread = 1.0 }
"#;

    fn problems(text: &str) -> Vec<String> {
        match Scenario::from_toml(text) {
            Err(Error::Validation(p)) => p,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_seed_is_named() {
        let p = problems(MINIMAL);
        assert!(p.iter().any(|m| m.starts_with("flocks[0].seed")), "{p:?}");
        assert!(Scenario::from_toml(&format!("seed = 3\n{MINIMAL}")).is_ok());
    }

    #[test]
    fn unknown_family_is_named() {
        let text = format!("seed = 1\n{}", MINIMAL.replace("\"constant\"", "\"gaussian\""));
        let p = problems(&text);
        assert!(p.iter().any(|m| m.starts_with("flocks[0].kernel.family")), "{p:?}");
    }

    #[test]
    fn parse_error_carries_location() {
        match Scenario::from_toml("name = \n") {
            Err(Error::Config(m)) => assert!(m.contains("line 1"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Scenario::from_toml("name = \"x\"\nbogus = 1\n[integrator]\nt_end = 1.0\n"), Err(Error::Config(_))));
    }

    #[test]
    fn canonical_round_trip() {
        let s = Scenario::from_toml(&format!("seed = 3\n{MINIMAL}")).unwrap();
        let once = s.to_canonical_toml().unwrap();
        let again = Scenario::from_toml(&once).unwrap().to_canonical_toml().unwrap();
        assert_eq!(once, again);
    }

    #[test]
    fn hydro_needs_dimension_one() {
        let text = r#"
name = "h"
[integrator]
t_end = 1.0
[hydro]
[[hydro.flocks]]
particles = 8
kernel = { family = "power_singular", s = 0.5 }
density = { shape = "uniform", center = 0.0 }
"#;
        let p = problems(text);
        assert!(p.iter().any(|m| m.starts_with("dimension")));
        assert!(p.iter().any(|m| m.starts_with("hydro.flocks[0].kernel.family")));
    }

    #[test]
    fn profiles_integrate_to_mass() {
        for shape in ["uniform", "cos2_bump"] {
            let d = DensityProfile { shape: shape.into(), center: 1.0, half_width: 0.5, mass: 2.0 };
            let n = 20001;
            let h = 1.0 / (n - 1) as f64;
            let ys: Vec<f64> = (0..n).map(|k| d.density(0.5 + k as f64 * h)).collect();
            let m = crate::quadrature::trapezoid(&ys, 0.5, 1.5);
            assert!((m - 2.0).abs() < 1e-3, "{shape} {m}");
        }
    }
}
