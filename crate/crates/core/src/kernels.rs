//! Communication kernels `φ(r)` and attraction potentials `U(r)`.
//!
//! All kernels are radial: every built-in family is a non-increasing,
//! nonnegative function of the distance `r = |x - y|`. Non-radial
//! communication is only supported through a tabulated radial lower
//! envelope.

use serde::{Deserialize, Serialize};

use crate::quadrature::{self, Tolerance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `φ(r) = c0`
    Constant,
    /// `φ(r) = c0 (1 + r²)^(-exponent/2)`
    CuckerSmale,
    /// `φ(r) = c0 r^(-(1+s))`, `0 <= s < 2`
    PowerSingular,
    /// Piecewise-linear table with a `⟨r⟩^(-exponent)` tail past the cutoff.
    Tabulated,
}

impl KernelFamily {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "constant" => Some(Self::Constant),
            "cucker_smale" => Some(Self::CuckerSmale),
            "power_singular" => Some(Self::PowerSingular),
            "tabulated" => Some(Self::Tabulated),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::CuckerSmale => "cucker_smale",
            Self::PowerSingular => "power_singular",
            Self::Tabulated => "tabulated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailClass {
    FatTail,
    ThinTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadClass {
    FatHead,
    IntegrableHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub c0: f64,
    /// Decay exponent of the `cucker_smale` family (and of the tabulated tail).
    #[serde(default)]
    pub exponent: f64,
    /// Singularity order of the `power_singular` family.
    #[serde(default)]
    pub s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    /// `(r, φ(r))` nodes for the tabulated family, radii ascending.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub table: Vec<(f64, f64)>,
}

// Tolerance used for tabulated kernels.
const TABULATED_TOL: Tolerance = Tolerance { abs: 1e-10, rel: 1e-8, max_subdivisions: 4000 };
// Internal tolerance for analytic families without a closed-form antiderivative.
const ANALYTIC_TOL: Tolerance = Tolerance { abs: 1e-15, rel: 1e-14, max_subdivisions: 4000 };

impl KernelSpec {
    pub fn constant(c0: f64) -> Self {
        Self { family: KernelFamily::Constant, c0, exponent: 0.0, s: 0.0, cutoff: None, table: Vec::new() }
    }

    pub fn cucker_smale(c0: f64, exponent: f64) -> Self {
        Self { family: KernelFamily::CuckerSmale, c0, exponent, s: 0.0, cutoff: None, table: Vec::new() }
    }

    pub fn power_singular(c0: f64, s: f64) -> Self {
        Self { family: KernelFamily::PowerSingular, c0, exponent: 0.0, s, cutoff: None, table: Vec::new() }
    }

    /// Tabulated monotone radial envelope. Past the last node (or `cutoff`)
    /// the kernel continues as `φ(r_c) (⟨r⟩/⟨r_c⟩)^(-tail_exponent)`.
    pub fn tabulated(table: Vec<(f64, f64)>, tail_exponent: f64, cutoff: Option<f64>) -> Self {
        Self {
            family: KernelFamily::Tabulated,
            c0: 1.0,
            exponent: tail_exponent,
            s: 0.0,
            cutoff,
            table,
        }
    }

    /// Checks the parameter ranges of the family. Returns one message per
    /// problem, keyed by the config field name.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.c0.is_finite() && self.c0 >= 0.0) {
            out.push(format!("c0: amplitude must be finite and nonnegative, got {}", self.c0));
        }
        match self.family {
            KernelFamily::Constant => {}
            KernelFamily::CuckerSmale => {
                if !(self.exponent.is_finite() && self.exponent >= 0.0) {
                    out.push(format!("exponent: must be nonnegative, got {}", self.exponent));
                }
            }
            KernelFamily::PowerSingular => {
                if !(self.s >= 0.0 && self.s < 2.0) {
                    out.push(format!("s: singularity order must lie in [0, 2), got {}", self.s));
                }
            }
            KernelFamily::Tabulated => {
                if self.table.len() < 2 {
                    out.push("table: needs at least two nodes".into());
                }
                for w in self.table.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        out.push("table: radii must be strictly increasing".into());
                        break;
                    }
                    if w[1].1 > w[0].1 {
                        out.push("table: values must be non-increasing".into());
                        break;
                    }
                }
                if self.table.iter().any(|&(r, v)| r < 0.0 || !(v >= 0.0) || !v.is_finite()) {
                    out.push("table: radii and values must be nonnegative and finite".into());
                }
                if !(self.exponent >= 0.0) {
                    out.push(format!("exponent: tail exponent must be nonnegative, got {}", self.exponent));
                }
                if let (Some(c), Some(first)) = (self.cutoff, self.table.first()) {
                    if !(c > first.0) {
                        out.push("cutoff: must exceed the first table radius".into());
                    }
                }
            }
        }
        out
    }

    pub fn is_singular(&self) -> bool {
        self.family == KernelFamily::PowerSingular && self.c0 > 0.0
    }

    /// `φ(r)`. Fails with a domain error at `r = 0` for singular kernels.
    pub fn evaluate(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::Domain(format!("kernel evaluated at negative distance {r}")));
        }
        if r == 0.0 && self.family == KernelFamily::PowerSingular {
            return Err(Error::Domain("singular kernel evaluated at r = 0".into()));
        }
        Ok(self.value(r))
    }

    /// `φ(r)` without the domain check; singular kernels return `inf` at 0.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::PowerSingular => self.c0 * r.powf(-(1.0 + self.s)),
            KernelFamily::Tabulated => self.tabulated_value(r),
            _ => self.value_sq(r * r),
        }
    }

    /// `φ` as a function of the squared distance. Avoids the square root for
    /// the smooth families in pairwise loops.
    #[inline]
    pub fn value_sq(&self, r2: f64) -> f64 {
        match self.family {
            KernelFamily::Constant => self.c0,
            KernelFamily::CuckerSmale => {
                let g = self.exponent;
                if g == 0.0 {
                    self.c0
                } else if g == 1.0 {
                    self.c0 / (1.0 + r2).sqrt()
                } else if g == 2.0 {
                    self.c0 / (1.0 + r2)
                } else if g == 0.5 {
                    self.c0 / (1.0 + r2).sqrt().sqrt()
                } else {
                    self.c0 * (1.0 + r2).powf(-0.5 * g)
                }
            }
            KernelFamily::PowerSingular => self.c0 * r2.powf(-0.5 * (1.0 + self.s)),
            KernelFamily::Tabulated => self.tabulated_value(r2.sqrt()),
        }
    }

    /// Supremum `|φ|_∞` (infinite for singular kernels).
    pub fn sup(&self) -> f64 {
        match self.family {
            KernelFamily::PowerSingular if self.c0 > 0.0 => f64::INFINITY,
            _ => self.value(0.0),
        }
    }

    fn tail_start(&self) -> f64 {
        let last = self.table.last().map(|n| n.0).unwrap_or(0.0);
        self.cutoff.map_or(last, |c| c.min(last))
    }

    fn tabulated_value(&self, r: f64) -> f64 {
        let t = &self.table;
        if t.is_empty() {
            return 0.0;
        }
        if r <= t[0].0 {
            return t[0].1;
        }
        let rc = self.tail_start();
        if r >= rc {
            let vc = self.table_interp(rc);
            let ratio = (1.0 + r * r) / (1.0 + rc * rc);
            return vc * ratio.powf(-0.5 * self.exponent);
        }
        self.table_interp(r)
    }

    fn table_interp(&self, r: f64) -> f64 {
        let t = &self.table;
        let k = t.partition_point(|n| n.0 <= r);
        if k == 0 {
            return t[0].1;
        }
        if k >= t.len() {
            return t[t.len() - 1].1;
        }
        let (r0, v0) = t[k - 1];
        let (r1, v1) = t[k];
        v0 + (v1 - v0) * (r - r0) / (r1 - r0)
    }

    /// Fat tail iff `∫^∞ φ = ∞`.
    pub fn classify_tail(&self) -> Result<TailClass> {
        let fat = match self.family {
            KernelFamily::Constant => self.c0 > 0.0,
            KernelFamily::CuckerSmale => self.c0 > 0.0 && self.exponent <= 1.0,
            KernelFamily::PowerSingular => self.c0 > 0.0 && self.s == 0.0,
            KernelFamily::Tabulated => {
                return Err(Error::Unsupported("tail class of a tabulated kernel".into()))
            }
        };
        Ok(if fat { TailClass::FatTail } else { TailClass::ThinTail })
    }

    /// Fat head iff `∫₀¹ φ = ∞`.
    pub fn classify_head(&self) -> HeadClass {
        if self.is_singular() {
            HeadClass::FatHead
        } else {
            HeadClass::IntegrableHead
        }
    }

    /// `∫_a^b φ(r) dr`; `b` may be `f64::INFINITY`. Divergent integrals
    /// return `f64::INFINITY`.
    pub fn tail_integral(&self, a: f64, b: f64) -> Result<f64> {
        if !(a >= 0.0) || !(b > a) {
            return Err(Error::Domain(format!("tail_integral needs 0 <= a < b, got a = {a}, b = {b}")));
        }
        if self.c0 == 0.0 {
            return Ok(0.0);
        }
        let c0 = self.c0;
        match self.family {
            KernelFamily::Constant => Ok(c0 * (b - a)),
            KernelFamily::PowerSingular => {
                let s = self.s;
                if a == 0.0 {
                    return Ok(f64::INFINITY);
                }
                if s == 0.0 {
                    Ok(if b.is_infinite() { f64::INFINITY } else { c0 * (b / a).ln() })
                } else {
                    let tail_b = if b.is_infinite() { 0.0 } else { b.powf(-s) };
                    Ok(c0 * (a.powf(-s) - tail_b) / s)
                }
            }
            KernelFamily::CuckerSmale => Ok(c0 * bracket_integral(self.exponent, a, b)?),
            KernelFamily::Tabulated => self.tabulated_integral(a, b),
        }
    }

    fn tabulated_integral(&self, a: f64, b: f64) -> Result<f64> {
        let rc = self.tail_start();
        let mut total = 0.0;
        if a < rc {
            let hi = b.min(rc);
            // Split at the table nodes so each panel integrates a smooth piece.
            let mut cuts: Vec<f64> = vec![a];
            cuts.extend(self.table.iter().map(|n| n.0).filter(|&r| r > a && r < hi));
            cuts.push(hi);
            for w in cuts.windows(2) {
                total += quadrature::integrate(|r| self.tabulated_value(r), w[0], w[1], TABULATED_TOL)?;
            }
        }
        if b > rc {
            let lo = a.max(rc);
            let vc = self.table_interp(rc);
            if vc > 0.0 {
                let scale = vc * (1.0 + rc * rc).powf(0.5 * self.exponent);
                total += scale * bracket_integral(self.exponent, lo, b)?;
            }
        }
        Ok(total)
    }
}

/// `∫_a^b (1 + r²)^(-γ/2) dr`, with `b = ∞` allowed.
fn bracket_integral(gamma: f64, a: f64, b: f64) -> Result<f64> {
    if b.is_infinite() {
        if gamma <= 1.0 {
            return Ok(f64::INFINITY);
        }
        if gamma == 2.0 {
            return Ok(std::f64::consts::FRAC_PI_2 - a.atan());
        }
        if gamma == 3.0 {
            return Ok(1.0 - a / (1.0 + a * a).sqrt());
        }
        // t = r²/(1+r²) maps the tail onto an incomplete beta integral.
        let q = 0.5 * (gamma - 1.0);
        let t = a * a / (1.0 + a * a);
        let full = statrs::function::beta::checked_beta(0.5, q)
            .map_err(|e| Error::Numerical(format!("beta function: {e}")))?;
        let upper = if t == 0.0 {
            1.0
        } else {
            1.0 - statrs::function::beta::checked_beta_reg(0.5, q, t)
                .map_err(|e| Error::Numerical(format!("incomplete beta: {e}")))?
        };
        return Ok(0.5 * full * upper);
    }
    if gamma == 0.0 {
        return Ok(b - a);
    }
    if gamma == 1.0 {
        return Ok(b.asinh() - a.asinh());
    }
    if gamma == 2.0 {
        return Ok(f64::atan((b - a) / (1.0 + a * b)));
    }
    if gamma == 3.0 {
        return Ok(b / (1.0 + b * b).sqrt() - a / (1.0 + a * a).sqrt());
    }
    // r = tan θ: the integrand becomes cos^(γ-2) θ on a compact θ-range.
    let (ta, tb) = (a.atan(), b.atan());
    quadrature::integrate(|th: f64| th.cos().powf(gamma - 2.0), ta, tb, ANALYTIC_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialFamily {
    /// `U(r) = a0 ((r - L)₊)^β`
    ShiftedPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    /// Zero-zone radius `L`.
    #[serde(rename = "L")]
    pub inner_radius: f64,
    /// Far-field radius `L'` past which the growth bounds hold.
    #[serde(rename = "Lprime")]
    pub transition_radius: f64,
    pub beta: f64,
    pub a0: f64,
}

/// Far-field growth constants: for `r > L'`,
/// `U >= lower r^β`, `|U'| <= a1 r^(β-1)`, `|U''| <= a2 r^(β-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub lower: f64,
    pub a1: f64,
    pub a2: f64,
}

impl PotentialSpec {
    pub fn shifted_power(inner_radius: f64, transition_radius: f64, beta: f64, a0: f64) -> Self {
        Self { family: PotentialFamily::ShiftedPower, inner_radius, transition_radius, beta, a0 }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.inner_radius >= 0.0) {
            out.push(format!("L: zero-zone radius must be nonnegative, got {}", self.inner_radius));
        }
        if !(self.transition_radius > 0.0 && self.transition_radius > self.inner_radius) {
            out.push(format!(
                "Lprime: must be positive and exceed L, got {} (L = {})",
                self.transition_radius, self.inner_radius
            ));
        }
        if !(self.beta >= 1.0) {
            out.push(format!("beta: growth exponent must be >= 1, got {}", self.beta));
        }
        if !(self.a0 > 0.0 && self.a0.is_finite()) {
            out.push(format!("a0: growth constant must be positive, got {}", self.a0));
        }
        out
    }

    /// `U ∈ C²` on `(0, ∞)` across the kink at `L`.
    pub fn is_c2(&self) -> bool {
        self.beta > 2.0 || (self.beta == 2.0 && self.inner_radius == 0.0)
    }

    /// `(U, U', U'')` at distance `r`; all three vanish on `[0, L]`.
    pub fn evaluate(&self, r: f64) -> (f64, f64, f64) {
        let l = self.inner_radius;
        if r <= l {
            return (0.0, 0.0, 0.0);
        }
        let s = r - l;
        let b = self.beta;
        let a = self.a0;
        if b == 2.0 {
            return (a * s * s, 2.0 * a * s, 2.0 * a);
        }
        if b == 3.0 {
            return (a * s * s * s, 3.0 * a * s * s, 6.0 * a * s);
        }
        let u2 = if b == 1.0 { 0.0 } else { a * b * (b - 1.0) * s.powf(b - 2.0) };
        (a * s.powf(b), a * b * s.powf(b - 1.0), u2)
    }

    pub fn growth_constants(&self) -> GrowthConstants {
        let (l, lp, b, a) = (self.inner_radius, self.transition_radius, self.beta, self.a0);
        let shrink = 1.0 - l / lp;
        let a2 = if b >= 2.0 {
            a * b * (b - 1.0)
        } else {
            a * b * (b - 1.0) * shrink.powf(b - 2.0)
        };
        GrowthConstants { lower: a * shrink.powf(b), a1: a * b, a2 }
    }
}
