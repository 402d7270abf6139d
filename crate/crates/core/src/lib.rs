//! Multi-flock alignment dynamics.
//!
//! The crate integrates the multi-flock Cucker–Smale master equation, its
//! super-agent reduction, the attraction-forced variant and a 1D Lagrangian
//! hydrodynamic solver, and exposes the functionals (diameters, alignment
//! amplitudes, energies, envelopes, fitted rates) used to check the long-time
//! flocking behaviour of each system quantitatively.
//!
//! Module map:
//!
//! * [`kernels`] communication kernels and attraction potentials
//! * [`mfstate`] multi-flock phase state, macroscopic observables, frames
//! * [`dynamics`] right-hand sides of the continuous-time systems
//! * [`integrate`] time stepping with collision guards and event log
//! * [`diagnostics`] flocking functionals, envelopes and rate fitting
//! * [`upscale`] far-field replacement of flocks by super-agents
//! * [`hydro1d`] 1D Lagrangian hydrodynamics with the threshold quantity `e`
//! * [`scenario`] configuration, presets, runs and file output

// `!(x > 0.0)` is the NaN-rejecting form throughout; indexed loops mirror the
// component formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod hydro1d;
pub mod integrate;
pub mod kernels;
pub mod mfstate;
pub mod quadrature;
pub mod scenario;
pub mod upscale;

pub use error::{Error, Result};
