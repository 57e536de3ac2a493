//! Simulation and analysis of pump-probe photoluminescence-excitation (PLE)
//! experiments on color-center spin ensembles.
//!
//! The crate covers the full desk-scale analysis chain:
//!
//! - [`ratemodel`]: population dynamics of a three-level defect model
//!   (ground, shelving, optically excited) under piecewise-constant optical
//!   drive, solved with exact per-segment matrix exponentials.
//! - [`deadtime`]: single-photon-counter dead-time pile-up, both as the
//!   count-probability integral equation and as a Monte-Carlo
//!   non-paralyzable detector oracle, plus the bias it induces on T1 fits.
//! - [`t1fit`]: leading-edge extraction and damped least-squares fits of the
//!   two-parameter T1 recovery model, its pile-up-corrected variant, and
//!   mono/bi-exponential bleaching models.
//! - [`tempfit`]: the spin-lattice relaxation temperature model
//!   (direct + Raman + Orbach + constant) and the alternate power law.
//! - [`grouptheory`]: exact character-table engine for the double group
//!   C̄3v with tensor products, decompositions and selection rules.
//! - [`pipeline`]: end-to-end experiment synthesis, CSV/JSON I/O and
//!   reproducible run reports.
//!
//! Data-parallel sweeps (Monte-Carlo trials, per-delay synthesis) run on
//! rayon when the default `parallel` feature is enabled and fall back to
//! sequential execution without it.

// Index loops over small fixed matrices read better than iterator chains.
#![allow(clippy::needless_range_loop)]

pub mod constants;
pub mod deadtime;
mod error;
mod fitting;
pub mod grouptheory;
pub mod parallel;
pub mod pipeline;
pub mod ratemodel;
pub mod t1fit;
pub mod tempfit;
mod trace;

pub use error::{Error, Result};
pub use trace::{TimeTrace, TraceUnit};
