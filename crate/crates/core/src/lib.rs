//! Simulation and analysis toolkit for a silicon-photonic polarization decoder
//! used as a BB84 receiver.
//!
//! The crate is layered bottom-up:
//!
//! * [`polarization`]: 2×2 complex algebra for path/polarization qubits and
//!   the fiber drift model.
//! * [`chip`]: the decoder chip as a transfer-matrix network (POVM, port
//!   probabilities, analytic compensation, phase-shifter calibration).
//! * [`link`]: decoy-state source, lossy drifting channel, detectors and the
//!   per-window tallies they produce (expectation or seeded Monte Carlo).
//! * [`feedback`]: the gradient-descent polarization compensation controller.
//! * [`security`]: one-decoy finite-key bounds and the secret key length.
//! * [`harness`]: declarative scenarios that reproduce the reference
//!   experiments end to end and write plot-ready data.
//!
//! Data-parallel loops (Monte Carlo windows, trial batches, sweeps) go through
//! [`exec::Execution`], which uses rayon when the `parallel` feature is on and
//! falls back to plain iteration otherwise.
// `!(x > 0.0)` is used on purpose: it rejects NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chip;
pub mod error;
pub mod exec;
pub mod feedback;
pub mod harness;
pub mod link;
pub mod polarization;
pub mod reference;
pub mod security;

pub use error::{Error, Result};
pub use num_complex::Complex64;
