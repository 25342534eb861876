//! Antenna-array fault diagnosis from a handful of compressed measurements.
//!
//! Two diagnosis pipelines are provided:
//!
//! * the *null-steering* technique, which only needs the angles of arrival of
//!   the incident paths. The receiver designs combining vectors orthogonal to
//!   every known arrival direction, so a fault-free array measures (almost)
//!   nothing and whatever leaks through is the sparse error channel caused by
//!   the faulty elements;
//! * the *difference* baseline, which needs the full channel (gains and
//!   angles) to synthesize a fault-free reference response and subtracts the
//!   measured response from it.
//!
//! Both end in a sparse support recovery solved by orthogonal matching
//! pursuit. The [`simulator`] module runs seeded Monte Carlo sweeps of the
//! success probability and [`cli`] drives it from configuration files.

pub mod array_model;
pub mod cli;
pub mod combiner_design;
pub mod diagnosis;
mod error;
pub mod fault_channel;
pub mod simulator;
pub mod sparse_recovery;

pub use error::{Error, Result};

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
