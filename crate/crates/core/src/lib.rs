//! Transformed-snapshot model order reduction.
//!
//! Snapshots of a parametrized PDE are registered onto a reference
//! configuration, compressed with POD, and the POD coefficients of both the
//! registered fields and the (inverse) displacements are regressed with
//! Gaussian processes. Online, the surrogate mapping is composed with the
//! predicted inverse displacement to recover the field in physical space.

pub mod bundle;
pub mod config;
pub mod error;
pub mod experiment;
pub mod gpr;
pub mod grid;
pub mod hf;
pub mod invmap;
pub mod optim;
pub mod pipeline;
pub mod pod;
pub mod reduced;
pub mod registration;
pub mod report;
pub mod sparse;

pub use error::{Error, ErrorKind, Result};
