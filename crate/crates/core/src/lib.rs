//! Simulation and initial-datum optimization for local and nonlocal scalar
//! conservation laws with an Eulerian–Lagrangian scheme.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: uniform meshes, piecewise-constant fields and their norms;
//! - [`kernel`]: look-ahead kernels and the discrete one-sided convolution;
//! - [`scheme`]: the local and nonlocal time steppers;
//! - [`objectives`]: tracking-type functionals of the initial datum;
//! - [`optimize`]: projected-gradient minimization over the datum;
//! - [`studies`]: the convergence experiments built from the above.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod kernel;
pub mod objectives;
pub mod optimize;
pub mod scheme;
pub mod studies;

pub use error::{Error, Result};
pub use grid::{AdmissibleSpec, CellField, Grid1D, Interval};
pub use kernel::{DiscreteKernel, KernelShape, KernelSpec};
pub use objectives::{ObjectiveSpec, ReferenceSolution};
pub use optimize::{OptimizationReport, OptimizerConfig};
pub use scheme::{SchemeConfig, SpeedLaw, Trajectory};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
