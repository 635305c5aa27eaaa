//! Channel estimation toolkit for Rydberg atomic MIMO receivers.
//!
//! A vapor-cell array only reports the magnitude of the field superposition at
//! each cell. With a strong known reference emitter the magnitude linearizes
//! around the reference, and the user channels can be recovered from pilot
//! blocks by gradient descent (1D arrays) or by projected gradient descent with
//! a per-user rank constraint (2D arrays).
//!
//! Crate layout:
//! - [`atomic_model`]: physical constants, scene drawing, channel and reference synthesis
//! - [`measurement`]: exact magnitude and linearized measurement models
//! - [`tensor`]: mode-3 unfolding shared by every 2D routine
//! - [`estimators`]: GD, PGD with rank-L truncation, Gerchberg-Saxton baseline
//! - [`crlb`]: closed-form and numerical Fisher information, NMSE floors
//! - [`bench`]: seeded Monte Carlo sweeps
//! - [`formats`]: versioned file formats

pub mod atomic_model;
pub mod bench;
pub mod crlb;
pub mod error;
pub mod estimators;
pub mod formats;
pub mod linalg;
pub mod measurement;
pub mod tensor;

pub use atomic_model::{
    draw_scene, ArrayDims, ArrayGeometry, ChannelSet, DistributionProfile, PhysicalConstants, Scene,
};
pub use error::{Error, Result};
pub use estimators::{EstimateReport, EstimatorConfig, EstimatorKind};
pub use measurement::{MeasurementModel, MeasurementSet};

pub use num_complex::Complex64;
