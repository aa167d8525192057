//! Torque-sensorless identification of the torque-current-angle
//! relationship of switched reluctance motors.
//!
//! The torque such a motor produces depends nonlinearly on rotor angle and
//! coil currents, and is not measured. This crate identifies that
//! relationship anyway, by exploiting feedback: a motor tracking a
//! constant-velocity ramp through a plant with one integrator produces a
//! constant (if unknown) torque, so logged currents and angles from a few
//! deliberately imperfect commutation functions pin down the gain shape up
//! to a harmless scale factor. The crate provides
//!
//! * a ground-truth simulator ([`plant`]) with spatially periodic gain,
//!   position-dependent disturbances and exact zero-order-hold rotor
//!   dynamics,
//! * torque sharing and commutation functions ([`commutation`]), including
//!   the offset-sinusoid imperfect ones used for excitation and exact
//!   inverting designs for arbitrary gain models,
//! * a loop-shaped discrete PID and closed-loop simulation ([`control`]),
//! * the supervised data-collection campaign ([`experiment`]),
//! * Bayesian estimation with disturbance priors and excitation
//!   diagnostics ([`estimator`]),
//! * fit, ripple and tracking metrics ([`validation`]),
//! * and a configuration-driven pipeline with a CLI ([`config`],
//!   [`pipeline`]).
//!
//! ```
//! use srm_ident::geometry::MotorGeometry;
//! use srm_ident::plant::TorqueGainModel;
//!
//! let geometry = MotorGeometry::new(131, 3)?;
//! let truth = TorqueGainModel::seeded_truth(geometry, 5, 7)?;
//! // The gain repeats every tooth pitch.
//! let g0 = truth.gain(0.01);
//! let g1 = truth.gain(0.01 + geometry.tooth_pitch());
//! assert!((g0 - g1).norm() < 1e-12);
//! # Ok::<(), srm_ident::Error>(())
//! ```

// Validation guards use negated comparisons so NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod commutation;
pub mod config;
pub mod control;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod plant;
pub mod validation;

pub use error::{Error, Result};
pub use geometry::MotorGeometry;
