//! Motor geometry: tooth and coil counts and the angular conventions
//! derived from them.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Tooth and coil counts of a switched reluctance motor.
///
/// The torque-current-angle relationship repeats every tooth pitch
/// `2π/n_t`, and the `n_c` coils are spaced equidistantly within one
/// electrical period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorGeometry {
    n_t: u32,
    n_c: usize,
}

impl MotorGeometry {
    pub fn new(n_t: u32, n_c: usize) -> Result<Self> {
        if n_t < 1 {
            return Err(Error::Invalid("tooth count n_t must be at least 1".into()));
        }
        if n_c < 2 {
            return Err(Error::Invalid("coil count n_c must be at least 2".into()));
        }
        Ok(Self { n_t, n_c })
    }

    pub fn n_t(&self) -> u32 {
        self.n_t
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    /// Spatial period of the gain in rotor angle, `2π/n_t`.
    pub fn tooth_pitch(&self) -> f64 {
        TAU / self.n_t as f64
    }

    /// Electrical angle of the rotor: `n_t · φ`.
    pub fn electrical_angle(&self, phi: f64) -> f64 {
        self.n_t as f64 * phi
    }

    /// Electrical phase offset of coil `c` (zero based): `2π·c/n_c`.
    pub fn coil_phase(&self, c: usize) -> f64 {
        TAU * c as f64 / self.n_c as f64
    }
}
