//! Commutation: dividing a torque demand into non-negative squared coil
//! currents.
//!
//! Three kinds of commutation function live here:
//!
//! * the deliberately imperfect one used during data collection, which
//!   inverts an offset pure-sinusoid gain model,
//! * commutations designed to invert an arbitrary multi-harmonic gain model
//!   (typically an identified one),
//! * the first-harmonic baseline, the same design applied after zeroing all
//!   higher harmonics.
//!
//! All of them share the split `u = f⁺(φ)·T*` for non-negative demand and
//! `u = f⁻(φ)·|T*|` for negative demand, where both branches are
//! non-negative and periodic with the tooth pitch.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::MotorGeometry;
use crate::plant::TorqueGainModel;

/// Sign of the requested torque.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TorqueSign {
    Positive,
    Negative,
}

/// Blend shape used at coil hand-off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TsfShape {
    RaisedCosine,
}

/// Torque sharing function: a partition of unity over the coils.
///
/// For positive demand the weights are non-negative, sum to one at every
/// angle, and vanish wherever the coil's reference sinusoid
/// `sin(n_t φ + 2π(c−1)/n_c)` is zero or negative. For negative demand the
/// mirrored weights sum to minus one and are supported on the negative half
/// of the reference. `overlap` is the fraction of one coil's conduction
/// sector (`2π/(n_c n_t)` in rotor angle) over which the hand-off between
/// consecutive coils is blended with a raised cosine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorqueSharingFunction {
    overlap: f64,
    shape: TsfShape,
}

impl TorqueSharingFunction {
    pub fn new(overlap: f64) -> Result<Self> {
        if !(overlap > 0.0 && overlap < 1.0) {
            return Err(Error::Invalid(
                "TSF overlap must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(Self { overlap, shape: TsfShape::RaisedCosine })
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    /// Blend width in electrical angle, clamped so the conduction window of
    /// one coil never leaves the half-period where its reference sinusoid
    /// has the right sign.
    fn blend(&self, n_c: usize) -> f64 {
        let spacing = TAU / n_c as f64;
        (self.overlap * spacing).min(PI - spacing).max(0.0)
    }

    /// Master conduction window on electrical angle, centered on the peak of
    /// `sin` at π/2. Copies shifted by `2π/n_c` tile the circle: rise and
    /// fall ramps of adjacent copies are complementary, so the sum is one
    /// everywhere.
    fn window(&self, x: f64, n_c: usize) -> f64 {
        let spacing = TAU / n_c as f64;
        let blend = self.blend(n_c);
        let start = FRAC_PI_2 - spacing / 2.0 - blend / 2.0;
        let u = (x - start).rem_euclid(TAU);
        if blend == 0.0 {
            return if u < spacing { 1.0 } else { 0.0 };
        }
        if u >= spacing + blend {
            0.0
        } else if u < blend {
            0.5 * (1.0 - (PI * u / blend).cos())
        } else if u <= spacing {
            1.0
        } else {
            0.5 * (1.0 + (PI * (u - spacing) / blend).cos())
        }
    }

    /// Weight vector at rotor angle `phi`. Sums to +1 for positive demand
    /// and to −1 for negative demand.
    pub fn eval(&self, geometry: MotorGeometry, phi: f64, sign: TorqueSign) -> DVector<f64> {
        let x = geometry.electrical_angle(phi);
        DVector::from_fn(geometry.n_c(), |c, _| {
            let xc = x + geometry.coil_phase(c);
            match sign {
                TorqueSign::Positive => self.window(xc, geometry.n_c()),
                TorqueSign::Negative => -self.window(xc - PI, geometry.n_c()),
            }
        })
    }
}

impl Default for TorqueSharingFunction {
    fn default() -> Self {
        Self { overlap: 0.3, shape: TsfShape::RaisedCosine }
    }
}

/// Clamp for the inverse reference gain, keeping currents bounded near the
/// zero crossings of the reference sinusoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationLimits {
    x_min: f64,
    x_max: f64,
}

impl SaturationLimits {
    pub fn new(x_min: f64, x_max: f64) -> Result<Self> {
        if !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Invalid("saturation limits must be finite".into()));
        }
        if x_min > x_max {
            return Err(Error::Invalid("saturation requires x_min <= x_max".into()));
        }
        Ok(Self { x_min, x_max })
    }

    /// Symmetric limits `[-s, s]`.
    pub fn symmetric(s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::Invalid("symmetric saturation bound must be positive".into()));
        }
        Self::new(-s, s)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn apply(&self, x: f64) -> f64 {
        x.clamp(self.x_min, self.x_max)
    }
}

impl Default for SaturationLimits {
    fn default() -> Self {
        Self { x_min: -10.0, x_max: 10.0 }
    }
}

/// Pure-sinusoid gain model `sin(n_t φ + 2π(c−1)/n_c + φ_o)` with a
/// deliberate offset `φ_o`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpleSinusoidModel {
    geometry: MotorGeometry,
    phi_o: f64,
}

impl SimpleSinusoidModel {
    pub fn new(geometry: MotorGeometry, phi_o: f64) -> Self {
        Self { geometry, phi_o }
    }

    pub fn geometry(&self) -> MotorGeometry {
        self.geometry
    }

    pub fn phi_o(&self) -> f64 {
        self.phi_o
    }

    pub fn eval_coil(&self, phi: f64, c: usize) -> f64 {
        (self.geometry.electrical_angle(phi) + self.geometry.coil_phase(c) + self.phi_o).sin()
    }

    pub fn eval(&self, phi: f64) -> DVector<f64> {
        DVector::from_fn(self.geometry.n_c(), |c, _| self.eval_coil(phi, c))
    }
}

/// Deliberately imperfect commutation: TSF-weighted saturated inversion of
/// an offset sinusoid model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImperfectCommutation {
    model: SimpleSinusoidModel,
    tsf: TorqueSharingFunction,
    sat: SaturationLimits,
}

impl ImperfectCommutation {
    pub fn new(
        geometry: MotorGeometry,
        phi_o: f64,
        tsf: TorqueSharingFunction,
        sat: SaturationLimits,
    ) -> Self {
        Self { model: SimpleSinusoidModel::new(geometry, phi_o), tsf, sat }
    }

    pub fn phi_o(&self) -> f64 {
        self.model.phi_o()
    }

    pub fn geometry(&self) -> MotorGeometry {
        self.model.geometry()
    }

    fn branch(&self, phi: f64, sign: TorqueSign) -> DVector<f64> {
        let geometry = self.model.geometry();
        let x = geometry.electrical_angle(phi) + self.model.phi_o();
        DVector::from_fn(geometry.n_c(), |c, _| {
            let xc = x + geometry.coil_phase(c);
            let w = match sign {
                TorqueSign::Positive => self.window_value(xc),
                TorqueSign::Negative => self.window_value(xc - PI),
            };
            if w == 0.0 {
                return 0.0;
            }
            let inv = self.sat.apply(1.0 / xc.sin());
            let value = match sign {
                TorqueSign::Positive => w * inv,
                TorqueSign::Negative => w * (-inv),
            };
            // Squared currents cannot be negative; a sign mismatch can only
            // occur at saturation edges.
            value.max(0.0)
        })
    }

    fn window_value(&self, x: f64) -> f64 {
        self.tsf.window(x, self.model.geometry().n_c())
    }
}

/// Commutation that inverts a multi-harmonic gain model exactly wherever any
/// coil's gain clears a per-coil threshold.
///
/// Per angle, coil weights are a raised-cosine partition of unity over the
/// coils whose gain exceeds the threshold with the needed sign; dividing a
/// weight by its own coil gain then gives `ĝ(φ)·f⁺(φ) = 1` identically. The
/// per-coil threshold is `threshold_frac` times that coil's peak |gain| and
/// the raised-cosine ramp spans `overlap` times the remaining headroom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignedCommutation {
    model: TorqueGainModel,
    overlap: f64,
    threshold_frac: f64,
    thresholds: Vec<f64>,
    ramps: Vec<f64>,
}

/// Grid density used for feasibility scans and design verification.
pub const DESIGN_GRID: usize = 4096;

impl DesignedCommutation {
    fn build(model: TorqueGainModel, tsf: &TorqueSharingFunction, threshold_frac: f64) -> Result<Self> {
        if !(threshold_frac > 0.0) || !threshold_frac.is_finite() {
            return Err(Error::Invalid("design threshold fraction must be positive".into()));
        }
        let geometry = model.geometry();
        let n_c = geometry.n_c();
        let pitch = geometry.tooth_pitch();

        let mut peaks = vec![0.0f64; n_c];
        for k in 0..DESIGN_GRID {
            let g = model.gain(pitch * k as f64 / DESIGN_GRID as f64);
            for c in 0..n_c {
                peaks[c] = peaks[c].max(g[c].abs());
            }
        }
        let thresholds: Vec<f64> = peaks.iter().map(|p| threshold_frac * p).collect();
        let ramps: Vec<f64> = peaks
            .iter()
            .zip(&thresholds)
            .map(|(p, t)| (tsf.overlap() * (p - t)).max(0.0))
            .collect();

        let designed = Self {
            model,
            overlap: tsf.overlap(),
            threshold_frac,
            thresholds,
            ramps,
        };

        // Every angle must be coverable in both torque directions.
        for k in 0..DESIGN_GRID {
            let phi = pitch * k as f64 / DESIGN_GRID as f64;
            let g = designed.model.gain(phi);
            for (label, sign) in [("positive", 1.0), ("negative", -1.0)] {
                let total: f64 =
                    (0..n_c).map(|c| designed.activation(sign * g[c], c)).sum();
                if !(total > 0.0) {
                    return Err(Error::Infeasible {
                        angle: phi,
                        reason: format!(
                            "no coil gain clears the {label} threshold \
                             (per-coil thresholds {:?})",
                            designed.thresholds
                        ),
                    });
                }
            }
        }
        Ok(designed)
    }

    pub fn model(&self) -> &TorqueGainModel {
        &self.model
    }

    pub fn geometry(&self) -> MotorGeometry {
        self.model.geometry()
    }

    pub fn threshold_frac(&self) -> f64 {
        self.threshold_frac
    }

    /// Raised-cosine hinge of one coil's (signed) gain above its threshold.
    fn activation(&self, signed_gain: f64, c: usize) -> f64 {
        let v = signed_gain - self.thresholds[c];
        if v <= 0.0 {
            return 0.0;
        }
        let ramp = self.ramps[c];
        if ramp <= 0.0 || v >= ramp {
            return 1.0;
        }
        0.5 * (1.0 - (PI * v / ramp).cos())
    }

    fn branch(&self, phi: f64, sign: TorqueSign) -> DVector<f64> {
        let n_c = self.geometry().n_c();
        let g = self.model.gain(phi);
        let s = match sign {
            TorqueSign::Positive => 1.0,
            TorqueSign::Negative => -1.0,
        };
        let m: Vec<f64> = (0..n_c).map(|c| self.activation(s * g[c], c)).collect();
        let total: f64 = m.iter().sum();
        DVector::from_fn(n_c, |c, _| {
            if m[c] == 0.0 || total == 0.0 {
                0.0
            } else {
                // weight/gain, with the sign folded in so the result is >= 0
                (m[c] / total) / (s * g[c])
            }
        })
    }
}

/// A commutation function together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provenance", rename_all = "kebab-case")]
pub enum CommutationFunction {
    /// Offset-sinusoid inversion used during data collection.
    Imperfect(ImperfectCommutation),
    /// Inversion of an identified gain model.
    Identified(DesignedCommutation),
    /// Inversion of the first harmonic of an identified gain model.
    FirstHarmonic(DesignedCommutation),
}

impl CommutationFunction {
    pub fn imperfect(
        geometry: MotorGeometry,
        phi_o: f64,
        tsf: TorqueSharingFunction,
        sat: SaturationLimits,
    ) -> Self {
        Self::Imperfect(ImperfectCommutation::new(geometry, phi_o, tsf, sat))
    }

    pub fn geometry(&self) -> MotorGeometry {
        match self {
            Self::Imperfect(c) => c.geometry(),
            Self::Identified(c) | Self::FirstHarmonic(c) => c.geometry(),
        }
    }

    pub fn provenance(&self) -> &'static str {
        match self {
            Self::Imperfect(_) => "imperfect",
            Self::Identified(_) => "identified",
            Self::FirstHarmonic(_) => "first-harmonic",
        }
    }

    /// Positive branch `f⁺(φ)`: per-unit squared currents for T* ≥ 0.
    pub fn f_plus(&self, phi: f64) -> DVector<f64> {
        match self {
            Self::Imperfect(c) => c.branch(phi, TorqueSign::Positive),
            Self::Identified(c) | Self::FirstHarmonic(c) => c.branch(phi, TorqueSign::Positive),
        }
    }

    /// Negative branch `f⁻(φ)`: per-unit squared currents for T* < 0.
    pub fn f_minus(&self, phi: f64) -> DVector<f64> {
        match self {
            Self::Imperfect(c) => c.branch(phi, TorqueSign::Negative),
            Self::Identified(c) | Self::FirstHarmonic(c) => c.branch(phi, TorqueSign::Negative),
        }
    }

    /// Squared coil currents for a torque demand:
    /// `f⁺(φ)·T*` when `T* ≥ 0`, `f⁻(φ)·|T*|` otherwise.
    pub fn currents(&self, phi: f64, t_star: f64) -> DVector<f64> {
        if t_star >= 0.0 {
            self.f_plus(phi) * t_star
        } else {
            self.f_minus(phi) * (-t_star)
        }
    }

    /// Design model this commutation inverts, if it is a designed one.
    pub fn design_model(&self) -> Option<&TorqueGainModel> {
        match self {
            Self::Imperfect(_) => None,
            Self::Identified(c) | Self::FirstHarmonic(c) => Some(c.model()),
        }
    }

    /// Worst deviation of `ĝ·f⁺ − 1` and `ĝ·f⁻ + 1` from zero over a grid of
    /// one tooth, measured against the design model. Only meaningful for
    /// designed commutations.
    pub fn inversion_deviation(&self, grid_size: usize) -> Option<f64> {
        let designed = match self {
            Self::Imperfect(_) => return None,
            Self::Identified(c) | Self::FirstHarmonic(c) => c,
        };
        let pitch = designed.geometry().tooth_pitch();
        let mut worst = 0.0f64;
        for k in 0..grid_size {
            let phi = pitch * k as f64 / grid_size as f64;
            let g = designed.model().gain(phi);
            let plus = g.dot(&self.f_plus(phi)) - 1.0;
            let minus = g.dot(&self.f_minus(phi)) + 1.0;
            worst = worst.max(plus.abs()).max(minus.abs());
        }
        Some(worst)
    }
}

/// Design an inverting commutation for a gain model.
///
/// `threshold_frac` sets the per-coil activation threshold as a fraction of
/// that coil's peak |gain|. Fails with the offending angle when some rotor
/// angle cannot be covered in one of the torque directions.
pub fn design_commutation(
    model: &TorqueGainModel,
    tsf: &TorqueSharingFunction,
    threshold_frac: f64,
) -> Result<CommutationFunction> {
    DesignedCommutation::build(model.clone(), tsf, threshold_frac).map(CommutationFunction::Identified)
}

/// Same as [`design_commutation`] but inverting only the first harmonic of
/// `model`, the baseline a freshly commissioned drive would start from.
pub fn design_first_harmonic(
    model: &TorqueGainModel,
    tsf: &TorqueSharingFunction,
    threshold_frac: f64,
) -> Result<CommutationFunction> {
    DesignedCommutation::build(model.first_harmonic_only(), tsf, threshold_frac)
        .map(CommutationFunction::FirstHarmonic)
}
