//! Ground-truth motor simulation.
//!
//! Torque generation follows `T = g(φ)·u + d(φ,t)` where `g` is a per-coil
//! gain that is periodic with the tooth pitch, `u` are squared coil currents
//! and `d` collects unmeasured disturbances. The rotor itself is a linear
//! second-order system `G(s) = 1/(s² + damping·s)` with unit inertia,
//! advanced with its exact zero-order-hold discretization.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::basis::FourierBasis;
use crate::error::{Error, Result};
use crate::geometry::MotorGeometry;

/// Per-coil torque gain `g(φ)`, stored as Fourier coefficients.
///
/// Coefficients are grouped per coil as
/// `[bias, sin_1, cos_1, …, sin_{n_h}, cos_{n_h}]` over spatial frequency
/// multiples of the tooth count, so the gain is periodic with the tooth
/// pitch by construction. Used both as the simulated ground truth and as the
/// shape behind identified models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueGainModel {
    geometry: MotorGeometry,
    n_h: usize,
    coeffs: Vec<f64>,
}

/// One shared-across-coils harmonic used when constructing a gain model:
/// amplitude and phase of `a·sin(h·n_t·φ + h·coil_phase + χ)`.
#[derive(Debug, Clone, Copy)]
pub struct Harmonic {
    pub amplitude: f64,
    pub phase: f64,
}

impl TorqueGainModel {
    /// Build from raw coefficients, `n_c·(1 + 2 n_h)` values grouped per coil.
    pub fn new(geometry: MotorGeometry, n_h: usize, coeffs: Vec<f64>) -> Result<Self> {
        if n_h < 1 {
            return Err(Error::Invalid("harmonic count n_h must be at least 1".into()));
        }
        let expected = geometry.n_c() * (1 + 2 * n_h);
        if coeffs.len() != expected {
            return Err(Error::Invalid(format!(
                "expected {expected} gain coefficients, got {}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("gain coefficients must be finite".into()));
        }
        Ok(Self { geometry, n_h, coeffs })
    }

    /// Build a motor whose coils share one harmonic profile, each coil
    /// rotated by its electrical phase. Harmonic `h` (1-based) contributes
    /// `a_h·sin(h n_t φ + h·2π(c−1)/n_c + χ_h)` to coil `c`.
    pub fn from_harmonics(geometry: MotorGeometry, harmonics: &[Harmonic]) -> Result<Self> {
        if harmonics.is_empty() {
            return Err(Error::Invalid("at least one harmonic is required".into()));
        }
        let n_h = harmonics.len();
        let block = 1 + 2 * n_h;
        let mut coeffs = vec![0.0; geometry.n_c() * block];
        for c in 0..geometry.n_c() {
            for (h0, term) in harmonics.iter().enumerate() {
                let h = h0 + 1;
                let psi = h as f64 * geometry.coil_phase(c) + term.phase;
                // a·sin(x + ψ) = a·cos(ψ)·sin(x) + a·sin(ψ)·cos(x)
                coeffs[c * block + 2 * h - 1] = term.amplitude * psi.cos();
                coeffs[c * block + 2 * h] = term.amplitude * psi.sin();
            }
        }
        Self::new(geometry, n_h, coeffs)
    }

    /// Seeded default ground truth: a dominant unit first harmonic aligned
    /// with `sin(n_t φ + coil phase)` plus `n_h − 1` weaker harmonics with
    /// amplitudes decaying as `1/h` and random phases.
    pub fn seeded_truth(geometry: MotorGeometry, n_h: usize, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut harmonics = vec![Harmonic { amplitude: 1.0, phase: 0.0 }];
        for h in 2..=n_h {
            harmonics.push(Harmonic {
                amplitude: rng.random_range(0.25..0.45) / h as f64,
                phase: rng.random_range(0.0..TAU),
            });
        }
        Self::from_harmonics(geometry, &harmonics)
    }

    pub fn geometry(&self) -> MotorGeometry {
        self.geometry
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient block of one coil.
    pub fn coil_coeffs(&self, c: usize) -> &[f64] {
        let block = 1 + 2 * self.n_h;
        &self.coeffs[c * block..(c + 1) * block]
    }

    pub fn basis(&self) -> FourierBasis {
        FourierBasis::new(self.geometry.n_t(), self.n_h)
    }

    /// Evaluate the gain row vector `g(φ)`, length `n_c`.
    pub fn gain(&self, phi: f64) -> DVector<f64> {
        let beta = self.basis().eval(phi);
        let block = 1 + 2 * self.n_h;
        DVector::from_fn(self.geometry.n_c(), |c, _| {
            let mut acc = 0.0;
            for j in 0..block {
                acc += self.coeffs[c * block + j] * beta[j];
            }
            acc
        })
    }

    /// Copy with every coefficient multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            *c *= s;
        }
        out
    }

    /// Copy that keeps only the first harmonic of every coil (bias and
    /// higher harmonics zeroed).
    pub fn first_harmonic_only(&self) -> Self {
        let block = 1 + 2 * self.n_h;
        let mut out = self.clone();
        for c in 0..self.geometry.n_c() {
            for j in 0..block {
                if j != 1 && j != 2 {
                    out.coeffs[c * block + j] = 0.0;
                }
            }
        }
        out
    }
}

/// Total torque on the rotor: `g(φ)·u + d`.
///
/// `u` holds squared coil currents and therefore must be non-negative.
pub fn total_torque(model: &TorqueGainModel, phi: f64, u: &DVector<f64>, d: f64) -> Result<f64> {
    if u.len() != model.geometry().n_c() {
        return Err(Error::Invalid(format!(
            "expected {} squared currents, got {}",
            model.geometry().n_c(),
            u.len()
        )));
    }
    if u.iter().any(|&x| x < 0.0) {
        return Err(Error::Invalid(
            "squared currents must be non-negative".into(),
        ));
    }
    Ok(model.gain(phi).dot(u) + d)
}

/// One sinusoidal component of the position-dependent disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialTerm {
    pub amplitude: f64,
    /// Spatial frequency in rotor angle (rad⁻¹). Must not be an integer
    /// multiple of the tooth count, otherwise the disturbance would be
    /// indistinguishable from the gain itself.
    pub spatial_frequency: f64,
    pub phase: f64,
}

/// Unmeasured torque disturbance `d(φ,t) = d_1(t) + d_2(φ)`: temporal white
/// noise plus a sum of spatial sinusoids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceModel {
    sigma1_sq: f64,
    spatial_terms: Vec<SpatialTerm>,
}

impl DisturbanceModel {
    pub fn new(
        geometry: MotorGeometry,
        sigma1_sq: f64,
        spatial_terms: Vec<SpatialTerm>,
    ) -> Result<Self> {
        if !(sigma1_sq >= 0.0) {
            return Err(Error::Invalid("sigma1_sq must be non-negative".into()));
        }
        for term in &spatial_terms {
            let ratio = term.spatial_frequency / geometry.n_t() as f64;
            let nearest = ratio.round();
            if nearest >= 1.0 && (ratio - nearest).abs() < 1e-9 {
                return Err(Error::Invalid(format!(
                    "spatial frequency {} is an integer multiple of the tooth count {}; \
                     such a disturbance is indistinguishable from the gain",
                    term.spatial_frequency,
                    geometry.n_t()
                )));
            }
        }
        Ok(Self { sigma1_sq, spatial_terms })
    }

    /// No disturbance at all.
    pub fn zero(geometry: MotorGeometry) -> Self {
        Self::new(geometry, 0.0, Vec::new()).expect("zero disturbance is always valid")
    }

    pub fn sigma1_sq(&self) -> f64 {
        self.sigma1_sq
    }

    pub fn spatial_terms(&self) -> &[SpatialTerm] {
        &self.spatial_terms
    }

    /// Deterministic spatial part `d_2(φ)`.
    pub fn spatial(&self, phi: f64) -> f64 {
        self.spatial_terms
            .iter()
            .map(|t| t.amplitude * (t.spatial_frequency * phi + t.phase).sin())
            .sum()
    }

    /// Draw `d_1 + d_2(φ)` for one sample.
    pub fn sample<R: Rng + ?Sized>(&self, phi: f64, rng: &mut R) -> f64 {
        let d1 = if self.sigma1_sq > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            z * self.sigma1_sq.sqrt()
        } else {
            0.0
        };
        d1 + self.spatial(phi)
    }
}

/// Rotor state: angle, velocity and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub phi: f64,
    pub omega: f64,
    pub t: f64,
}

impl PlantState {
    pub fn at_rest() -> Self {
        Self { phi: 0.0, omega: 0.0, t: 0.0 }
    }
}

/// Discrete-time rotor dynamics: the exact zero-order-hold discretization of
/// `G(s) = 1/(s² + damping·s)` with state `[φ, ω]` and torque input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotorDynamics {
    damping: f64,
    dt: f64,
    // [phi; omega] <- [[1, a12]; [0, a22]]·[phi; omega] + [b1; b2]·T
    a12: f64,
    a22: f64,
    b1: f64,
    b2: f64,
}

impl RotorDynamics {
    pub fn new(damping: f64, dt: f64) -> Result<Self> {
        if !(damping > 0.0) {
            return Err(Error::Invalid(
                "damping must be positive so the plant has exactly one integrator".into(),
            ));
        }
        if !(dt > 0.0) {
            return Err(Error::Invalid("sample period dt must be positive".into()));
        }
        let e = (-damping * dt).exp();
        let a12 = (1.0 - e) / damping;
        Ok(Self {
            damping,
            dt,
            a12,
            a22: e,
            b1: (dt - a12) / damping,
            b2: a12,
        })
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advance the state one sample under constant torque `t_in`.
    pub fn step(&self, state: PlantState, t_in: f64) -> PlantState {
        PlantState {
            phi: state.phi + self.a12 * state.omega + self.b1 * t_in,
            omega: self.a22 * state.omega + self.b2 * t_in,
            t: state.t + self.dt,
        }
    }

    /// Continuous-time frequency response `G(jω) = 1/((jω)² + damping·jω)`.
    pub fn freq_response(&self, omega: f64) -> num_complex::Complex64 {
        let jw = num_complex::Complex64::new(0.0, omega);
        1.0 / (jw * jw + self.damping * jw)
    }
}

/// Ground-truth components threaded through every closed-loop run.
#[derive(Debug, Clone, Copy)]
pub struct PlantSet<'a> {
    pub gain: &'a TorqueGainModel,
    pub disturbance: &'a DisturbanceModel,
    pub dynamics: &'a RotorDynamics,
}
