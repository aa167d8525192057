//! Fourier basis over the tooth pitch.
//!
//! Every spatially periodic quantity in this crate (the per-coil gain, its
//! estimate, the regression features) is expanded in
//! `β(φ) = [1, sin(n_t φ), cos(n_t φ), …, sin(n_h n_t φ), cos(n_h n_t φ)]`,
//! which is periodic with the tooth pitch by construction. Stacking one such
//! block per coil gives the full feature map with `n_c·(1 + 2·n_h)`
//! parameters.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Truncated Fourier basis on spatial frequency multiples of the tooth count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierBasis {
    n_t: u32,
    n_h: usize,
}

impl FourierBasis {
    pub fn new(n_t: u32, n_h: usize) -> Self {
        Self { n_t, n_h }
    }

    pub fn n_t(&self) -> u32 {
        self.n_t
    }

    /// Number of harmonics per coil.
    pub fn n_h(&self) -> usize {
        self.n_h
    }

    /// Length of one per-coil block: `1 + 2·n_h`.
    pub fn len(&self) -> usize {
        1 + 2 * self.n_h
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Total parameter count for `n_c` coils.
    pub fn n_theta(&self, n_c: usize) -> usize {
        n_c * self.len()
    }

    /// Evaluate `β(φ)`.
    pub fn eval(&self, phi: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.len());
        self.eval_into(phi, out.as_mut_slice());
        out
    }

    /// Evaluate `β(φ)` into a caller-provided slice of length `self.len()`.
    pub fn eval_into(&self, phi: f64, out: &mut [f64]) {
        assert_eq!(out.len(), self.len());
        let x = self.n_t as f64 * phi;
        out[0] = 1.0;
        for h in 1..=self.n_h {
            let (s, c) = (h as f64 * x).sin_cos();
            out[2 * h - 1] = s;
            out[2 * h] = c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn value_at_zero() {
        let b = FourierBasis::new(131, 2);
        let v = b.eval(0.0);
        assert_eq!(v.as_slice(), &[1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn quarter_period() {
        // At φ = π/(2 n_t) the first harmonic is [sin, cos] = [1, 0].
        let n_t = 7;
        let b = FourierBasis::new(n_t, 1);
        let v = b.eval(std::f64::consts::FRAC_PI_2 / n_t as f64);
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!((v[1] - 1.0).abs() < 1e-15);
        assert!(v[2].abs() < 1e-15);
    }

    #[test]
    fn periodic_with_tooth_pitch() {
        let b = FourierBasis::new(131, 5);
        for k in 0..50 {
            let phi = -3.0 + 0.123 * k as f64;
            let a = b.eval(phi);
            let c = b.eval(phi + TAU / 131.0);
            for j in 0..b.len() {
                assert!((a[j] - c[j]).abs() < 1e-12, "component {j} at phi {phi}");
            }
        }
    }
}
