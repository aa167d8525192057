//! Bayesian identification of the torque-current-angle relationship.
//!
//! The gain estimate is linear in its parameters: per coil a Fourier block
//! `β(φ)` (see [`FourierBasis`]), stacked via `ψ_g(φ) = I_{n_c} ⊗ β(φ)`.
//! Constant-velocity experiments make the true torque a constant with known
//! sign, so every sample contributes one regression row
//! `x_k = u_kᵀ ψ_g(φ_k)` against the target `±T_const`. A unit Gaussian
//! prior on the parameters and Gaussian priors on the temporal and spatial
//! disturbances give the posterior in closed form, either in the
//! sample-sized (dual) form or the parameter-sized (information) form.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use crate::basis::FourierBasis;
use crate::error::{Error, Result};
use crate::experiment::ExperimentDataset;
use crate::geometry::MotorGeometry;
use crate::plant::TorqueGainModel;

/// One regression row: `u ⊗ β(φ)`, the concatenation over coils of the
/// basis scaled by that coil's squared current.
pub fn design_row(basis: &FourierBasis, u: &[f64], phi: f64, out: &mut [f64]) {
    let block = basis.len();
    assert_eq!(out.len(), u.len() * block);
    let mut beta = vec![0.0; block];
    basis.eval_into(phi, &mut beta);
    for (c, &uc) in u.iter().enumerate() {
        for j in 0..block {
            out[c * block + j] = uc * beta[j];
        }
    }
}

/// Build a design matrix from raw `(φ, u)` samples.
pub fn build_design_from_samples<'a>(
    basis: &FourierBasis,
    n_c: usize,
    samples: impl Iterator<Item = (f64, &'a [f64])>,
) -> Result<DMatrix<f64>> {
    let p = basis.n_theta(n_c);
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    let mut row = vec![0.0; p];
    for (phi, u) in samples {
        if u.len() != n_c {
            return Err(Error::Invalid(format!(
                "sample has {} currents, expected {n_c}",
                u.len()
            )));
        }
        design_row(basis, u, phi, &mut row);
        rows.extend_from_slice(&row);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Dataset("no samples to build a design matrix from".into()));
    }
    Ok(DMatrix::from_row_slice(n, p, &rows))
}

/// Design matrix of a dataset, one row per retained sample.
pub fn build_design(dataset: &ExperimentDataset, basis: &FourierBasis) -> Result<DMatrix<f64>> {
    let n_c = dataset.geometry.n_c();
    build_design_from_samples(
        basis,
        n_c,
        dataset
            .records
            .iter()
            .flat_map(|r| (0..r.len()).map(move |k| (r.phi[k], r.u_row(k)))),
    )
}

/// Regression target: `+T_const` for forward samples, `−T_const` for
/// backward ones. `T_const` defaults to the mean |T*| over the dataset; its
/// exact value only scales the estimate.
pub fn build_target(
    dataset: &ExperimentDataset,
    t_const_override: Option<f64>,
) -> Result<(DVector<f64>, f64)> {
    let n: usize = dataset.total_samples();
    if n == 0 {
        return Err(Error::Dataset("dataset has no samples".into()));
    }
    let t_const = match t_const_override {
        Some(t) => {
            if !(t > 0.0) {
                return Err(Error::Invalid("T_const override must be positive".into()));
            }
            t
        }
        None => {
            dataset
                .records
                .iter()
                .flat_map(|r| r.t_star.iter())
                .map(|t| t.abs())
                .sum::<f64>()
                / n as f64
        }
    };
    let mut b = DVector::zeros(n);
    let mut k = 0;
    for r in &dataset.records {
        let v = r.direction as f64 * t_const;
        for _ in 0..r.len() {
            b[k] = v;
            k += 1;
        }
    }
    Ok((b, t_const))
}

/// Design matrix, target and the metadata needed to turn a posterior into a
/// gain model.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSystem {
    pub x: DMatrix<f64>,
    pub b: DVector<f64>,
    pub t_const: f64,
    /// Rotor angle of every row.
    pub angles: Vec<f64>,
    pub basis: FourierBasis,
    pub geometry: MotorGeometry,
}

/// Assemble the full regression system from a dataset.
pub fn build_regression(
    dataset: &ExperimentDataset,
    n_h: usize,
    t_const_override: Option<f64>,
) -> Result<RegressionSystem> {
    let basis = FourierBasis::new(dataset.geometry.n_t(), n_h);
    let x = build_design(dataset, &basis)?;
    let (b, t_const) = build_target(dataset, t_const_override)?;
    let angles = dataset
        .records
        .iter()
        .flat_map(|r| r.phi.iter().copied())
        .collect();
    Ok(RegressionSystem {
        x,
        b,
        t_const,
        angles,
        basis,
        geometry: dataset.geometry,
    })
}

/// Prior covariance kernel for the spatial disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DisturbanceKernel {
    /// Independent per-sample variance: `k(φ,φ') = variance·δ(φ,φ')`.
    White { variance: f64 },
    /// Periodic kernel
    /// `variance·exp(−2 sin²(π(φ−φ')/period)/lengthscale²)`.
    Periodic { variance: f64, lengthscale: f64, period: f64 },
}

/// Priors on the two disturbance components: temporal white noise with
/// variance `sigma_sq`, spatial noise described by a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbancePrior {
    pub sigma_sq: f64,
    pub kernel: DisturbanceKernel,
}

impl DisturbancePrior {
    /// White spatial prior with no separate temporal term.
    pub fn white(variance: f64) -> Self {
        Self { sigma_sq: 0.0, kernel: DisturbanceKernel::White { variance } }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq >= 0.0) {
            return Err(Error::Invalid("sigma_sq must be non-negative".into()));
        }
        match self.kernel {
            DisturbanceKernel::White { variance } => {
                if !(variance >= 0.0) {
                    return Err(Error::Invalid("kernel variance must be non-negative".into()));
                }
            }
            DisturbanceKernel::Periodic { variance, lengthscale, period } => {
                if !(variance >= 0.0) || !(lengthscale > 0.0) || !(period > 0.0) {
                    return Err(Error::Invalid(
                        "periodic kernel needs variance >= 0, lengthscale > 0, period > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Spatial covariance evaluated on the sample angles.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaMatrix {
    /// Uniform diagonal (white kernel).
    Diagonal(f64),
    Dense(DMatrix<f64>),
}

/// Evaluate the prior covariance on the sample angles. Dense results are
/// checked for positive semidefiniteness.
pub fn build_sigma(prior: &DisturbancePrior, angles: &[f64]) -> Result<SigmaMatrix> {
    prior.validate()?;
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(Error::Invalid("sample angles must be finite".into()));
    }
    match prior.kernel {
        DisturbanceKernel::White { variance } => Ok(SigmaMatrix::Diagonal(variance)),
        DisturbanceKernel::Periodic { variance, lengthscale, period } => {
            let n = angles.len();
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let s = (std::f64::consts::PI * (angles[i] - angles[j]) / period).sin();
                    let v = variance * (-2.0 * s * s / (lengthscale * lengthscale)).exp();
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            // PSD sanity: Cholesky with a jitter scaled to the kernel.
            let jitter = 1e-12 * variance.max(1e-300);
            let mut probe = m.clone();
            for i in 0..n {
                probe[(i, i)] += jitter;
            }
            if Cholesky::new(probe).is_none() {
                return Err(Error::Numerical(
                    "kernel covariance is not positive semidefinite on these angles".into(),
                ));
            }
            Ok(SigmaMatrix::Dense(m))
        }
    }
}

/// Gaussian posterior over the gain parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorModel {
    pub theta_hat: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub basis: FourierBasis,
    pub geometry: MotorGeometry,
    pub t_const: f64,
}

impl PosteriorModel {
    /// Mean gain and pointwise covariance at one angle:
    /// `ψ_g(φ)·θ̂` and `ψ_g(φ)·Var·ψ_g(φ)ᵀ`.
    pub fn eval(&self, phi: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n_c = self.geometry.n_c();
        let block = self.basis.len();
        let beta = self.basis.eval(phi);
        let mean = DVector::from_fn(n_c, |c, _| {
            (0..block).map(|j| self.theta_hat[c * block + j] * beta[j]).sum()
        });
        let cov = DMatrix::from_fn(n_c, n_c, |c, d| {
            let mut acc = 0.0;
            for i in 0..block {
                for j in 0..block {
                    acc += beta[i] * self.covariance[(c * block + i, d * block + j)] * beta[j];
                }
            }
            acc
        });
        (mean, cov)
    }

    /// Mean and symmetric 95% bounds per coil.
    pub fn bounds_95(&self, phi: f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (mean, cov) = self.eval(phi);
        let half = DVector::from_fn(mean.len(), |c, _| 1.96 * cov[(c, c)].max(0.0).sqrt());
        (mean.clone(), &mean - &half, &mean + &half)
    }

    /// The posterior mean as a plain gain model.
    pub fn gain_model(&self) -> Result<TorqueGainModel> {
        TorqueGainModel::new(
            self.geometry,
            self.basis.n_h(),
            self.theta_hat.iter().copied().collect(),
        )
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Parameter-sized posterior: `Var = (I + XᵀR⁻¹X)⁻¹`,
/// `θ̂ = Var·XᵀR⁻¹b`, valid for diagonal noise covariance `R > 0`.
pub fn posterior_information(
    x: &DMatrix<f64>,
    b: &DVector<f64>,
    r_diag: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = x.shape();
    if b.len() != n || r_diag.len() != n {
        return Err(Error::Invalid("dimension mismatch in posterior_information".into()));
    }
    if r_diag.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Numerical(
            "information form needs strictly positive noise variances".into(),
        ));
    }
    let mut x_scaled = x.clone();
    for k in 0..n {
        let w = 1.0 / r_diag[k];
        x_scaled.row_mut(k).scale_mut(w);
    }
    let mut a = x.transpose() * &x_scaled;
    for i in 0..p {
        a[(i, i)] += 1.0;
    }
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::Numerical("posterior information matrix is not positive definite".into()))?;
    let theta = chol.solve(&(x_scaled.transpose() * b));
    let mut cov = chol.inverse();
    symmetrize(&mut cov);
    Ok((theta, cov))
}

/// Sample-sized posterior: `θ̂ = Xᵀ(XXᵀ + R)⁻¹ b`,
/// `Var = I − Xᵀ(XXᵀ + R)⁻¹X`, for a full noise covariance `R`.
pub fn posterior_dual(
    x: &DMatrix<f64>,
    b: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = x.shape();
    if b.len() != n || r.shape() != (n, n) {
        return Err(Error::Invalid("dimension mismatch in posterior_dual".into()));
    }
    let m = x * x.transpose() + r;
    let chol = Cholesky::new(m).ok_or_else(|| {
        Error::Numerical(
            "dual-form system XXᵀ + Σ + σ²I is not positive definite; \
             with a zero prior this needs more samples or regularization"
                .into(),
        )
    })?;
    let theta = x.transpose() * chol.solve(b);
    let mut cov = DMatrix::identity(p, p) - x.transpose() * chol.solve(x);
    symmetrize(&mut cov);
    Ok((theta, cov))
}

/// Relative singular-value tolerance used for rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Ordinary least squares through the singular value decomposition,
/// requiring full column rank. Returned covariance is zero: this is the
/// noiseless limit where the posterior collapses onto the estimate.
fn posterior_noiseless(x: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    let report = excitation_rank(x, RANK_TOLERANCE);
    if report.rank < p {
        return Err(Error::RankDeficient {
            rank: report.rank,
            n_theta: p,
            smallest: report.singular_values.get(report.rank.saturating_sub(1)).copied().unwrap_or(0.0),
        });
    }
    let svd = x.clone().svd(true, true);
    let theta = svd
        .solve(b, RANK_TOLERANCE * report.singular_values[0])
        .map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))?;
    Ok((theta.column(0).into_owned(), DMatrix::zeros(p, p)))
}

/// Posterior over the gain parameters given a regression system and a
/// disturbance prior. Diagonal noise uses the information form; a dense
/// kernel covariance uses the dual form. When the combined noise covariance
/// is exactly zero the estimate degenerates to ordinary least squares, which
/// requires a full-rank design.
pub fn posterior(sys: &RegressionSystem, prior: &DisturbancePrior) -> Result<PosteriorModel> {
    let sigma = build_sigma(prior, &sys.angles)?;
    let n = sys.x.nrows();
    let (theta, cov) = match sigma {
        SigmaMatrix::Diagonal(v) => {
            let r = prior.sigma_sq + v;
            if r == 0.0 {
                posterior_noiseless(&sys.x, &sys.b)?
            } else {
                posterior_information(&sys.x, &sys.b, &DVector::from_element(n, r))?
            }
        }
        SigmaMatrix::Dense(mut m) => {
            for i in 0..n {
                m[(i, i)] += prior.sigma_sq;
            }
            posterior_dual(&sys.x, &sys.b, &m)?
        }
    };
    Ok(PosteriorModel {
        theta_hat: theta,
        covariance: cov,
        basis: sys.basis,
        geometry: sys.geometry,
        t_const: sys.t_const,
    })
}

/// Numerical rank of the design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    pub n_theta: usize,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
    /// Absolute threshold used: `tolerance · σ_max`.
    pub threshold: f64,
}

impl RankReport {
    pub fn is_full(&self) -> bool {
        self.rank == self.n_theta
    }

    /// Smallest singular value that still counts toward the rank.
    pub fn smallest_retained(&self) -> f64 {
        if self.rank == 0 {
            0.0
        } else {
            self.singular_values[self.rank - 1]
        }
    }
}

/// Numerical rank via singular values above `tolerance · σ_max`.
pub fn excitation_rank(x: &DMatrix<f64>, tolerance: f64) -> RankReport {
    let mut sv: Vec<f64> = x.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let smax = sv.first().copied().unwrap_or(0.0);
    let threshold = tolerance * smax;
    let rank = if smax == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > threshold).count()
    };
    RankReport { rank, n_theta: x.ncols(), singular_values: sv, threshold }
}
