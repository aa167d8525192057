//! Metrics that turn the method's claims into numbers: model fit against a
//! known truth, tracking norms, torque ripple profiles, and the head-to-head
//! comparison of two commutation functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commutation::CommutationFunction;
use crate::control::{simulate_closed_loop, PidController, RampReference};
use crate::error::{Error, Result};
use crate::estimator::PosteriorModel;
use crate::plant::{PlantSet, TorqueGainModel};

/// How well a posterior matches a known gain, after the best scalar
/// alignment (the estimate's overall scale is not identifiable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Least-squares scalar `argmin_c ‖c·ĝ − g‖` over the grid.
    pub scale: f64,
    /// `‖scale·ĝ − g‖ / ‖g‖` over the grid.
    pub relative_rms: f64,
    /// Fraction of grid points whose true gain lies inside the scaled 95%
    /// band.
    pub coverage_95: f64,
}

/// Compare a posterior against a reference gain on a grid over one tooth.
pub fn fit_report(
    post: &PosteriorModel,
    truth: &TorqueGainModel,
    grid_size: usize,
) -> Result<FitReport> {
    if post.geometry != truth.geometry() {
        return Err(Error::Invalid("posterior and truth have different geometries".into()));
    }
    let geometry = truth.geometry();
    let pitch = geometry.tooth_pitch();
    let n_c = geometry.n_c();

    let mut dot_est_truth = 0.0;
    let mut dot_est_est = 0.0;
    let mut grid = Vec::with_capacity(grid_size);
    for k in 0..grid_size {
        let phi = pitch * k as f64 / grid_size as f64;
        let (mean, cov) = post.eval(phi);
        let g = truth.gain(phi);
        for c in 0..n_c {
            dot_est_truth += mean[c] * g[c];
            dot_est_est += mean[c] * mean[c];
        }
        grid.push((mean, cov, g));
    }
    if dot_est_est == 0.0 {
        return Err(Error::Invalid("posterior mean is identically zero; no scale exists".into()));
    }
    let scale = dot_est_truth / dot_est_est;

    let mut err_sq = 0.0;
    let mut truth_sq = 0.0;
    let mut covered = 0usize;
    for (mean, cov, g) in &grid {
        for c in 0..n_c {
            let e = scale * mean[c] - g[c];
            err_sq += e * e;
            truth_sq += g[c] * g[c];
            let half = 1.96 * scale.abs() * cov[(c, c)].max(0.0).sqrt();
            if e.abs() <= half {
                covered += 1;
            }
        }
    }
    if truth_sq == 0.0 {
        return Err(Error::Invalid("reference gain is identically zero".into()));
    }
    Ok(FitReport {
        scale,
        relative_rms: (err_sq / truth_sq).sqrt(),
        coverage_95: covered as f64 / (grid_size * n_c) as f64,
    })
}

/// Sup and energy norms of a tracking-error window.
pub fn tracking_metrics(e: &[f64]) -> (f64, f64) {
    let sup = e.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let energy = e.iter().map(|&x| x * x).sum::<f64>().sqrt();
    (sup, energy)
}

/// Zero-mean torque ripple of a commutation's positive branch against a
/// reference gain, over one tooth.
#[derive(Debug, Clone, PartialEq)]
pub struct RippleProfile {
    pub angles: Vec<f64>,
    pub ripple: Vec<f64>,
    /// Mean of `g·f⁺` that was subtracted.
    pub mean: f64,
}

impl RippleProfile {
    pub fn max_abs(&self) -> f64 {
        self.ripple.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }
}

/// Evaluate `g_true(φ)·f⁺(φ)` on a grid and remove its mean.
pub fn ripple_profile(
    cf: &CommutationFunction,
    truth: &TorqueGainModel,
    grid_size: usize,
) -> RippleProfile {
    let pitch = truth.geometry().tooth_pitch();
    let angles: Vec<f64> = (0..grid_size).map(|k| pitch * k as f64 / grid_size as f64).collect();
    let raw: Vec<f64> = angles
        .iter()
        .map(|&phi| truth.gain(phi).dot(&cf.f_plus(phi)))
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    RippleProfile {
        angles,
        ripple: raw.iter().map(|&r| r - mean).collect(),
        mean,
    }
}

/// Outcome of running two commutations on the identical scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// `‖e‖₂` of the candidate divided by `‖e‖₂` of the baseline.
    pub ratio: f64,
    pub e2_candidate: f64,
    pub e2_baseline: f64,
    pub e_inf_candidate: f64,
    pub e_inf_baseline: f64,
}

/// A comparison report together with the two post-transient trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOutcome {
    pub report: ComparisonReport,
    pub candidate_trajectory: crate::control::ClosedLoopTrajectory,
    pub baseline_trajectory: crate::control::ClosedLoopTrajectory,
}

/// Run `candidate` and `baseline` closed loops on identical references and
/// disturbance realizations and compare post-transient error norms.
#[allow(clippy::too_many_arguments)]
pub fn compare_commutations(
    candidate: &CommutationFunction,
    baseline: &CommutationFunction,
    plant: &PlantSet<'_>,
    make_ctl: &dyn Fn() -> PidController,
    reference: &RampReference,
    e_safety: f64,
    trim_teeth: f64,
    seed: u64,
) -> Result<ComparisonReport> {
    compare_commutations_logged(
        candidate, baseline, plant, make_ctl, reference, e_safety, trim_teeth, seed,
    )
    .map(|o| o.report)
}

/// [`compare_commutations`], additionally returning the trimmed
/// trajectories for inspection or persistence.
#[allow(clippy::too_many_arguments)]
pub fn compare_commutations_logged(
    candidate: &CommutationFunction,
    baseline: &CommutationFunction,
    plant: &PlantSet<'_>,
    make_ctl: &dyn Fn() -> PidController,
    reference: &RampReference,
    e_safety: f64,
    trim_teeth: f64,
    seed: u64,
) -> Result<ComparisonOutcome> {
    let geometry = plant.gain.geometry();
    let run = |cf: &CommutationFunction,
               label: &str|
     -> Result<(f64, f64, crate::control::ClosedLoopTrajectory)> {
        let mut ctl = make_ctl();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = simulate_closed_loop(
            plant,
            cf,
            &mut ctl,
            reference,
            reference.duration(),
            e_safety,
            &mut rng,
        );
        if let Some(breach) = out.safety_breach {
            return Err(Error::Campaign(format!(
                "{label} commutation breached e_safety = {e_safety} at sample {} (|e| = {})",
                breach.sample,
                breach.error.abs()
            )));
        }
        let traj = out.trajectory;
        let span = trim_teeth * geometry.tooth_pitch();
        let phi0 = traj.phi[0];
        let start = traj
            .phi
            .iter()
            .position(|&p| (p - phi0).abs() >= span)
            .ok_or_else(|| Error::Dataset("comparison run never left the transient window".into()))?;
        let tail = traj.window(start..traj.len());
        let (sup, energy) = tracking_metrics(&tail.e);
        Ok((sup, energy, tail))
    };
    let (inf_c, e2_c, traj_c) = run(candidate, "candidate")?;
    let (inf_b, e2_b, traj_b) = run(baseline, "baseline")?;
    if e2_b == 0.0 {
        return Err(Error::Numerical("baseline error norm is zero; ratio undefined".into()));
    }
    Ok(ComparisonOutcome {
        report: ComparisonReport {
            ratio: e2_c / e2_b,
            e2_candidate: e2_c,
            e2_baseline: e2_b,
            e_inf_candidate: inf_c,
            e_inf_baseline: inf_b,
        },
        candidate_trajectory: traj_c,
        baseline_trajectory: traj_b,
    })
}
