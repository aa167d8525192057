//! Closed-loop data collection.
//!
//! A campaign sweeps the commutation offset over a configured range, runs
//! one constant-velocity experiment per offset in each direction, and
//! supervises every run: trajectories breaching the safety threshold are
//! discarded, and if the post-transient error exceeds the accuracy threshold
//! the whole campaign restarts at a reduced reference velocity so that both
//! directions share one velocity (and therefore one steady torque
//! magnitude). Retained runs are trimmed of their transient and downsampled
//! to a fixed sample count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commutation::{CommutationFunction, SaturationLimits, TorqueSharingFunction};
use crate::control::{simulate_closed_loop, PidController, RampReference};
use crate::error::{Error, Result};
use crate::geometry::MotorGeometry;
use crate::plant::PlantSet;

/// Parameters of one data-collection campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    /// First commutation offset (rad).
    pub phi_o_min: f64,
    /// Last commutation offset (rad, inclusive).
    pub phi_o_max: f64,
    /// Offset step (rad).
    pub delta: f64,
    /// Initial reference velocity magnitude (rad/s).
    pub omega_r: f64,
    /// Reference stroke in tooth pitches.
    pub stroke_teeth: f64,
    /// Largest post-transient |e| a run may show and still be kept (rad).
    pub e_max: f64,
    /// Abort threshold on raw |e|, indicating instability (rad).
    pub e_safety: f64,
    /// Velocity multiplier applied when e_max is breached, in (0, 1).
    pub velocity_backoff: f64,
    /// Teeth discarded at the start of every run to drop the transient.
    pub trim_teeth: f64,
    /// Samples kept per experiment after downsampling.
    pub n_samples: usize,
    /// Velocity floor below which the campaign gives up (rad/s).
    pub omega_floor: f64,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_safety > self.e_max && self.e_max > 0.0) {
            return Err(Error::Config("campaign requires e_safety > e_max > 0".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("offset step delta must be positive".into()));
        }
        if !(self.phi_o_min < self.phi_o_max) {
            return Err(Error::Config("offset range requires phi_o_min < phi_o_max".into()));
        }
        if !(self.velocity_backoff > 0.0 && self.velocity_backoff < 1.0) {
            return Err(Error::Config("velocity_backoff must lie in (0, 1)".into()));
        }
        if !(self.omega_r > 0.0) || !(self.stroke_teeth > 0.0) {
            return Err(Error::Config("omega_r and stroke_teeth must be positive".into()));
        }
        if !(self.trim_teeth >= 0.0) || self.n_samples < 2 {
            return Err(Error::Config("trim_teeth must be >= 0 and n_samples >= 2".into()));
        }
        if !(self.omega_floor > 0.0) {
            return Err(Error::Config("omega_floor must be positive".into()));
        }
        Ok(())
    }

    /// Offsets visited by one sweep, inclusive of the upper bound.
    pub fn offsets(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let eps = self.delta * 1e-9;
        let mut x = self.phi_o_min;
        while x <= self.phi_o_max + eps {
            out.push(x);
            x += self.delta;
        }
        out
    }
}

/// Samples of one retained experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub experiment_id: usize,
    pub phi_o: f64,
    /// +1 forward, −1 backward.
    pub direction: i8,
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    pub t_star: Vec<f64>,
    /// Squared currents, row-major with `n_c` columns.
    pub u: Vec<f64>,
    pub n_c: usize,
    // Diagnostics carried along for supervision and certificates; not part
    // of the persisted sample set.
    pub e: Vec<f64>,
    pub omega: Vec<f64>,
}

impl ExperimentRecord {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn u_row(&self, k: usize) -> &[f64] {
        &self.u[k * self.n_c..(k + 1) * self.n_c]
    }

    pub fn max_abs_error(&self) -> f64 {
        self.e.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    fn from_trajectory(
        experiment_id: usize,
        phi_o: f64,
        direction: i8,
        traj: &crate::control::ClosedLoopTrajectory,
    ) -> Self {
        Self {
            experiment_id,
            phi_o,
            direction,
            t: traj.t.clone(),
            phi: traj.phi.clone(),
            t_star: traj.t_star.clone(),
            u: traj.u.clone(),
            n_c: traj.n_c,
            e: traj.e.clone(),
            omega: traj.omega.clone(),
        }
    }

    fn select(&self, keep: &[usize]) -> Self {
        let mut u = Vec::with_capacity(keep.len() * self.n_c);
        for &k in keep {
            u.extend_from_slice(self.u_row(k));
        }
        Self {
            experiment_id: self.experiment_id,
            phi_o: self.phi_o,
            direction: self.direction,
            t: keep.iter().map(|&k| self.t[k]).collect(),
            phi: keep.iter().map(|&k| self.phi[k]).collect(),
            t_star: keep.iter().map(|&k| self.t_star[k]).collect(),
            u,
            n_c: self.n_c,
            e: if self.e.is_empty() {
                Vec::new()
            } else {
                keep.iter().map(|&k| self.e[k]).collect()
            },
            omega: if self.omega.is_empty() {
                Vec::new()
            } else {
                keep.iter().map(|&k| self.omega[k]).collect()
            },
        }
    }
}

/// Remove the start-up transient: all samples within `trim_teeth` tooth
/// pitches of the initial angle.
pub fn trim_transient(
    record: &ExperimentRecord,
    trim_teeth: f64,
    geometry: MotorGeometry,
) -> Result<ExperimentRecord> {
    if record.is_empty() {
        return Err(Error::Dataset("cannot trim an empty record".into()));
    }
    if trim_teeth == 0.0 {
        return Ok(record.clone());
    }
    let span = trim_teeth * geometry.tooth_pitch();
    let phi0 = record.phi[0];
    let keep: Vec<usize> = (0..record.len())
        .filter(|&k| (record.phi[k] - phi0).abs() >= span)
        .collect();
    if keep.is_empty() {
        return Err(Error::Dataset(format!(
            "record too short: it never travels {trim_teeth} teeth from its start"
        )));
    }
    Ok(record.select(&keep))
}

/// Uniform index decimation down to exactly `n_samples`, keeping the first
/// and last sample and preserving order.
pub fn downsample(record: &ExperimentRecord, n_samples: usize) -> Result<ExperimentRecord> {
    let n = record.len();
    if n < n_samples {
        return Err(Error::Dataset(format!(
            "record has {n} samples, fewer than the requested {n_samples}"
        )));
    }
    if n == n_samples {
        return Ok(record.clone());
    }
    if n_samples < 2 {
        return Err(Error::Dataset("downsampling needs at least 2 samples".into()));
    }
    let keep: Vec<usize> = (0..n_samples)
        .map(|i| ((i as f64) * ((n - 1) as f64) / ((n_samples - 1) as f64)).round() as usize)
        .collect();
    Ok(record.select(&keep))
}

/// Velocity heuristic: the peak tracking error must be far below the tooth
/// pitch for the constant-torque assumption to hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeuristicCheck {
    pub pass: bool,
    /// max |e| divided by the pass threshold `1e-4 · 2π/n_t`.
    pub margin: f64,
}

pub fn velocity_heuristic_check(e: &[f64], geometry: MotorGeometry) -> HeuristicCheck {
    let max_e = e.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let threshold = 1e-4 * geometry.tooth_pitch();
    let margin = max_e / threshold;
    HeuristicCheck { pass: margin < 1.0, margin }
}

/// Provenance recorded with a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub config_hash: String,
    pub seed: u64,
    /// Velocity magnitude the campaign settled on after any backoffs.
    pub omega_r: f64,
}

/// Retained experiments of one campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDataset {
    pub records: Vec<ExperimentRecord>,
    pub geometry: MotorGeometry,
    pub provenance: DatasetProvenance,
}

impl ExperimentDataset {
    pub fn new(
        records: Vec<ExperimentRecord>,
        geometry: MotorGeometry,
        provenance: DatasetProvenance,
    ) -> Result<Self> {
        let mut offsets: Vec<u64> = records.iter().map(|r| r.phi_o.to_bits()).collect();
        offsets.sort_unstable();
        offsets.dedup();
        if offsets.len() < 2 {
            return Err(Error::Campaign(
                "dataset needs at least two distinct commutation offsets for excitation".into(),
            ));
        }
        let forward = records.iter().any(|r| r.direction > 0);
        let backward = records.iter().any(|r| r.direction < 0);
        if !forward || !backward {
            return Err(Error::Campaign("dataset needs experiments in both directions".into()));
        }
        Ok(Self { records, geometry, provenance })
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn total_samples(&self) -> usize {
        self.records.iter().map(|r| r.len()).sum()
    }
}

/// A run dropped by supervision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscardedRun {
    pub phi_o: f64,
    pub direction: i8,
    /// Raw |e| at the abort sample.
    pub error: f64,
}

/// Everything a campaign produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutcome {
    pub dataset: ExperimentDataset,
    pub discarded: Vec<DiscardedRun>,
    pub backoffs: usize,
    /// Per retained record: post-transient max |e|.
    pub max_errors: Vec<f64>,
    /// Per retained record: worst relative velocity deviation from ω_r.
    pub velocity_margins: Vec<f64>,
}

fn experiment_rng(seed: u64, offset_index: usize, direction: i8) -> ChaCha8Rng {
    // One fixed stream per (offset, direction) so supervision decisions do
    // not change the disturbance realizations of other runs.
    let mix = seed
        .wrapping_add((offset_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(if direction > 0 { 0 } else { 0x5851_F42D_4C95_7F2D });
    ChaCha8Rng::seed_from_u64(mix)
}

/// Run the full data-collection campaign.
///
/// `make_ctl` provides a fresh controller per experiment. The campaign fails
/// if the reference velocity falls below the configured floor without
/// meeting `e_max`, or if supervision leaves too few usable experiments.
pub fn run_campaign(
    config: &CampaignConfig,
    plant: &PlantSet<'_>,
    make_ctl: &dyn Fn() -> PidController,
    tsf: &TorqueSharingFunction,
    sat: &SaturationLimits,
    seed: u64,
    config_hash: &str,
) -> Result<CampaignOutcome> {
    let geometry = plant.gain.geometry();
    let offsets = config.offsets();
    let stroke = config.stroke_teeth * geometry.tooth_pitch();
    let mut omega = config.omega_r.abs();
    let mut backoffs = 0usize;

    'campaign: loop {
        if omega < config.omega_floor {
            return Err(Error::Campaign(format!(
                "reference velocity fell below the floor {} rad/s while trying to meet \
                 e_max = {} rad; the accuracy threshold is not attainable",
                config.omega_floor, config.e_max
            )));
        }

        let mut records = Vec::new();
        let mut discarded = Vec::new();
        let mut max_errors = Vec::new();
        let mut velocity_margins = Vec::new();
        let mut experiment_id = 0usize;

        for &direction in &[1i8, -1] {
            for (oi, &phi_o) in offsets.iter().enumerate() {
                let cf = CommutationFunction::imperfect(geometry, phi_o, *tsf, *sat);
                let reference =
                    RampReference::new(direction as f64 * omega, stroke, 0.0)?;
                let mut ctl = make_ctl();
                let mut rng = experiment_rng(seed, oi, direction);
                let out =
                    simulate_closed_loop(
                    plant,
                    &cf,
                    &mut ctl,
                    &reference,
                    reference.duration(),
                    config.e_safety,
                    &mut rng,
                );

                if let Some(breach) = out.safety_breach {
                    discarded.push(DiscardedRun {
                        phi_o,
                        direction,
                        error: breach.error.abs(),
                    });
                    experiment_id += 1;
                    continue;
                }

                let raw = ExperimentRecord::from_trajectory(
                    experiment_id,
                    phi_o,
                    direction,
                    &out.trajectory,
                );
                let trimmed = trim_transient(&raw, config.trim_teeth, geometry)?;
                let max_e = trimmed.max_abs_error();
                if max_e > config.e_max {
                    omega *= config.velocity_backoff;
                    backoffs += 1;
                    continue 'campaign;
                }

                let omega_ref = direction as f64 * omega;
                let vel_margin = trimmed
                    .omega
                    .iter()
                    .map(|&w| (w - omega_ref).abs() / omega)
                    .fold(0.0, f64::max);

                records.push(downsample(&trimmed, config.n_samples)?);
                max_errors.push(max_e);
                velocity_margins.push(vel_margin);
                experiment_id += 1;
            }
        }

        let dataset = ExperimentDataset::new(
            records,
            geometry,
            DatasetProvenance {
                config_hash: config_hash.to_string(),
                seed,
                omega_r: omega,
            },
        )
        .map_err(|e| match e {
            Error::Campaign(msg) if !discarded.is_empty() => Error::Campaign(format!(
                "{msg} ({} run(s) discarded for breaching e_safety = {})",
                discarded.len(),
                config.e_safety
            )),
            other => other,
        })?;

        return Ok(CampaignOutcome {
            dataset,
            discarded,
            backoffs,
            max_errors,
            velocity_margins,
        });
    }
}
