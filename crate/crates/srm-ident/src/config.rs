//! Pipeline configuration: a flat TOML file with one table per subsystem.
//!
//! Every field has a default reproducing the bundled reference scenario
//! (131 teeth, 3 coils, 1 kHz, 20 Hz PID, offsets ±0.2, 10 mrad/s ramps), so
//! an empty file (or no file at all) is a valid configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commutation::{SaturationLimits, TorqueSharingFunction};
use crate::error::{Error, Result};
use crate::estimator::{DisturbanceKernel, DisturbancePrior};
use crate::experiment::CampaignConfig;
use crate::geometry::MotorGeometry;
use crate::plant::{DisturbanceModel, RotorDynamics, SpatialTerm, TorqueGainModel};

fn default_pipeline_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorSection {
    pub n_t: u32,
    pub n_c: usize,
}

impl Default for MotorSection {
    fn default() -> Self {
        Self { n_t: 131, n_c: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    /// Harmonics per coil of the simulated ground truth.
    pub n_h: usize,
    /// Seed for the harmonic generator; ignored when `coeffs` is given.
    pub seed: u64,
    /// Explicit coefficients, `n_c·(1+2·n_h)` values grouped per coil.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
}

impl Default for TruthSection {
    fn default() -> Self {
        Self { n_h: 5, seed: 7, coeffs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    /// Variance of the temporal white torque disturbance.
    pub sigma1_sq: f64,
    /// Spatial sinusoids as `[amplitude, frequency, phase]` triples;
    /// defaults to one term at `n_t/1.4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_terms: Option<Vec<[f64; 3]>>,
}

impl Default for DisturbanceSection {
    fn default() -> Self {
        Self { sigma1_sq: 7e-9, spatial_terms: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub damping: f64,
    pub dt: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self { damping: 1.0, dt: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub bandwidth_hz: f64,
    /// Optional integrator clamp (torque units); off by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torque_limit: Option<f64>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self { bandwidth_hz: 20.0, torque_limit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSection {
    pub phi_o_min: f64,
    pub phi_o_max: f64,
    pub delta: f64,
    pub omega_r: f64,
    pub stroke_teeth: f64,
    /// Defaults to the velocity heuristic `1e-4 · 2π/n_t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_max: Option<f64>,
    /// Defaults to a quarter tooth pitch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_safety: Option<f64>,
    pub velocity_backoff: f64,
    pub trim_teeth: f64,
    pub n_samples: usize,
    pub omega_floor: f64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            phi_o_min: -0.2,
            phi_o_max: 0.2,
            delta: 0.4,
            omega_r: 0.01,
            stroke_teeth: 12.0,
            e_max: None,
            e_safety: None,
            velocity_backoff: 0.5,
            trim_teeth: 2.0,
            n_samples: 1000,
            omega_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    /// Harmonics per coil used for identification.
    pub n_h: usize,
    /// "white" or "periodic".
    pub kernel: String,
    pub kernel_variance: f64,
    /// Temporal white-noise prior variance.
    pub sigma_sq: f64,
    /// Periodic-kernel parameters, required when `kernel = "periodic"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    pub rank_tolerance: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            n_h: 5,
            kernel: "white".into(),
            kernel_variance: 1e-6,
            sigma_sq: 0.0,
            lengthscale: None,
            period: None,
            rank_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    /// Per-coil activation threshold as a fraction of that coil's peak gain.
    pub threshold_frac: f64,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self { threshold_frac: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsfSection {
    pub overlap: f64,
}

impl Default for TsfSection {
    fn default() -> Self {
        Self { overlap: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationSection {
    /// Symmetric clamp on the inverse reference gain.
    pub limit: f64,
}

impl Default for SaturationSection {
    fn default() -> Self {
        Self { limit: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    /// Grid points per tooth for fit and ripple evaluation.
    pub grid_size: usize,
    /// Reference velocity of the commutation comparison.
    pub compare_omega_r: f64,
    pub compare_stroke_teeth: f64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self { grid_size: 4096, compare_omega_r: 0.1, compare_stroke_teeth: 12.0 }
    }
}

/// Full pipeline configuration as read from (or written to) TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    #[serde(default = "default_pipeline_seed")]
    pub seed: u64,
    pub motor: MotorSection,
    pub truth: TruthSection,
    pub disturbance: DisturbanceSection,
    pub dynamics: DynamicsSection,
    pub controller: ControllerSection,
    pub campaign: CampaignSection,
    pub estimator: EstimatorSection,
    pub design: DesignSection,
    pub tsf: TsfSection,
    pub saturation: SaturationSection,
    pub validation: ValidationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: default_pipeline_seed(),
            motor: MotorSection::default(),
            truth: TruthSection::default(),
            disturbance: DisturbanceSection::default(),
            dynamics: DynamicsSection::default(),
            controller: ControllerSection::default(),
            campaign: CampaignSection::default(),
            estimator: EstimatorSection::default(),
            design: DesignSection::default(),
            tsf: TsfSection::default(),
            saturation: SaturationSection::default(),
            validation: ValidationSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parse a TOML config file. A missing `path` of `None` yields defaults.
    pub fn load(path: Option<&std::path::Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "config file {} does not exist",
                        p.display()
                    )));
                }
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Resolve into validated runtime objects.
    pub fn resolve(&self) -> Result<ResolvedScenario> {
        let geometry = MotorGeometry::new(self.motor.n_t, self.motor.n_c)?;
        let truth = match &self.truth.coeffs {
            Some(coeffs) => TorqueGainModel::new(geometry, self.truth.n_h, coeffs.clone())?,
            None => TorqueGainModel::seeded_truth(geometry, self.truth.n_h, self.truth.seed)?,
        };
        let spatial: Vec<SpatialTerm> = self
            .disturbance
            .spatial_terms
            .clone()
            .unwrap_or_else(|| vec![[5e-4, geometry.n_t() as f64 / 1.4, 0.0]])
            .into_iter()
            .map(|[amplitude, spatial_frequency, phase]| SpatialTerm {
                amplitude,
                spatial_frequency,
                phase,
            })
            .collect();
        let disturbance = DisturbanceModel::new(geometry, self.disturbance.sigma1_sq, spatial)?;
        let dynamics = RotorDynamics::new(self.dynamics.damping, self.dynamics.dt)?;
        let tsf = TorqueSharingFunction::new(self.tsf.overlap)?;
        let sat = SaturationLimits::symmetric(self.saturation.limit)?;

        let campaign = CampaignConfig {
            phi_o_min: self.campaign.phi_o_min,
            phi_o_max: self.campaign.phi_o_max,
            delta: self.campaign.delta,
            omega_r: self.campaign.omega_r,
            stroke_teeth: self.campaign.stroke_teeth,
            e_max: self.campaign.e_max.unwrap_or(1e-4 * geometry.tooth_pitch()),
            e_safety: self.campaign.e_safety.unwrap_or(0.25 * geometry.tooth_pitch()),
            velocity_backoff: self.campaign.velocity_backoff,
            trim_teeth: self.campaign.trim_teeth,
            n_samples: self.campaign.n_samples,
            omega_floor: self.campaign.omega_floor,
        };
        campaign.validate()?;

        let kernel = match self.estimator.kernel.as_str() {
            "white" => DisturbanceKernel::White { variance: self.estimator.kernel_variance },
            "periodic" => DisturbanceKernel::Periodic {
                variance: self.estimator.kernel_variance,
                lengthscale: self.estimator.lengthscale.ok_or_else(|| {
                    Error::Config("periodic kernel needs estimator.lengthscale".into())
                })?,
                period: self.estimator.period.ok_or_else(|| {
                    Error::Config("periodic kernel needs estimator.period".into())
                })?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown estimator.kernel \"{other}\" (expected \"white\" or \"periodic\")"
                )))
            }
        };
        let prior = DisturbancePrior { sigma_sq: self.estimator.sigma_sq, kernel };
        prior.validate()?;

        if self.estimator.n_h < 1 {
            return Err(Error::Config("estimator.n_h must be at least 1".into()));
        }
        if !(self.design.threshold_frac > 0.0) {
            return Err(Error::Config("design.threshold_frac must be positive".into()));
        }
        if self.validation.grid_size < 16 {
            return Err(Error::Config("validation.grid_size must be at least 16".into()));
        }
        if !(self.validation.compare_omega_r > 0.0) || !(self.validation.compare_stroke_teeth > 0.0)
        {
            return Err(Error::Config("validation comparison parameters must be positive".into()));
        }

        let hash = self.content_hash();
        Ok(ResolvedScenario {
            config: self.clone(),
            config_hash: hash,
            geometry,
            truth,
            disturbance,
            dynamics,
            tsf,
            sat,
            campaign,
            prior,
        })
    }

    /// Short content hash of the configuration, recorded in every artifact.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config is always serializable");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

/// Validated runtime objects derived from one [`PipelineConfig`].
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub config: PipelineConfig,
    pub config_hash: String,
    pub geometry: MotorGeometry,
    pub truth: TorqueGainModel,
    pub disturbance: DisturbanceModel,
    pub dynamics: RotorDynamics,
    pub tsf: TorqueSharingFunction,
    pub sat: SaturationLimits,
    pub campaign: CampaignConfig,
    pub prior: DisturbancePrior,
}

impl ResolvedScenario {
    pub fn make_controller(&self) -> Result<crate::control::PidController> {
        let ctl = crate::control::pid_design(self.config.controller.bandwidth_hz, &self.dynamics)?;
        Ok(match self.config.controller.torque_limit {
            Some(limit) => ctl.with_torque_limit(limit),
            None => ctl,
        })
    }
}
