//! Configuration-driven pipeline stages behind the CLI subcommands:
//! collect, identify, design, validate, and the end-to-end reproduce.
//!
//! Every stage writes its artifacts into the output directory and returns
//! them in memory, so `reproduce` can chain stages without rereading files
//! (the formats round-trip exactly, making the two paths equivalent).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::commutation::{design_commutation, design_first_harmonic, CommutationFunction};
use crate::config::ResolvedScenario;
use crate::control::RampReference;
use crate::error::{Error, Result};
use crate::estimator::{
    build_regression, excitation_rank, posterior, PosteriorModel, RankReport,
};
use crate::experiment::{run_campaign, velocity_heuristic_check, CampaignOutcome};
use crate::io::{
    read_dataset, write_dataset_csv, write_gains_plot_csv, write_inversion_deviation_csv,
    write_json, write_ripple_csv, write_trajectory_csv, DatasetSidecar, ModelFile,
    ModelProvenance, RecordMeta,
};
use crate::plant::PlantSet;
use crate::validation::{
    compare_commutations_logged, fit_report, ripple_profile, ComparisonReport, FitReport,
};

pub const DATASET_CSV: &str = "dataset.csv";
pub const DATASET_SIDECAR: &str = "dataset_provenance.json";
pub const MODEL_JSON: &str = "model.json";
pub const GAINS_PLOT_CSV: &str = "gains_plot.csv";
pub const COMMUTATION_JSON: &str = "commutation.json";
pub const BASELINE_COMMUTATION_JSON: &str = "commutation_first_harmonic.json";
pub const DESIGN_DEVIATION_CSV: &str = "design_deviation.csv";
pub const FIT_REPORT_JSON: &str = "fit_report.json";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const RIPPLE_IDENTIFIED_CSV: &str = "ripple_identified.csv";
pub const RIPPLE_BASELINE_CSV: &str = "ripple_baseline.csv";
pub const TRAJECTORY_IDENTIFIED_CSV: &str = "trajectory_identified.csv";
pub const TRAJECTORY_BASELINE_CSV: &str = "trajectory_baseline.csv";
pub const SUMMARY_JSON: &str = "summary.json";

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

/// Result of the collect stage.
#[derive(Debug)]
pub struct CollectArtifacts {
    pub outcome: CampaignOutcome,
    pub sidecar: DatasetSidecar,
    pub csv_path: PathBuf,
}

/// Run the data-collection campaign and persist the dataset.
pub fn cmd_collect(scenario: &ResolvedScenario, out: &Path) -> Result<CollectArtifacts> {
    ensure_dir(out)?;
    let plant = PlantSet {
        gain: &scenario.truth,
        disturbance: &scenario.disturbance,
        dynamics: &scenario.dynamics,
    };
    let scenario_for_ctl = scenario.clone();
    let outcome = run_campaign(
        &scenario.campaign,
        &plant,
        &move || {
            scenario_for_ctl
                .make_controller()
                .expect("controller design was validated at resolve time")
        },
        &scenario.tsf,
        &scenario.sat,
        scenario.config.seed,
        &scenario.config_hash,
    )?;

    let records: Vec<RecordMeta> = outcome
        .dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let heur = velocity_heuristic_check(&[outcome.max_errors[i]], scenario.geometry);
            RecordMeta {
                experiment_id: r.experiment_id,
                phi_o: r.phi_o,
                direction: r.direction,
                n_samples: r.len(),
                max_abs_error: outcome.max_errors[i],
                velocity_margin: outcome.velocity_margins[i],
                heuristic_margin: heur.margin,
            }
        })
        .collect();
    let sidecar = DatasetSidecar {
        config_hash: scenario.config_hash.clone(),
        seed: scenario.config.seed,
        n_t: scenario.geometry.n_t(),
        n_c: scenario.geometry.n_c(),
        omega_r: outcome.dataset.provenance.omega_r,
        backoffs: outcome.backoffs,
        records,
        discarded: outcome.discarded.clone(),
    };

    let csv_path = out.join(DATASET_CSV);
    write_dataset_csv(&csv_path, &outcome.dataset)?;
    write_json(&out.join(DATASET_SIDECAR), &sidecar)?;
    Ok(CollectArtifacts { outcome, sidecar, csv_path })
}

/// Result of the identify stage.
#[derive(Debug)]
pub struct IdentifyArtifacts {
    pub posterior: PosteriorModel,
    pub rank: RankReport,
    pub model_path: PathBuf,
}

/// Identify the gain model from a dataset already in memory.
pub fn identify_dataset(
    scenario: &ResolvedScenario,
    dataset: &crate::experiment::ExperimentDataset,
    out: &Path,
    proceed_on_rank_warning: bool,
) -> Result<IdentifyArtifacts> {
    ensure_dir(out)?;
    let sys = build_regression(dataset, scenario.config.estimator.n_h, None)?;
    let rank = excitation_rank(&sys.x, scenario.config.estimator.rank_tolerance);
    if !rank.is_full() {
        if proceed_on_rank_warning {
            eprintln!(
                "warning: design matrix rank {}/{} (smallest retained singular value {:e}); \
                 the estimate is not unique along the unexcited directions",
                rank.rank,
                rank.n_theta,
                rank.smallest_retained()
            );
        } else {
            return Err(Error::RankDeficient {
                rank: rank.rank,
                n_theta: rank.n_theta,
                smallest: rank.smallest_retained(),
            });
        }
    }
    let post = posterior(&sys, &scenario.prior)?;
    let model = ModelFile::from_posterior(
        &post,
        ModelProvenance {
            config_hash: scenario.config_hash.clone(),
            seed: scenario.config.seed,
            rank: rank.rank,
            n_theta: rank.n_theta,
            smallest_retained_singular_value: rank.smallest_retained(),
        },
    );
    let model_path = out.join(MODEL_JSON);
    write_json(&model_path, &model)?;
    write_gains_plot_csv(&out.join(GAINS_PLOT_CSV), &post, scenario.config.validation.grid_size)?;
    Ok(IdentifyArtifacts { posterior: post, rank, model_path })
}

/// Identify from the dataset files in `out`.
pub fn cmd_identify(
    scenario: &ResolvedScenario,
    out: &Path,
    proceed_on_rank_warning: bool,
) -> Result<IdentifyArtifacts> {
    let dataset = read_dataset(&out.join(DATASET_CSV), &out.join(DATASET_SIDECAR))?;
    identify_dataset(scenario, &dataset, out, proceed_on_rank_warning)
}

/// Result of the design stage.
#[derive(Debug)]
pub struct DesignArtifacts {
    pub identified: CommutationFunction,
    pub baseline: CommutationFunction,
    pub max_deviation: f64,
    pub commutation_path: PathBuf,
}

/// Design inverting commutations (full model and first-harmonic baseline)
/// from a posterior already in memory.
pub fn design_posterior(
    scenario: &ResolvedScenario,
    post: &PosteriorModel,
    out: &Path,
) -> Result<DesignArtifacts> {
    ensure_dir(out)?;
    let model = post.gain_model()?;
    let threshold = scenario.config.design.threshold_frac;
    let identified = design_commutation(&model, &scenario.tsf, threshold)?;
    let baseline = design_first_harmonic(&model, &scenario.tsf, threshold)?;
    let grid = scenario.config.validation.grid_size;
    let max_deviation = identified
        .inversion_deviation(grid)
        .expect("designed commutations always report a deviation");

    let commutation_path = out.join(COMMUTATION_JSON);
    write_json(&commutation_path, &identified)?;
    write_json(&out.join(BASELINE_COMMUTATION_JSON), &baseline)?;
    write_inversion_deviation_csv(&out.join(DESIGN_DEVIATION_CSV), &identified, grid)?;
    Ok(DesignArtifacts { identified, baseline, max_deviation, commutation_path })
}

/// Design from the model file in `out`.
pub fn cmd_design(scenario: &ResolvedScenario, out: &Path) -> Result<DesignArtifacts> {
    let model: ModelFile = crate::io::read_json(&out.join(MODEL_JSON))?;
    let post = model.to_posterior()?;
    design_posterior(scenario, &post, out)
}

/// Result of the validate stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateArtifacts {
    pub fit: FitReport,
    pub comparison: ComparisonReport,
}

/// Score a posterior and its designed commutations against the simulated
/// ground truth, including the closed-loop comparison against the
/// first-harmonic baseline.
pub fn validate_artifacts(
    scenario: &ResolvedScenario,
    post: &PosteriorModel,
    identified: &CommutationFunction,
    baseline: &CommutationFunction,
    out: &Path,
) -> Result<ValidateArtifacts> {
    ensure_dir(out)?;
    let grid = scenario.config.validation.grid_size;
    let fit = fit_report(post, &scenario.truth, grid)?;

    write_ripple_csv(
        &out.join(RIPPLE_IDENTIFIED_CSV),
        &ripple_profile(identified, &scenario.truth, grid),
    )?;
    write_ripple_csv(
        &out.join(RIPPLE_BASELINE_CSV),
        &ripple_profile(baseline, &scenario.truth, grid),
    )?;

    let plant = PlantSet {
        gain: &scenario.truth,
        disturbance: &scenario.disturbance,
        dynamics: &scenario.dynamics,
    };
    let reference = RampReference::new(
        scenario.config.validation.compare_omega_r,
        scenario.config.validation.compare_stroke_teeth * scenario.geometry.tooth_pitch(),
        0.0,
    )?;
    let scenario_for_ctl = scenario.clone();
    let outcome = compare_commutations_logged(
        identified,
        baseline,
        &plant,
        &move || {
            scenario_for_ctl
                .make_controller()
                .expect("controller design was validated at resolve time")
        },
        &reference,
        scenario.campaign.e_safety,
        scenario.campaign.trim_teeth,
        scenario.config.seed,
    )?;
    write_trajectory_csv(&out.join(TRAJECTORY_IDENTIFIED_CSV), &outcome.candidate_trajectory)?;
    write_trajectory_csv(&out.join(TRAJECTORY_BASELINE_CSV), &outcome.baseline_trajectory)?;

    let artifacts = ValidateArtifacts { fit, comparison: outcome.report };
    write_json(&out.join(FIT_REPORT_JSON), &fit)?;
    write_json(&out.join(COMPARISON_JSON), &artifacts.comparison)?;
    Ok(artifacts)
}

/// Validate from the model and commutation files in `out`.
pub fn cmd_validate(scenario: &ResolvedScenario, out: &Path) -> Result<ValidateArtifacts> {
    let model: ModelFile = crate::io::read_json(&out.join(MODEL_JSON))?;
    let post = model.to_posterior()?;
    let identified: CommutationFunction = crate::io::read_json(&out.join(COMMUTATION_JSON))?;
    let baseline: CommutationFunction =
        crate::io::read_json(&out.join(BASELINE_COMMUTATION_JSON))?;
    validate_artifacts(scenario, &post, &identified, &baseline, out)
}

/// Everything the end-to-end run measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub collection: CollectionSummary,
    pub identification: IdentificationSummary,
    pub fit: FitReport,
    pub design: DesignSummary,
    pub comparison: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSummary {
    pub n_experiments: usize,
    pub n_samples_per_experiment: usize,
    pub omega_r: f64,
    pub backoffs: usize,
    pub n_discarded: usize,
    pub max_abs_errors: Vec<f64>,
    /// Per experiment: max |e| over the `1e-4·2π/n_t` heuristic threshold.
    pub heuristic_margins: Vec<f64>,
    pub velocity_margins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationSummary {
    pub rank: usize,
    pub n_theta: usize,
    pub smallest_retained_singular_value: f64,
    pub largest_singular_value: f64,
    pub t_const: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSummary {
    /// Grid max of |ĝ·f⁺ − 1| and |ĝ·f⁻ + 1| for the identified design.
    pub max_inversion_deviation: f64,
}

/// Run collect → identify → design → validate and write a summary.
pub fn cmd_reproduce(scenario: &ResolvedScenario, out: &Path) -> Result<Summary> {
    let collect = cmd_collect(scenario, out).map_err(stage("collect"))?;
    let identify =
        identify_dataset(scenario, &collect.outcome.dataset, out, false).map_err(stage("identify"))?;
    let design = design_posterior(scenario, &identify.posterior, out).map_err(stage("design"))?;
    let validate = validate_artifacts(
        scenario,
        &identify.posterior,
        &design.identified,
        &design.baseline,
        out,
    )
    .map_err(stage("validate"))?;

    let summary = Summary {
        config_hash: scenario.config_hash.clone(),
        seed: scenario.config.seed,
        collection: CollectionSummary {
            n_experiments: collect.outcome.dataset.n_records(),
            n_samples_per_experiment: scenario.campaign.n_samples,
            omega_r: collect.outcome.dataset.provenance.omega_r,
            backoffs: collect.outcome.backoffs,
            n_discarded: collect.outcome.discarded.len(),
            max_abs_errors: collect.outcome.max_errors.clone(),
            heuristic_margins: collect.sidecar.records.iter().map(|r| r.heuristic_margin).collect(),
            velocity_margins: collect.outcome.velocity_margins.clone(),
        },
        identification: IdentificationSummary {
            rank: identify.rank.rank,
            n_theta: identify.rank.n_theta,
            smallest_retained_singular_value: identify.rank.smallest_retained(),
            largest_singular_value: identify.rank.singular_values.first().copied().unwrap_or(0.0),
            t_const: identify.posterior.t_const,
        },
        fit: validate.fit,
        design: DesignSummary { max_inversion_deviation: design.max_deviation },
        comparison: validate.comparison,
    };
    write_json(&out.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}

fn stage(name: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Io(io) => Error::Io(io),
        other => Error::Campaign(format!("stage {name}: {other}")),
    }
}
