use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use srm_ident::config::PipelineConfig;
use srm_ident::pipeline;

/// Identify the torque-current-angle relationship of a simulated switched
/// reluctance motor from closed-loop experiments, and design inverting
/// commutation functions from the result.
#[derive(Parser)]
#[command(name = "srm-ident", version, about)]
struct Cli {
    /// TOML configuration file; defaults to the bundled reference scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the pipeline seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Continue identification when the design matrix is rank deficient.
    #[arg(long, global = true)]
    proceed_on_rank_warning: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed-loop data-collection campaign.
    Collect,
    /// Estimate the gain model from a collected dataset.
    Identify,
    /// Design inverting commutation functions from an identified model.
    Design,
    /// Score the identified model and commutations against the simulation
    /// truth.
    Validate,
    /// Run the whole pipeline end to end and write a summary.
    Reproduce,
}

fn run(cli: &Cli) -> srm_ident::Result<()> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let scenario = config.resolve()?;
    let out = cli.out.as_path();

    match cli.command {
        Command::Collect => {
            let artifacts = pipeline::cmd_collect(&scenario, out)?;
            let sidecar = &artifacts.sidecar;
            println!(
                "collected {} experiments at omega_r = {} rad/s ({} backoff(s), {} discarded)",
                sidecar.records.len(),
                sidecar.omega_r,
                sidecar.backoffs,
                sidecar.discarded.len()
            );
            for r in &sidecar.records {
                println!(
                    "  experiment {} (phi_o = {}, direction {:+}): max |e| = {:.3e} rad, \
                     heuristic margin {:.3e}",
                    r.experiment_id, r.phi_o, r.direction, r.max_abs_error, r.heuristic_margin
                );
            }
            println!("dataset written to {}", artifacts.csv_path.display());
        }
        Command::Identify => {
            let artifacts =
                pipeline::cmd_identify(&scenario, out, cli.proceed_on_rank_warning)?;
            println!(
                "identified {} parameters: rank {}/{}, smallest retained singular value {:.3e}",
                artifacts.rank.n_theta,
                artifacts.rank.rank,
                artifacts.rank.n_theta,
                artifacts.rank.smallest_retained()
            );
            println!("model written to {}", artifacts.model_path.display());
        }
        Command::Design => {
            let artifacts = pipeline::cmd_design(&scenario, out)?;
            println!(
                "designed commutation inverts its model to max |g·f - 1| = {:.3e}",
                artifacts.max_deviation
            );
            println!("commutation written to {}", artifacts.commutation_path.display());
        }
        Command::Validate => {
            let artifacts = pipeline::cmd_validate(&scenario, out)?;
            println!(
                "fit: scale {:.6}, relative rms {:.3e}, 95% coverage {:.3}",
                artifacts.fit.scale, artifacts.fit.relative_rms, artifacts.fit.coverage_95
            );
            println!(
                "tracking-error ratio vs first-harmonic baseline: {:.4} \
                 (candidate {:.3e}, baseline {:.3e})",
                artifacts.comparison.ratio,
                artifacts.comparison.e2_candidate,
                artifacts.comparison.e2_baseline
            );
        }
        Command::Reproduce => {
            let summary = pipeline::cmd_reproduce(&scenario, out)?;
            println!(
                "collection: {} experiments, max |e| = {:.3e} rad",
                summary.collection.n_experiments,
                summary.collection.max_abs_errors.iter().cloned().fold(0.0, f64::max)
            );
            println!(
                "identification: rank {}/{}",
                summary.identification.rank, summary.identification.n_theta
            );
            println!(
                "fit: relative rms {:.3e}, coverage {:.3}",
                summary.fit.relative_rms, summary.fit.coverage_95
            );
            println!("comparison ratio: {:.4}", summary.comparison.ratio);
            println!("summary written to {}", out.join(pipeline::SUMMARY_JSON).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
