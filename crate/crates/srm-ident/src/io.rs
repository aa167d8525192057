//! File formats for the pipeline artifacts.
//!
//! Datasets are CSV with a JSON provenance sidecar; models, commutation
//! functions and reports are JSON. Floating-point values are written in
//! shortest round-trip decimal form, so rereading an artifact reproduces the
//! in-memory object bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::FourierBasis;
use crate::commutation::CommutationFunction;
use crate::error::{Error, Result};
use crate::estimator::PosteriorModel;
use crate::experiment::{DatasetProvenance, DiscardedRun, ExperimentDataset, ExperimentRecord};
use crate::geometry::MotorGeometry;
use crate::validation::RippleProfile;

/// Per-record diagnostics stored next to the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub experiment_id: usize,
    pub phi_o: f64,
    pub direction: i8,
    pub n_samples: usize,
    /// Post-transient max |e| of the full-rate run.
    pub max_abs_error: f64,
    /// Worst relative velocity deviation on the retained window.
    pub velocity_margin: f64,
    /// max |e| over the heuristic threshold `1e-4·2π/n_t`.
    pub heuristic_margin: f64,
}

/// JSON sidecar accompanying `dataset.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub config_hash: String,
    pub seed: u64,
    pub n_t: u32,
    pub n_c: usize,
    /// Final reference velocity after any backoffs.
    pub omega_r: f64,
    pub backoffs: usize,
    pub records: Vec<RecordMeta>,
    pub discarded: Vec<DiscardedRun>,
}

/// Write the sample table: one row per retained sample.
pub fn write_dataset_csv(path: &Path, dataset: &ExperimentDataset) -> Result<()> {
    let n_c = dataset.geometry.n_c();
    let mut out = String::new();
    out.push_str("experiment_id,phi_o,direction,t,phi,T_star");
    for c in 0..n_c {
        write!(out, ",u_{}", c + 1).unwrap();
    }
    out.push('\n');
    for r in &dataset.records {
        for k in 0..r.len() {
            write!(
                out,
                "{},{},{},{},{},{}",
                r.experiment_id, r.phi_o, r.direction, r.t[k], r.phi[k], r.t_star[k]
            )
            .unwrap();
            for &u in r.u_row(k) {
                write!(out, ",{u}").unwrap();
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a dataset back from its CSV and sidecar.
///
/// The reader is deliberately lenient about campaign-level invariants
/// (offset diversity, direction balance): a structurally valid file loads,
/// and downstream rank diagnostics decide whether it is usable.
pub fn read_dataset(csv_path: &Path, sidecar_path: &Path) -> Result<ExperimentDataset> {
    let sidecar: DatasetSidecar = read_json(sidecar_path)?;
    let geometry = MotorGeometry::new(sidecar.n_t, sidecar.n_c)?;
    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", csv_path.display())))?;
    let expected_cols = 6 + sidecar.n_c;
    if header.split(',').count() != expected_cols {
        return Err(Error::Parse(format!(
            "{}: expected {expected_cols} columns, found header \"{header}\"",
            csv_path.display()
        )));
    }

    let mut records: Vec<ExperimentRecord> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(Error::Parse(format!(
                "{}:{}: expected {expected_cols} fields, got {}",
                csv_path.display(),
                lineno + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "{}:{}: bad {what} value \"{s}\"",
                    csv_path.display(),
                    lineno + 2
                ))
            })
        };
        let id: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad experiment_id \"{}\"", fields[0])))?;
        let phi_o = parse_f(fields[1], "phi_o")?;
        let direction: i8 = fields[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad direction \"{}\"", fields[2])))?;
        let t = parse_f(fields[3], "t")?;
        let phi = parse_f(fields[4], "phi")?;
        let t_star = parse_f(fields[5], "T_star")?;

        if records.last().map(|r| r.experiment_id) != Some(id) {
            records.push(ExperimentRecord {
                experiment_id: id,
                phi_o,
                direction,
                t: Vec::new(),
                phi: Vec::new(),
                t_star: Vec::new(),
                u: Vec::new(),
                n_c: sidecar.n_c,
                e: Vec::new(),
                omega: Vec::new(),
            });
        }
        let record = records.last_mut().unwrap();
        record.t.push(t);
        record.phi.push(phi);
        record.t_star.push(t_star);
        for c in 0..sidecar.n_c {
            record.u.push(parse_f(fields[6 + c], "current")?);
        }
    }
    if records.is_empty() {
        return Err(Error::Parse(format!("{}: no samples", csv_path.display())));
    }
    Ok(ExperimentDataset {
        records,
        geometry,
        provenance: DatasetProvenance {
            config_hash: sidecar.config_hash,
            seed: sidecar.seed,
            omega_r: sidecar.omega_r,
        },
    })
}

/// Persisted posterior model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_t: u32,
    pub n_c: usize,
    pub n_h: usize,
    pub theta_hat: Vec<f64>,
    /// Row-major covariance.
    pub covariance: Vec<Vec<f64>>,
    pub t_const: f64,
    pub provenance: ModelProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub config_hash: String,
    pub seed: u64,
    pub rank: usize,
    pub n_theta: usize,
    pub smallest_retained_singular_value: f64,
}

impl ModelFile {
    pub fn from_posterior(post: &PosteriorModel, provenance: ModelProvenance) -> Self {
        let p = post.theta_hat.len();
        Self {
            n_t: post.geometry.n_t(),
            n_c: post.geometry.n_c(),
            n_h: post.basis.n_h(),
            theta_hat: post.theta_hat.iter().copied().collect(),
            covariance: (0..p)
                .map(|i| (0..p).map(|j| post.covariance[(i, j)]).collect())
                .collect(),
            t_const: post.t_const,
            provenance,
        }
    }

    pub fn to_posterior(&self) -> Result<PosteriorModel> {
        let geometry = MotorGeometry::new(self.n_t, self.n_c)?;
        let basis = FourierBasis::new(self.n_t, self.n_h);
        let p = basis.n_theta(self.n_c);
        if self.theta_hat.len() != p || self.covariance.len() != p {
            return Err(Error::Parse(format!(
                "model file is inconsistent: expected {p} parameters, \
                 got {} coefficients and {} covariance rows",
                self.theta_hat.len(),
                self.covariance.len()
            )));
        }
        let mut cov = DMatrix::zeros(p, p);
        for (i, row) in self.covariance.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Parse("model covariance is not square".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                cov[(i, j)] = v;
            }
        }
        Ok(PosteriorModel {
            theta_hat: DVector::from_column_slice(&self.theta_hat),
            covariance: cov,
            basis,
            geometry,
            t_const: self.t_const,
        })
    }
}

/// Gain mean and 95% bounds per coil over one tooth, for plotting.
pub fn write_gains_plot_csv(path: &Path, post: &PosteriorModel, grid_size: usize) -> Result<()> {
    let n_c = post.geometry.n_c();
    let pitch = post.geometry.tooth_pitch();
    let mut out = String::from("phi");
    for c in 0..n_c {
        write!(out, ",g_mean_{0},g_lo_{0},g_hi_{0}", c + 1).unwrap();
    }
    out.push('\n');
    for k in 0..grid_size {
        let phi = pitch * k as f64 / grid_size as f64;
        let (mean, lo, hi) = post.bounds_95(phi);
        write!(out, "{phi}").unwrap();
        for c in 0..n_c {
            write!(out, ",{},{},{}", mean[c], lo[c], hi[c]).unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Ripple profile as plot data.
pub fn write_ripple_csv(path: &Path, profile: &RippleProfile) -> Result<()> {
    let mut out = String::from("phi,ripple\n");
    for (phi, r) in profile.angles.iter().zip(&profile.ripple) {
        writeln!(out, "{phi},{r}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Logged closed-loop run: one row per sample,
/// `t, phi_r, phi, e, T_star, u_1…u_nc`.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &crate::control::ClosedLoopTrajectory,
) -> Result<()> {
    let mut out = String::from("t,phi_r,phi,e,T_star");
    for c in 0..traj.n_c {
        write!(out, ",u_{}", c + 1).unwrap();
    }
    out.push('\n');
    for k in 0..traj.len() {
        write!(
            out,
            "{},{},{},{},{}",
            traj.t[k], traj.phi_r[k], traj.phi[k], traj.e[k], traj.t_star[k]
        )
        .unwrap();
        for &u in traj.u_row(k) {
            write!(out, ",{u}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Inversion deviation `ĝ·f⁺ − 1` of a designed commutation over one tooth.
pub fn write_inversion_deviation_csv(
    path: &Path,
    cf: &CommutationFunction,
    grid_size: usize,
) -> Result<()> {
    let model = cf
        .design_model()
        .ok_or_else(|| Error::Invalid("imperfect commutations have no design model".into()))?;
    let pitch = model.geometry().tooth_pitch();
    let mut out = String::from("phi,deviation_plus,deviation_minus\n");
    for k in 0..grid_size {
        let phi = pitch * k as f64 / grid_size as f64;
        let g = model.gain(phi);
        let dp = g.dot(&cf.f_plus(phi)) - 1.0;
        let dm = g.dot(&cf.f_minus(phi)) + 1.0;
        writeln!(out, "{phi},{dp},{dm}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::Config(format!("{} does not exist", path.display())));
    }
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
