//! Columnar plot emission: one comma-separated file per records file,
//! readable by any plotting tool.

use std::path::{Path, PathBuf};

use crate::error::{validation, CliError};
use crate::records::{write_atomic, ExperimentBody, RecordsFile};

fn row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn require_points(count: usize, what: &str) -> Result<(), CliError> {
    if count == 0 {
        Err(validation(format!("empty record set: no {what} to plot")))
    } else {
        Ok(())
    }
}

/// Renders the plot columns for a records body. Fails on an empty record
/// set and on kinds that define no plot.
fn render(records: &RecordsFile) -> Result<String, CliError> {
    let mut lines: Vec<String> = Vec::new();
    match &records.experiment {
        ExperimentBody::BoundTable { nu_sweep, .. } => {
            require_points(nu_sweep.len(), "degrees-of-freedom points")?;
            lines.push("nu,total".to_string());
            for point in nu_sweep {
                lines.push(row(&[point.nu, point.total]));
            }
        }
        ExperimentBody::RegretVsBound { aggregates, .. } => {
            require_points(aggregates.len(), "horizon aggregates")?;
            lines.push("t,mean_regret,mean_bound".to_string());
            for agg in aggregates {
                lines.push(row(&[agg.t as f64, agg.mean_regret, agg.mean_bound]));
            }
        }
        ExperimentBody::HierVsFlat { points, .. } => {
            require_points(points.len(), "difference-norm points")?;
            lines.push("diff_norm,delta,flat_total,hier_total".to_string());
            for point in points {
                lines.push(row(&[
                    point.diff_norm,
                    point.delta,
                    point.flat_total,
                    point.hier_total,
                ]));
            }
        }
        ExperimentBody::SparsitySweep { points, .. } => {
            require_points(points.len(), "dimension points")?;
            lines.push("n,fixed_p_total,q_form_total".to_string());
            for point in points {
                lines.push(row(&[point.n as f64, point.fixed_p_total, point.q_form_total]));
            }
        }
        ExperimentBody::RiskCoverage { cells, .. } => {
            require_points(cells.len(), "coverage cells")?;
            lines.push("kappa,delta,coverage,wilson_99_lower".to_string());
            for cell in cells {
                lines.push(row(&[
                    cell.kappa,
                    cell.delta,
                    cell.coverage,
                    cell.wilson_99_lower,
                ]));
            }
        }
        ExperimentBody::KlVerification { .. } => {
            return Err(validation(
                "kl_verification records define no plot; inspect the records file directly",
            ));
        }
    }
    lines.push(String::new());
    Ok(lines.join("\n"))
}

/// Writes the plot file next to the records file (or into
/// `HIBAYES_OUTPUT_DIR` when set) and returns its path.
pub fn emit(records: &RecordsFile, records_path: &Path) -> Result<PathBuf, CliError> {
    let body = render(records)?;
    let dir = match std::env::var("HIBAYES_OUTPUT_DIR") {
        Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
        Ok(_) => return Err(validation("HIBAYES_OUTPUT_DIR: must not be empty")),
        Err(std::env::VarError::NotPresent) => records_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
        Err(e) => return Err(validation(format!("HIBAYES_OUTPUT_DIR: {e}"))),
    };
    let path = dir.join(format!("plot_{}.csv", records.experiment.kind_name()));
    write_atomic(&path, body.as_bytes())?;
    Ok(path)
}
