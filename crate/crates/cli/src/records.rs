//! Self-describing, schema-versioned result records: one JSON file per
//! experiment run, carrying a config echo, per-replicate records, and
//! aggregates recomputable from the records.

use serde::{Deserialize, Serialize};

use crate::config::{
    BoundTableParams, HierVsFlatParams, KlVerificationParams, RegretVsBoundParams,
    RiskCoverageParams, SparsitySweepParams,
};
use crate::error::{runtime, validation, CliError};
use hibayes::bounds::BoundReport;

pub const RECORDS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct RecordsFile {
    pub schema_version: u32,
    pub master_seed: u64,
    #[serde(flatten)]
    pub experiment: ExperimentBody,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentBody {
    BoundTable {
        params: BoundTableParams,
        /// One report per prior family, evaluated at the shared argument
        /// point.
        families: Vec<BoundReport>,
        /// Heavy-tailed bound total along the degrees-of-freedom grid.
        nu_sweep: Vec<NuPoint>,
    },
    RegretVsBound {
        params: RegretVsBoundParams,
        replicates: Vec<RegretRecord>,
        aggregates: Vec<RegretAggregate>,
    },
    HierVsFlat {
        params: HierVsFlatParams,
        points: Vec<HierPoint>,
    },
    SparsitySweep {
        params: SparsitySweepParams,
        points: Vec<SparsityPoint>,
    },
    RiskCoverage {
        params: RiskCoverageParams,
        cells: Vec<CoverageCell>,
    },
    KlVerification {
        params: KlVerificationParams,
        instances: Vec<KlInstance>,
        summary: KlSummary,
    },
}

impl ExperimentBody {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ExperimentBody::BoundTable { .. } => "bound_table",
            ExperimentBody::RegretVsBound { .. } => "regret_vs_bound",
            ExperimentBody::HierVsFlat { .. } => "hier_vs_flat",
            ExperimentBody::SparsitySweep { .. } => "sparsity_sweep",
            ExperimentBody::RiskCoverage { .. } => "risk_coverage",
            ExperimentBody::KlVerification { .. } => "kl_verification",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NuPoint {
    pub nu: f64,
    pub total: f64,
}

/// One seeded replicate of the online run against its fitted comparator.
#[derive(Debug, Serialize, Deserialize)]
pub struct RegretRecord {
    pub t: usize,
    pub replicate: usize,
    pub seed: u64,
    pub regret: f64,
    /// Fitted comparator the bound was evaluated at; the bound total is
    /// re-derivable from it and the config echo.
    pub theta_hat: Vec<f64>,
    pub bound_total: f64,
    /// `bound_total - regret`; negative would be a violation.
    pub slack: f64,
    pub violated: bool,
    pub bound_terms: Vec<(String, f64)>,
    pub comparator_iterations: usize,
    pub comparator_converged: bool,
    pub comparator_gradient_norm: f64,
    /// True when the unconstrained fit diverged and a norm-capped fallback
    /// was reported instead.
    pub comparator_norm_capped: bool,
}

/// Per-horizon summary, recomputable from the replicate records.
#[derive(Debug, Serialize, Deserialize)]
pub struct RegretAggregate {
    pub t: usize,
    pub replicates: usize,
    pub mean_regret: f64,
    pub mean_bound: f64,
    pub max_regret: f64,
    pub min_slack: f64,
    pub violations: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HierPoint {
    pub diff_norm: f64,
    pub flat_total: f64,
    pub hier_total: f64,
    /// `flat_total - hier_total`; positive when sharing wins.
    pub delta: f64,
    /// Closed-form condition pieces, present only in the specialization
    /// that admits them (two sources, equal variances).
    pub condition_lhs: Option<f64>,
    pub condition_rhs_exact: Option<f64>,
    pub condition_holds: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SparsityPoint {
    pub n: usize,
    /// Bound with the per-coordinate atom mass held fixed.
    pub fixed_p_total: f64,
    /// Bound with the atom mass pinned through the all-zero mass
    /// (per-coordinate mass `q^(1/n)`).
    pub q_form_total: f64,
}

/// One (kappa, delta) cell of the risk-certificate coverage grid.
#[derive(Debug, Serialize, Deserialize)]
pub struct CoverageCell {
    pub kappa: f64,
    pub delta: f64,
    pub coverage: f64,
    pub wilson_99_lower: f64,
    pub replicates: usize,
    pub mean_gap: f64,
    pub mean_bound_kl: f64,
    pub mean_bound_regret: f64,
    /// Replicates where the relaxed certificate dipped below the exact
    /// one (should be zero).
    pub ordering_violations: usize,
}

/// One randomized divergence instance checked against its oracle.
#[derive(Debug, Serialize, Deserialize)]
pub struct KlInstance {
    pub family: String,
    pub dim: usize,
    /// Closed form or certified upper bound from the library.
    pub value: f64,
    /// Independent oracle: sampling estimate or quadrature.
    pub oracle: f64,
    /// Standard error of the oracle (zero for quadrature).
    pub oracle_se: f64,
    /// `value - oracle`.
    pub margin: f64,
    /// Exact values must sit within sampling error; upper bounds must not
    /// fall below the oracle beyond it.
    pub within: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KlSummary {
    pub instances: usize,
    pub within: usize,
    /// Most negative margin across all instances.
    pub min_margin: f64,
}

/// Serializes and writes the records file atomically: the bytes land in a
/// sibling temporary file first and are renamed into place.
pub fn write_records(path: &std::path::Path, records: &RecordsFile) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(records)
        .map_err(|e| runtime(format!("cannot serialize records: {e}")))?;
    body.push('\n');
    write_atomic(path, body.as_bytes())
}

/// Writes bytes via a temporary sibling plus rename, so readers never see
/// a partial file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                runtime(format!("cannot create output directory {}: {e}", parent.display()))
            })?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)
        .map_err(|e| runtime(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| runtime(format!("cannot move {} into place: {e}", tmp.display())))
}

/// Reads a records file back, checking its schema version.
pub fn read_records(path: &std::path::Path) -> Result<RecordsFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read records {}: {e}", path.display())))?;
    let records: RecordsFile = serde_json::from_str(&text)
        .map_err(|e| validation(format!("{}: {e}", path.display())))?;
    if records.schema_version != RECORDS_SCHEMA_VERSION {
        return Err(validation(format!(
            "{}: schema_version: expected {RECORDS_SCHEMA_VERSION}, got {}",
            path.display(),
            records.schema_version
        )));
    }
    Ok(records)
}
