//! Declarative experiment configuration: one TOML file per experiment,
//! schema-versioned, with unknown keys rejected at every level.

use serde::{Deserialize, Serialize};

use crate::error::{validation, CliError};

pub const SCHEMA_VERSION: u32 = 1;

/// The raw top-level file; `params` is decoded per kind afterwards so each
/// kind can reject unknown keys against its own schema.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    kind: ExperimentKind,
    master_seed: u64,
    #[serde(default)]
    output_dir: Option<String>,
    #[serde(default)]
    workers: Option<usize>,
    params: toml::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BoundTable,
    RegretVsBound,
    HierVsFlat,
    SparsitySweep,
    RiskCoverage,
    KlVerification,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::BoundTable => "bound_table",
            ExperimentKind::RegretVsBound => "regret_vs_bound",
            ExperimentKind::HierVsFlat => "hier_vs_flat",
            ExperimentKind::SparsitySweep => "sparsity_sweep",
            ExperimentKind::RiskCoverage => "risk_coverage",
            ExperimentKind::KlVerification => "kl_verification",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "bound_table" => Ok(ExperimentKind::BoundTable),
            "regret_vs_bound" => Ok(ExperimentKind::RegretVsBound),
            "hier_vs_flat" => Ok(ExperimentKind::HierVsFlat),
            "sparsity_sweep" => Ok(ExperimentKind::SparsitySweep),
            "risk_coverage" => Ok(ExperimentKind::RiskCoverage),
            "kl_verification" => Ok(ExperimentKind::KlVerification),
            other => Err(validation(format!(
                "unknown experiment kind `{other}`; expected one of bound_table, \
                 regret_vs_bound, hier_vs_flat, sparsity_sweep, risk_coverage, kl_verification"
            ))),
        }
    }
}

/// A fully validated experiment configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub master_seed: u64,
    pub output_dir: String,
    pub workers: Option<usize>,
    pub params: Params,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Params {
    BoundTable(BoundTableParams),
    RegretVsBound(RegretVsBoundParams),
    HierVsFlat(HierVsFlatParams),
    SparsitySweep(SparsitySweepParams),
    RiskCoverage(RiskCoverageParams),
    KlVerification(KlVerificationParams),
}

/// Evaluates every bound family at one argument point, plus a
/// degrees-of-freedom sweep of the heavy-tailed family for plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundTableParams {
    pub num_features: usize,
    pub rounds: usize,
    pub smoothness: f64,
    /// Comparator for the single-block families, and every block of the
    /// hierarchical ones; all zeros when omitted.
    #[serde(default)]
    pub theta_star: Option<Vec<f64>>,
    pub sigma_squared: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_num_sources")]
    pub num_sources: usize,
    #[serde(default = "default_hyper_variance")]
    pub sigma0_squared: f64,
    #[serde(default = "default_hyper_variance")]
    pub sigma1_squared: f64,
    #[serde(default = "default_atom_probability")]
    pub atom_probability: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_nu_grid")]
    pub nu_grid: Vec<f64>,
}

fn default_nu() -> f64 {
    4.0
}
fn default_num_sources() -> usize {
    2
}
fn default_hyper_variance() -> f64 {
    0.5
}
fn default_atom_probability() -> f64 {
    0.5
}
fn default_beta() -> f64 {
    1.0
}
fn default_nu_grid() -> Vec<f64> {
    (0..=10).map(|k| 2.0_f64.powi(k)).collect()
}

/// Seeded replicates of the online mixture against the fitted comparator
/// and its bound, across a horizon grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretVsBoundParams {
    pub num_features: usize,
    pub noise_variance: f64,
    pub prior_variance: f64,
    pub t_values: Vec<usize>,
    pub replicates: usize,
}

/// Hierarchical-against-flat bound comparison along a sweep of the
/// between-source difference norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierVsFlatParams {
    pub num_features: usize,
    pub smoothness: f64,
    pub sigma0_squared: f64,
    pub sigma_squared: f64,
    /// Rounds for each of the two sources, observed one block at a time.
    pub per_source: Vec<usize>,
    /// Norm of the first source's comparator (drawn once from the master
    /// seed and rescaled).
    #[serde(default = "default_base_norm")]
    pub base_norm: f64,
    /// Difference norms to sweep; must increase strictly.
    pub diff_norms: Vec<f64>,
}

fn default_base_norm() -> f64 {
    1.0
}

/// Sparsity bound as a function of the ambient dimension, with the
/// per-coordinate atom mass either fixed or pinned through the all-zero
/// mass.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparsitySweepParams {
    pub n_values: Vec<usize>,
    pub support_size: usize,
    pub rounds: usize,
    pub smoothness: f64,
    pub sigma_squared: f64,
    pub atom_probability: f64,
    pub all_zero_mass: f64,
    #[serde(default = "default_theta_magnitude")]
    pub theta_magnitude: f64,
}

fn default_theta_magnitude() -> f64 {
    1.0
}

/// Risk-certificate coverage over a grid of confidence parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskCoverageParams {
    pub kappa_values: Vec<f64>,
    pub delta_values: Vec<f64>,
    pub replicates: usize,
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    #[serde(default = "default_coverage_features")]
    pub num_features: usize,
    #[serde(default = "default_train_rounds")]
    pub train_rounds: usize,
    #[serde(default = "default_train_draws")]
    pub train_draws: usize,
    #[serde(default = "default_fresh_examples")]
    pub fresh_examples: usize,
}

fn default_noise_variance() -> f64 {
    0.25
}
fn default_prior_variance() -> f64 {
    1.0
}
fn default_coverage_features() -> usize {
    2
}
fn default_train_rounds() -> usize {
    50
}
fn default_train_draws() -> usize {
    2000
}
fn default_fresh_examples() -> usize {
    100_000
}

/// Closed forms and upper bounds checked against sampling and quadrature
/// oracles on random instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlVerificationParams {
    #[serde(default = "default_instances")]
    pub gaussian_instances: usize,
    #[serde(default = "default_instances")]
    pub t_instances: usize,
    #[serde(default = "default_instances")]
    pub laplace_instances: usize,
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
}

fn default_instances() -> usize {
    50
}
fn default_max_dim() -> usize {
    5
}
fn default_mc_samples() -> usize {
    100_000
}

fn strictly_increasing<T: PartialOrd>(values: &[T]) -> bool {
    values.windows(2).all(|w| w[0] < w[1])
}

fn require(ok: bool, message: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(validation(message.to_string()))
    }
}

fn require_positive(name: &str, value: f64) -> Result<(), CliError> {
    require(
        value.is_finite() && value > 0.0,
        &format!("params.{name}: must be a positive finite number, got {value}"),
    )
}

fn require_open_unit(name: &str, value: f64) -> Result<(), CliError> {
    require(
        value.is_finite() && value > 0.0 && value < 1.0,
        &format!("params.{name}: must lie strictly between 0 and 1, got {value}"),
    )
}

impl BoundTableParams {
    fn validate(&self) -> Result<(), CliError> {
        require(self.num_features >= 1, "params.num_features: must be at least 1")?;
        require_positive("smoothness", self.smoothness)?;
        require_positive("sigma_squared", self.sigma_squared)?;
        require_positive("nu", self.nu)?;
        require(
            self.num_sources >= 1,
            "params.num_sources: must be at least 1",
        )?;
        require(
            self.sigma0_squared.is_finite() && self.sigma0_squared >= 0.0,
            "params.sigma0_squared: must be finite and non-negative",
        )?;
        require(
            self.sigma1_squared.is_finite() && self.sigma1_squared >= 0.0,
            "params.sigma1_squared: must be finite and non-negative",
        )?;
        require_open_unit("atom_probability", self.atom_probability)?;
        require_positive("beta", self.beta)?;
        require(self.rounds >= 1, "params.rounds: must be at least 1")?;
        if let Some(theta) = &self.theta_star {
            require(
                theta.len() == self.num_features,
                &format!(
                    "params.theta_star: expected {} entries, got {}",
                    self.num_features,
                    theta.len()
                ),
            )?;
            require(
                theta.iter().all(|v| v.is_finite()),
                "params.theta_star: entries must be finite",
            )?;
        }
        require(!self.nu_grid.is_empty(), "params.nu_grid: must be non-empty")?;
        require(
            self.nu_grid.iter().all(|v| v.is_finite() && *v > 0.0),
            "params.nu_grid: entries must be positive",
        )?;
        require(
            strictly_increasing(&self.nu_grid),
            "params.nu_grid: entries must increase strictly",
        )
    }
}

impl RegretVsBoundParams {
    fn validate(&self) -> Result<(), CliError> {
        require(self.num_features >= 1, "params.num_features: must be at least 1")?;
        require_positive("noise_variance", self.noise_variance)?;
        require_positive("prior_variance", self.prior_variance)?;
        require(!self.t_values.is_empty(), "params.t_values: must be non-empty")?;
        require(
            self.t_values.iter().all(|t| *t >= 1),
            "params.t_values: horizons must be at least 1",
        )?;
        require(
            strictly_increasing(&self.t_values),
            "params.t_values: horizons must increase strictly",
        )?;
        require(self.replicates >= 1, "params.replicates: must be at least 1")
    }
}

impl HierVsFlatParams {
    fn validate(&self) -> Result<(), CliError> {
        require(self.num_features >= 1, "params.num_features: must be at least 1")?;
        require_positive("smoothness", self.smoothness)?;
        require_positive("sigma_squared", self.sigma_squared)?;
        require(
            self.sigma0_squared.is_finite() && self.sigma0_squared >= 0.0,
            "params.sigma0_squared: must be finite and non-negative",
        )?;
        require(
            self.per_source.len() == 2,
            "params.per_source: exactly two sources are compared",
        )?;
        require(
            self.per_source.iter().all(|t| *t >= 1),
            "params.per_source: each source needs at least one round",
        )?;
        require_positive("base_norm", self.base_norm)?;
        require(!self.diff_norms.is_empty(), "params.diff_norms: must be non-empty")?;
        require(
            self.diff_norms.iter().all(|v| v.is_finite() && *v >= 0.0),
            "params.diff_norms: entries must be finite and non-negative",
        )?;
        require(
            strictly_increasing(&self.diff_norms),
            "params.diff_norms: entries must increase strictly",
        )
    }
}

impl SparsitySweepParams {
    fn validate(&self) -> Result<(), CliError> {
        require(!self.n_values.is_empty(), "params.n_values: must be non-empty")?;
        require(
            strictly_increasing(&self.n_values),
            "params.n_values: dimensions must increase strictly",
        )?;
        require(
            self.n_values.iter().all(|n| *n >= 1),
            "params.n_values: dimensions must be at least 1",
        )?;
        require(
            self.support_size <= self.n_values[0],
            "params.support_size: must not exceed the smallest dimension",
        )?;
        require(self.rounds >= 1, "params.rounds: must be at least 1")?;
        require_positive("smoothness", self.smoothness)?;
        require_positive("sigma_squared", self.sigma_squared)?;
        require_open_unit("atom_probability", self.atom_probability)?;
        require_open_unit("all_zero_mass", self.all_zero_mass)?;
        require_positive("theta_magnitude", self.theta_magnitude)
    }
}

impl RiskCoverageParams {
    fn validate(&self) -> Result<(), CliError> {
        require(!self.kappa_values.is_empty(), "params.kappa_values: must be non-empty")?;
        require(
            self.kappa_values.iter().all(|k| k.is_finite() && *k > 0.5),
            "params.kappa_values: each value must exceed 1/2",
        )?;
        require(!self.delta_values.is_empty(), "params.delta_values: must be non-empty")?;
        require(
            self.delta_values.iter().all(|d| d.is_finite() && *d > 0.0 && *d < 1.0),
            "params.delta_values: each value must lie strictly between 0 and 1",
        )?;
        require(
            strictly_increasing(&self.delta_values),
            "params.delta_values: values must increase strictly",
        )?;
        require(self.replicates >= 2, "params.replicates: must be at least 2")?;
        require_positive("noise_variance", self.noise_variance)?;
        require_positive("prior_variance", self.prior_variance)?;
        require(self.num_features >= 1, "params.num_features: must be at least 1")?;
        require(self.train_rounds >= 1, "params.train_rounds: must be at least 1")?;
        require(self.train_draws >= 2, "params.train_draws: must be at least 2")?;
        require(
            self.fresh_examples >= 2,
            "params.fresh_examples: must be at least 2",
        )
    }
}

impl KlVerificationParams {
    fn validate(&self) -> Result<(), CliError> {
        require(
            self.gaussian_instances + self.t_instances + self.laplace_instances >= 1,
            "params: at least one instance across the three families is required",
        )?;
        require(
            self.max_dim >= 1 && self.max_dim <= 8,
            "params.max_dim: must lie between 1 and 8",
        )?;
        require(
            self.mc_samples >= 1000,
            "params.mc_samples: the sampling oracle needs at least 1000 draws",
        )
    }
}

fn decode_params(kind: ExperimentKind, raw: toml::Value) -> Result<Params, CliError> {
    fn decode<T: serde::de::DeserializeOwned>(raw: toml::Value) -> Result<T, CliError> {
        raw.try_into()
            .map_err(|e| validation(format!("params: {e}")))
    }
    Ok(match kind {
        ExperimentKind::BoundTable => {
            let p: BoundTableParams = decode(raw)?;
            p.validate()?;
            Params::BoundTable(p)
        }
        ExperimentKind::RegretVsBound => {
            let p: RegretVsBoundParams = decode(raw)?;
            p.validate()?;
            Params::RegretVsBound(p)
        }
        ExperimentKind::HierVsFlat => {
            let p: HierVsFlatParams = decode(raw)?;
            p.validate()?;
            Params::HierVsFlat(p)
        }
        ExperimentKind::SparsitySweep => {
            let p: SparsitySweepParams = decode(raw)?;
            p.validate()?;
            Params::SparsitySweep(p)
        }
        ExperimentKind::RiskCoverage => {
            let p: RiskCoverageParams = decode(raw)?;
            p.validate()?;
            Params::RiskCoverage(p)
        }
        ExperimentKind::KlVerification => {
            let p: KlVerificationParams = decode(raw)?;
            p.validate()?;
            Params::KlVerification(p)
        }
    })
}

/// Parses and validates a configuration file, applying the two supported
/// environment overrides (`HIBAYES_OUTPUT_DIR`, `HIBAYES_WORKERS`).
pub fn load(path: &std::path::Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read config {}: {e}", path.display())))?;
    let raw: RawConfig =
        toml::from_str(&text).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(validation(format!(
            "schema_version: expected {SCHEMA_VERSION}, got {}",
            raw.schema_version
        )));
    }
    let params = decode_params(raw.kind, raw.params)?;

    let mut output_dir = raw.output_dir.unwrap_or_else(|| ".".to_string());
    if let Some(dir) = read_env("HIBAYES_OUTPUT_DIR")? {
        output_dir = dir;
    }
    let mut workers = raw.workers;
    if let Some(count) = read_env("HIBAYES_WORKERS")? {
        let parsed: usize = count.parse().map_err(|_| {
            validation(format!("HIBAYES_WORKERS: expected a positive integer, got `{count}`"))
        })?;
        workers = Some(parsed);
    }
    if let Some(w) = workers {
        if w == 0 {
            return Err(validation("workers: must be at least 1".to_string()));
        }
    }
    Ok(ExperimentConfig {
        kind: raw.kind,
        master_seed: raw.master_seed,
        output_dir,
        workers,
        params,
    })
}

fn read_env(name: &str) -> Result<Option<String>, CliError> {
    match std::env::var(name) {
        Ok(value) if value.is_empty() => Err(validation(format!("{name}: must not be empty"))),
        Ok(value) => Ok(Some(value)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(validation(format!("{name}: {e}"))),
    }
}
