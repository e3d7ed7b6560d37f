//! Experiment drivers: each kind maps a validated configuration to a
//! records body, deterministically in the master seed. Replicates run
//! concurrently; records keep their replicate order regardless of the
//! worker count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use hibayes::bounds::{
    gaussian_regret_bound, hg_seq_regret_bound, hier_vs_flat_comparison, lasso_regret_bound,
    mvt_regret_bound, spike_slab_regret_bound, spike_slab_regret_bound_q, two_level_regret_bound,
    HierObservations,
};
use hibayes::comparator::{erm, measured_regret};
use hibayes::data::{generate, SourceSchedule, SyntheticConfig, ThetaSource};
use hibayes::divergences::{
    kl_gaussian_gaussian, kl_gaussian_laplace_quadrature, kl_gaussian_laplace_upper,
    kl_gaussian_t_upper, kl_monte_carlo,
};
use hibayes::likelihoods::LikelihoodSpec;
use hibayes::math::{inv_quadratic_form, ln_det_from_cholesky, spd_cholesky, split_seed};
use hibayes::online::{run_online, MethodConfig};
use hibayes::priors::{multivariate_t_log_density, PriorSpec};
use hibayes::risk::{coverage_experiment, CoverageConfig};

use crate::config::{
    BoundTableParams, ExperimentConfig, HierVsFlatParams, KlVerificationParams, Params,
    RegretVsBoundParams, RiskCoverageParams, SparsitySweepParams,
};
use crate::error::{runtime, CliError};
use crate::records::{
    CoverageCell, ExperimentBody, HierPoint, KlInstance, KlSummary, NuPoint, RecordsFile,
    RegretAggregate, RegretRecord, SparsityPoint, RECORDS_SCHEMA_VERSION,
};

/// Runs the configured experiment, inside a dedicated thread pool when a
/// worker count was requested.
pub fn run(config: &ExperimentConfig) -> Result<RecordsFile, CliError> {
    let body = match config.workers {
        Some(workers) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| runtime(format!("cannot build worker pool: {e}")))?;
            pool.install(|| dispatch(config))?
        }
        None => dispatch(config)?,
    };
    Ok(RecordsFile {
        schema_version: RECORDS_SCHEMA_VERSION,
        master_seed: config.master_seed,
        experiment: body,
    })
}

fn dispatch(config: &ExperimentConfig) -> Result<ExperimentBody, CliError> {
    match &config.params {
        Params::BoundTable(p) => bound_table(p),
        Params::RegretVsBound(p) => regret_vs_bound(config.master_seed, p),
        Params::HierVsFlat(p) => hier_vs_flat(config.master_seed, p),
        Params::SparsitySweep(p) => sparsity_sweep(p),
        Params::RiskCoverage(p) => risk_coverage(config.master_seed, p),
        Params::KlVerification(p) => kl_verification(config.master_seed, p),
    }
}

fn core_err(context: &str, e: hibayes::Error) -> CliError {
    runtime(format!("{context}: {e}"))
}

fn bound_table(p: &BoundTableParams) -> Result<ExperimentBody, CliError> {
    let n = p.num_features;
    let theta = match &p.theta_star {
        Some(values) => DVector::from_column_slice(values),
        None => DVector::zeros(n),
    };
    let blocks = vec![theta.clone(); p.num_sources];
    let t_counts = vec![p.rounds; p.num_sources];
    // Consecutive sources share a superclass pairwise.
    let superclass_of: Vec<usize> = (0..p.num_sources).map(|k| k / 2 + 1).collect();
    let c = p.smoothness;

    let families = vec![
        gaussian_regret_bound(&theta, p.rounds, c, p.sigma_squared)
            .map_err(|e| core_err("gaussian bound", e))?,
        mvt_regret_bound(&theta, p.rounds, c, p.sigma_squared, p.nu)
            .map_err(|e| core_err("heavy-tail bound", e))?,
        hg_seq_regret_bound(&blocks, &t_counts, c, p.sigma0_squared, p.sigma_squared)
            .map_err(|e| core_err("one-level hierarchical bound", e))?,
        two_level_regret_bound(
            &blocks,
            &t_counts,
            c,
            p.sigma0_squared,
            p.sigma1_squared,
            p.sigma_squared,
            &superclass_of,
        )
        .map_err(|e| core_err("two-level hierarchical bound", e))?,
        spike_slab_regret_bound(&theta, p.rounds, c, p.sigma_squared, p.atom_probability)
            .map_err(|e| core_err("sparse bound", e))?,
        lasso_regret_bound(&theta, p.rounds, c, p.beta)
            .map_err(|e| core_err("double-exponential bound", e))?,
    ];

    let nu_sweep = p
        .nu_grid
        .iter()
        .map(|&nu| {
            mvt_regret_bound(&theta, p.rounds, c, p.sigma_squared, nu)
                .map(|report| NuPoint { nu, total: report.total })
                .map_err(|e| core_err("degrees-of-freedom sweep", e))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ExperimentBody::BoundTable {
        params: p.clone(),
        families,
        nu_sweep,
    })
}

fn regret_vs_bound(master_seed: u64, p: &RegretVsBoundParams) -> Result<ExperimentBody, CliError> {
    let likelihood = LikelihoodSpec::gaussian_regression(p.noise_variance)
        .map_err(|e| core_err("likelihood", e))?;
    let prior = PriorSpec::iso_gaussian(p.prior_variance, p.num_features)
        .map_err(|e| core_err("prior", e))?;
    let c = likelihood.smoothness_constant();

    let jobs: Vec<(usize, usize)> = p
        .t_values
        .iter()
        .flat_map(|&t| (0..p.replicates).map(move |rep| (t, rep)))
        .collect();

    let replicates = jobs
        .into_par_iter()
        .enumerate()
        .map(|(index, (t, rep))| -> Result<RegretRecord, CliError> {
            let seed = split_seed(master_seed, index as u64);
            let context = |e: hibayes::Error| {
                runtime(format!("t={t} replicate {rep}: {e}"))
            };
            let dataset = generate(
                &SyntheticConfig {
                    likelihood: likelihood.clone(),
                    theta: ThetaSource::FromPrior(prior.clone()),
                    num_features: p.num_features,
                    schedule: SourceSchedule::Single { rounds: t },
                },
                seed,
            )
            .map_err(context)?;
            let method = MethodConfig { seed, ..MethodConfig::default() };
            let run = run_online(&likelihood, &prior, &dataset.examples, &method)
                .map_err(context)?;
            let fit = erm(&likelihood, &dataset.examples, None).map_err(context)?;
            let bound = gaussian_regret_bound(&fit.theta_hat, t, c, p.prior_variance)
                .map_err(context)?;
            let regret = measured_regret(&run, &fit);
            let slack = bound.total - regret;
            Ok(RegretRecord {
                t,
                replicate: rep,
                seed,
                regret,
                theta_hat: fit.theta_hat.iter().cloned().collect(),
                bound_total: bound.total,
                slack,
                violated: slack < 0.0,
                bound_terms: bound.terms.clone(),
                comparator_iterations: fit.diagnostics.iterations,
                comparator_converged: fit.diagnostics.converged,
                comparator_gradient_norm: fit.diagnostics.gradient_norm,
                comparator_norm_capped: fit.diagnostics.divergence_guard,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let aggregates = p
        .t_values
        .iter()
        .map(|&t| {
            let rows: Vec<&RegretRecord> =
                replicates.iter().filter(|r| r.t == t).collect();
            let count = rows.len() as f64;
            RegretAggregate {
                t,
                replicates: rows.len(),
                mean_regret: rows.iter().map(|r| r.regret).sum::<f64>() / count,
                mean_bound: rows.iter().map(|r| r.bound_total).sum::<f64>() / count,
                max_regret: rows.iter().map(|r| r.regret).fold(f64::MIN, f64::max),
                min_slack: rows.iter().map(|r| r.slack).fold(f64::MAX, f64::min),
                violations: rows.iter().filter(|r| r.violated).count(),
            }
        })
        .collect();

    Ok(ExperimentBody::RegretVsBound {
        params: p.clone(),
        replicates,
        aggregates,
    })
}

/// A standard-normal vector rescaled to unit norm; redraws the rare
/// near-zero sample.
fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-9 {
            return v / norm;
        }
    }
}

fn hier_vs_flat(master_seed: u64, p: &HierVsFlatParams) -> Result<ExperimentBody, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let theta_one = unit_vector(&mut rng, p.num_features) * p.base_norm;
    let direction = unit_vector(&mut rng, p.num_features);
    let observations = HierObservations::Sequential {
        per_source: p.per_source.clone(),
    };

    let points = p
        .diff_norms
        .iter()
        .map(|&diff_norm| {
            let theta_two = &theta_one + &direction * diff_norm;
            let comparison = hier_vs_flat_comparison(
                &[theta_one.clone(), theta_two],
                &observations,
                p.smoothness,
                p.sigma0_squared,
                p.sigma_squared,
            )
            .map_err(|e| core_err("hierarchical comparison", e))?;
            let condition = comparison.condition.as_ref();
            Ok(HierPoint {
                diff_norm,
                flat_total: comparison.flat_total,
                hier_total: comparison.hier_total,
                delta: comparison.delta,
                condition_lhs: condition.map(|c| c.lhs),
                condition_rhs_exact: condition.map(|c| c.rhs_exact),
                condition_holds: condition.map(|c| c.holds),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    Ok(ExperimentBody::HierVsFlat {
        params: p.clone(),
        points,
    })
}

fn sparsity_sweep(p: &SparsitySweepParams) -> Result<ExperimentBody, CliError> {
    let points = p
        .n_values
        .iter()
        .map(|&n| {
            let mut theta = DVector::zeros(n);
            for j in 0..p.support_size {
                theta[(j * n) / p.support_size.max(1)] = p.theta_magnitude;
            }
            let fixed = spike_slab_regret_bound(
                &theta,
                p.rounds,
                p.smoothness,
                p.sigma_squared,
                p.atom_probability,
            )
            .map_err(|e| core_err("fixed-mass sparse bound", e))?;
            let pinned = spike_slab_regret_bound_q(
                &theta,
                p.rounds,
                p.smoothness,
                p.sigma_squared,
                p.all_zero_mass,
            )
            .map_err(|e| core_err("pinned-mass sparse bound", e))?;
            Ok(SparsityPoint {
                n,
                fixed_p_total: fixed.total,
                q_form_total: pinned.total,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    Ok(ExperimentBody::SparsitySweep {
        params: p.clone(),
        points,
    })
}

fn risk_coverage(master_seed: u64, p: &RiskCoverageParams) -> Result<ExperimentBody, CliError> {
    let grid: Vec<(f64, f64)> = p
        .kappa_values
        .iter()
        .flat_map(|&kappa| p.delta_values.iter().map(move |&delta| (kappa, delta)))
        .collect();

    let cells = grid
        .into_par_iter()
        .enumerate()
        .map(|(index, (kappa, delta))| -> Result<CoverageCell, CliError> {
            let config = CoverageConfig {
                noise_variance: p.noise_variance,
                prior_variance: p.prior_variance,
                num_features: p.num_features,
                train_rounds: p.train_rounds,
                replicates: p.replicates,
                kappa,
                delta,
                train_draws: p.train_draws,
                fresh_examples: p.fresh_examples,
                master_seed: split_seed(master_seed, index as u64),
            };
            let report = coverage_experiment(&config).map_err(|e| {
                runtime(format!("coverage cell kappa={kappa} delta={delta}: {e}"))
            })?;
            let count = report.replicates.len() as f64;
            let mean = |f: fn(&hibayes::risk::CoverageReplicate) -> f64| {
                report.replicates.iter().map(f).sum::<f64>() / count
            };
            Ok(CoverageCell {
                kappa,
                delta,
                coverage: report.coverage,
                wilson_99_lower: report.wilson_99_lower,
                replicates: report.replicates.len(),
                mean_gap: mean(|r| r.gap),
                mean_bound_kl: mean(|r| r.bound_kl),
                mean_bound_regret: mean(|r| r.bound_regret),
                ordering_violations: report
                    .replicates
                    .iter()
                    .filter(|r| r.bound_regret < r.bound_kl - 1e-9)
                    .count(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(ExperimentBody::RiskCoverage {
        params: p.clone(),
        cells,
    })
}

/// Log-density of `N(mean, cov)` with the Cholesky factor precomputed.
fn gaussian_log_density(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    ln_det: f64,
) -> f64 {
    let diff = x - mean;
    let quad = inv_quadratic_form(chol, &diff);
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + ln_det + quad)
}

/// A moderately conditioned random covariance.
fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() * (0.49 / dim as f64) + DMatrix::identity(dim, dim) * 0.5
}

fn normal_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn kl_verification(master_seed: u64, p: &KlVerificationParams) -> Result<ExperimentBody, CliError> {
    let mut instances = Vec::new();

    // Closed-form Gaussian-Gaussian divergences against the sampling oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(master_seed, 1));
    for i in 0..p.gaussian_instances {
        let dim = 1 + i % p.max_dim;
        let mu1 = normal_vector(&mut rng, dim, 0.8);
        let mu2 = normal_vector(&mut rng, dim, 0.8);
        let sigma1 = random_spd(&mut rng, dim);
        let sigma2 = random_spd(&mut rng, dim);
        let context = |e: hibayes::Error| runtime(format!("gaussian instance {i}: {e}"));
        let exact = kl_gaussian_gaussian(&mu1, &sigma1, &mu2, &sigma2).map_err(context)?;

        let chol1 = spd_cholesky(&sigma1, "first covariance").map_err(context)?;
        let chol2 = spd_cholesky(&sigma2, "second covariance").map_err(context)?;
        let ld1 = ln_det_from_cholesky(&chol1);
        let ld2 = ln_det_from_cholesky(&chol2);
        let lower = chol1.l();
        let mc = kl_monte_carlo(
            &mut rng,
            |r| &mu1 + &lower * normal_vector(r, dim, 1.0),
            |x| gaussian_log_density(x, &mu1, &chol1, ld1),
            |x| gaussian_log_density(x, &mu2, &chol2, ld2),
            p.mc_samples,
        )
        .map_err(context)?;
        let se = mc.standard_error.unwrap_or(0.0);
        let margin = exact.value - mc.value;
        instances.push(KlInstance {
            family: "gaussian_gaussian".to_string(),
            dim,
            value: exact.value,
            oracle: mc.value,
            oracle_se: se,
            margin,
            within: margin.abs() <= 4.0 * se,
        });
    }

    // Gaussian-to-heavy-tail upper bounds against the sampling oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(master_seed, 2));
    for i in 0..p.t_instances {
        let dim = 1 + i % p.max_dim;
        let mu1 = normal_vector(&mut rng, dim, 0.8);
        let mu2 = normal_vector(&mut rng, dim, 0.8);
        let sigma1 = random_spd(&mut rng, dim);
        let scale_variance = rng.gen_range(0.3..2.5);
        let nu = rng.gen_range(2.5..25.0);
        let sigma2 = DMatrix::identity(dim, dim) * scale_variance;
        let context = |e: hibayes::Error| runtime(format!("heavy-tail instance {i}: {e}"));
        let upper = kl_gaussian_t_upper(&mu1, &sigma1, &mu2, &sigma2, nu).map_err(context)?;

        let chol1 = spd_cholesky(&sigma1, "first covariance").map_err(context)?;
        let ld1 = ln_det_from_cholesky(&chol1);
        let lower = chol1.l();
        let mc = kl_monte_carlo(
            &mut rng,
            |r| &mu1 + &lower * normal_vector(r, dim, 1.0),
            |x| gaussian_log_density(x, &mu1, &chol1, ld1),
            |x| {
                multivariate_t_log_density(x, &mu2, nu, scale_variance)
                    .expect("validated t parameters")
            },
            p.mc_samples,
        )
        .map_err(context)?;
        let se = mc.standard_error.unwrap_or(0.0);
        let margin = upper.value - mc.value;
        instances.push(KlInstance {
            family: "gaussian_t_upper".to_string(),
            dim,
            value: upper.value,
            oracle: mc.value,
            oracle_se: se,
            margin,
            within: margin >= -4.0 * se,
        });
    }

    // Scalar Gaussian-to-double-exponential upper bounds against quadrature.
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(master_seed, 3));
    for i in 0..p.laplace_instances {
        let mu = 1.5 * rng.sample::<f64, _>(StandardNormal);
        let sigma_squared = rng.gen_range(0.2..3.0);
        let beta = rng.gen_range(0.3..3.0);
        let context = |e: hibayes::Error| {
            runtime(format!("double-exponential instance {i}: {e}"))
        };
        let upper = kl_gaussian_laplace_upper(mu, sigma_squared, beta).map_err(context)?;
        let oracle = kl_gaussian_laplace_quadrature(mu, sigma_squared, beta).map_err(context)?;
        let margin = upper.value - oracle;
        instances.push(KlInstance {
            family: "gaussian_laplace_upper".to_string(),
            dim: 1,
            value: upper.value,
            oracle,
            oracle_se: 0.0,
            margin,
            within: margin >= -1e-8,
        });
    }

    let summary = KlSummary {
        instances: instances.len(),
        within: instances.iter().filter(|r| r.within).count(),
        min_margin: instances
            .iter()
            .map(|r| r.margin)
            .fold(f64::MAX, f64::min),
    };

    Ok(ExperimentBody::KlVerification {
        params: p.clone(),
        instances,
        summary,
    })
}
