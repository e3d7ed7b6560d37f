//! Risk certificates for the generalization gap of a learned posterior,
//! and Monte Carlo estimation of the randomized-predictor ("Gibbs") risk
//! they certify.
//!
//! The certificate turns an information payload — either the posterior's
//! divergence from the prior or a regret bound that dominates it — into a
//! high-probability bound on `|population risk - empirical risk|` for any
//! loss taking values in [0, 1].

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{gaussian_regret_bound, BoundReport};
use crate::comparator::erm;
use crate::data::{generate, linear_value, Layout, SourceSchedule, SyntheticConfig, ThetaSource};
use crate::error::{require_positive, Error, Result};
use crate::likelihoods::{Example, Label, LikelihoodSpec, LinearValue};
use crate::math::{mean_and_se, split_seed};
use crate::online::{
    posterior_kl_from_prior, run_online, MethodConfig, OnlineRunResult, PosteriorSampler,
};
use crate::priors::PriorSpec;

/// One evaluated risk certificate.
#[derive(Debug, Clone)]
pub struct RiskBoundReport {
    pub kappa: f64,
    /// Confidence constant `2 kappa / (2 kappa - 1)`.
    pub kappa_prime: f64,
    pub delta: f64,
    pub t: usize,
    /// Information payload the certificate was charged with.
    pub payload: f64,
    /// The certified gap: `sqrt(kappa (payload + ln(kappa_prime / delta)) / t)`.
    pub bound: f64,
}

/// Evaluates the risk certificate for a payload (a divergence or anything
/// dominating one). Requires `kappa > 1/2`, `delta` in (0, 1), `t >= 1`.
pub fn pac_bayes_bound(payload: f64, t: usize, kappa: f64, delta: f64) -> Result<RiskBoundReport> {
    if !(kappa > 0.5) {
        return Err(Error::InvalidParameter {
            name: "kappa",
            reason: "must exceed 1/2",
            value: kappa,
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter {
            name: "delta",
            reason: "must lie strictly between 0 and 1",
            value: delta,
        });
    }
    if t == 0 {
        return Err(Error::InvalidParameter {
            name: "t",
            reason: "needs at least one observation",
            value: 0.0,
        });
    }
    if !payload.is_finite() || payload < 0.0 {
        return Err(Error::InvalidParameter {
            name: "payload",
            reason: "must be finite and non-negative",
            value: payload,
        });
    }
    let kappa_prime = 2.0 * kappa / (2.0 * kappa - 1.0);
    let bound = (kappa * (payload + (kappa_prime / delta).ln()) / t as f64).sqrt();
    Ok(RiskBoundReport {
        kappa,
        kappa_prime,
        delta,
        t,
        payload,
        bound,
    })
}

/// Evaluates the risk certificate with a regret bound as the payload
/// (valid because the bound dominates the posterior's divergence from the
/// prior).
pub fn regret_to_risk_bound(
    report: &BoundReport,
    t: usize,
    kappa: f64,
    delta: f64,
) -> Result<RiskBoundReport> {
    pac_bayes_bound(report.total, t, kappa, delta)
}

/// A loss bounded in [0, 1], evaluated on one drawn parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundedLoss {
    /// Misclassification of the most probable label.
    ZeroOne,
    /// Squared error clipped at 1.
    ClippedSquared,
}

/// Evaluates a [0, 1] loss for the plug-in predictor at `theta`.
pub fn bounded_loss_value(
    loss: BoundedLoss,
    likelihood: &LikelihoodSpec,
    layout: &Layout,
    theta: &DVector<f64>,
    example: &Example,
) -> Result<f64> {
    let z = linear_value(likelihood, layout, theta, example)?;
    match (loss, likelihood, z, example.label()) {
        (BoundedLoss::ClippedSquared, LikelihoodSpec::GaussianRegression { .. }, LinearValue::Scalar(z), Label::Real(y)) => {
            Ok(((y - z) * (y - z)).min(1.0))
        }
        (BoundedLoss::ZeroOne, LikelihoodSpec::BinaryLogistic, LinearValue::Scalar(z), Label::Sign(y)) => {
            // p(+1 | z) >= 1/2 exactly when z <= 0.
            let predicted: i8 = if z <= 0.0 { 1 } else { -1 };
            Ok(if predicted == *y { 0.0 } else { 1.0 })
        }
        (BoundedLoss::ZeroOne, LikelihoodSpec::MultiClassLogistic { .. }, LinearValue::Vector(scores), Label::Class(k)) => {
            let mut best = 0;
            for class in 1..scores.len() {
                if scores[class] > scores[best] {
                    best = class;
                }
            }
            Ok(if best + 1 == *k { 0.0 } else { 1.0 })
        }
        (BoundedLoss::ClippedSquared, _, _, _) => Err(Error::UnsupportedConfiguration(
            "clipped squared loss applies to the regression family only".to_string(),
        )),
        (BoundedLoss::ZeroOne, _, _, _) => Err(Error::UnsupportedConfiguration(
            "zero-one loss applies to the classification families only".to_string(),
        )),
    }
}

/// A Monte Carlo estimate of a randomized predictor's risk.
#[derive(Debug, Clone)]
pub struct GibbsRiskEstimate {
    pub risk: f64,
    pub standard_error: f64,
    pub evaluations: usize,
}

/// Empirical Gibbs risk of a posterior on a fixed dataset: each posterior
/// draw is scored by its mean loss over `data`; mean and standard error
/// are taken over the `draws` scores.
pub fn gibbs_risk_with_sampler<R: Rng + ?Sized>(
    sampler: &PosteriorSampler,
    likelihood: &LikelihoodSpec,
    layout: &Layout,
    loss: BoundedLoss,
    data: &[Example],
    draws: usize,
    rng: &mut R,
) -> Result<GibbsRiskEstimate> {
    if data.is_empty() {
        return Err(Error::EmptyInput("examples"));
    }
    if draws < 2 {
        return Err(Error::InvalidParameter {
            name: "draws",
            reason: "needs at least 2 for a standard error",
            value: draws as f64,
        });
    }
    let mut scores = Vec::with_capacity(draws);
    for _ in 0..draws {
        let theta = sampler.draw(rng);
        let mut total = 0.0;
        for example in data {
            total += bounded_loss_value(loss, likelihood, layout, &theta, example)?;
        }
        scores.push(total / data.len() as f64);
    }
    let (risk, standard_error) = mean_and_se(&scores);
    Ok(GibbsRiskEstimate {
        risk,
        standard_error,
        evaluations: draws * data.len(),
    })
}

/// Population Gibbs risk via fresh examples: one posterior draw per
/// example, so the standard error reflects both sources of randomness.
pub fn gibbs_population_risk_with_sampler<R: Rng + ?Sized>(
    sampler: &PosteriorSampler,
    likelihood: &LikelihoodSpec,
    layout: &Layout,
    loss: BoundedLoss,
    data: &[Example],
    rng: &mut R,
) -> Result<GibbsRiskEstimate> {
    if data.len() < 2 {
        return Err(Error::EmptyInput("examples"));
    }
    let mut scores = Vec::with_capacity(data.len());
    for example in data {
        let theta = sampler.draw(rng);
        scores.push(bounded_loss_value(loss, likelihood, layout, &theta, example)?);
    }
    let (risk, standard_error) = mean_and_se(&scores);
    Ok(GibbsRiskEstimate {
        risk,
        standard_error,
        evaluations: data.len(),
    })
}

/// Empirical Gibbs risk of a finished run on a dataset.
pub fn gibbs_risk_estimate<R: Rng + ?Sized>(
    run: &OnlineRunResult,
    loss: BoundedLoss,
    data: &[Example],
    draws: usize,
    rng: &mut R,
) -> Result<GibbsRiskEstimate> {
    let sampler = run.posterior.sampler()?;
    gibbs_risk_with_sampler(&sampler, &run.likelihood, &run.layout, loss, data, draws, rng)
}

/// Configuration of the certificate-coverage experiment. Each replicate
/// draws a fresh parameter from the prior, trains the exact conjugate
/// learner, and checks that the certified gap covers the true one.
#[derive(Debug, Clone)]
pub struct CoverageConfig {
    pub noise_variance: f64,
    pub prior_variance: f64,
    pub num_features: usize,
    pub train_rounds: usize,
    pub replicates: usize,
    pub kappa: f64,
    pub delta: f64,
    /// Posterior draws used for the empirical risk estimate.
    pub train_draws: usize,
    /// Fresh examples used for the population risk estimate.
    pub fresh_examples: usize,
    pub master_seed: u64,
}

impl CoverageConfig {
    /// The configuration exercised by the acceptance gate: 200 replicates,
    /// a hundred-thousand-sample population estimate per replicate.
    pub fn standard(master_seed: u64, kappa: f64, delta: f64) -> Self {
        CoverageConfig {
            noise_variance: 0.25,
            prior_variance: 1.0,
            num_features: 2,
            train_rounds: 50,
            replicates: 200,
            kappa,
            delta,
            train_draws: 2000,
            fresh_examples: 100_000,
            master_seed,
        }
    }
}

/// One replicate of the coverage experiment.
#[derive(Debug, Clone)]
pub struct CoverageReplicate {
    /// Exact divergence of the learned posterior from the prior.
    pub kl_payload: f64,
    /// Regret-bound payload evaluated at the empirical risk minimizer.
    pub regret_payload: f64,
    pub empirical_risk: f64,
    pub population_risk: f64,
    /// `|population_risk - empirical_risk|`.
    pub gap: f64,
    /// Monte Carlo slack added to the certificate before the coverage
    /// verdict: three combined standard errors.
    pub mc_tolerance: f64,
    /// Certificate charged with the exact divergence.
    pub bound_kl: f64,
    /// Certificate charged with the regret-bound payload.
    pub bound_regret: f64,
    pub covered: bool,
}

/// Result of the coverage experiment.
#[derive(Debug, Clone)]
pub struct CoverageReport {
    pub replicates: Vec<CoverageReplicate>,
    /// Fraction of replicates whose certificate covered the true gap.
    pub coverage: f64,
    /// Lower end of the 99% Wilson interval for the coverage probability.
    pub wilson_99_lower: f64,
    pub kappa: f64,
    pub delta: f64,
}

fn wilson_lower(successes: usize, trials: usize, z: f64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    (center - half).max(0.0)
}

/// Runs the coverage experiment for the exact conjugate learner under the
/// clipped squared loss.
pub fn coverage_experiment(config: &CoverageConfig) -> Result<CoverageReport> {
    require_positive("noise_variance", config.noise_variance)?;
    require_positive("prior_variance", config.prior_variance)?;
    if config.replicates == 0 {
        return Err(Error::EmptyInput("replicates"));
    }
    let likelihood = LikelihoodSpec::gaussian_regression(config.noise_variance)?;
    let prior = PriorSpec::iso_gaussian(config.prior_variance, config.num_features)?;
    let smoothness = likelihood.smoothness_constant();
    let mut replicates = Vec::with_capacity(config.replicates);
    let mut covered_count = 0usize;

    for index in 0..config.replicates {
        let seed = split_seed(config.master_seed, index as u64);
        let train_config = SyntheticConfig {
            likelihood: likelihood.clone(),
            theta: ThetaSource::FromPrior(prior.clone()),
            num_features: config.num_features,
            schedule: SourceSchedule::Single {
                rounds: config.train_rounds,
            },
        };
        let train = generate(&train_config, seed)?;
        let run = run_online(&likelihood, &prior, &train.examples, &MethodConfig::default())?;
        let kl = posterior_kl_from_prior(&run, &train.examples)?;
        let kl_payload = kl
            .closed_form
            .expect("the conjugate path always has a closed-form divergence")
            .max(0.0);

        let fit = erm(&likelihood, &train.examples, None)?;
        let regret_payload = gaussian_regret_bound(
            &fit.theta_hat,
            config.train_rounds,
            smoothness,
            config.prior_variance,
        )?
        .total;

        let sampler = run.posterior.sampler()?;
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 1));
        let empirical = gibbs_risk_with_sampler(
            &sampler,
            &likelihood,
            &run.layout,
            BoundedLoss::ClippedSquared,
            &train.examples,
            config.train_draws,
            &mut rng,
        )?;
        let fresh_config = SyntheticConfig {
            likelihood: likelihood.clone(),
            theta: ThetaSource::Fixed(train.theta_true.clone()),
            num_features: config.num_features,
            schedule: SourceSchedule::Single {
                rounds: config.fresh_examples,
            },
        };
        let fresh = generate(&fresh_config, split_seed(seed, 2))?;
        let population = gibbs_population_risk_with_sampler(
            &sampler,
            &likelihood,
            &run.layout,
            BoundedLoss::ClippedSquared,
            &fresh.examples,
            &mut rng,
        )?;

        let bound_kl =
            pac_bayes_bound(kl_payload, config.train_rounds, config.kappa, config.delta)?.bound;
        let bound_regret =
            pac_bayes_bound(regret_payload, config.train_rounds, config.kappa, config.delta)?
                .bound;
        let gap = (population.risk - empirical.risk).abs();
        let mc_tolerance = 3.0
            * (empirical.standard_error * empirical.standard_error
                + population.standard_error * population.standard_error)
                .sqrt();
        let covered = gap <= bound_kl + mc_tolerance;
        if covered {
            covered_count += 1;
        }
        replicates.push(CoverageReplicate {
            kl_payload,
            regret_payload,
            empirical_risk: empirical.risk,
            population_risk: population.risk,
            gap,
            mc_tolerance,
            bound_kl,
            bound_regret,
            covered,
        });
    }

    let coverage = covered_count as f64 / config.replicates as f64;
    Ok(CoverageReport {
        replicates,
        coverage,
        wilson_99_lower: wilson_lower(covered_count, config.replicates, 2.576),
        kappa: config.kappa,
        delta: config.delta,
    })
}
