//! The exact online paths (conjugate filtering, support enumeration,
//! mixing-scale quadrature) checked against independent oracles: direct
//! joint-marginal evaluations, one-dimensional adaptive integration, and
//! brute-force Monte Carlo.

use hibayes::data::{
    embedded_feature, generate, infer_layout, SourceSchedule, SyntheticConfig, ThetaSource,
};
use hibayes::likelihoods::{Example, Label, LikelihoodSpec};
use hibayes::math::{adaptive_simpson, spd_cholesky};
use hibayes::online::{
    posterior_predictive, run_online, MethodConfig, Method, OnlineRunResult, PosteriorState,
};
use hibayes::priors::PriorSpec;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

/// -ln N(y; 0, feature_gram * prior_cov + noise I) evaluated jointly: the
/// cumulative loss of the exact Bayesian learner in one shot.
fn direct_joint_loss(
    likelihood: &LikelihoodSpec,
    prior: &PriorSpec,
    examples: &[Example],
    noise: f64,
) -> f64 {
    let layout = infer_layout(likelihood, examples, Some(prior)).unwrap();
    let prior_cov = prior.covariance().unwrap();
    let t = examples.len();
    let mut y = DVector::zeros(t);
    let mut design = DMatrix::zeros(t, layout.total_dim());
    for (i, ex) in examples.iter().enumerate() {
        y[i] = match ex.label() {
            Label::Real(v) => *v,
            _ => panic!("regression labels expected"),
        };
        design
            .row_mut(i)
            .copy_from(&embedded_feature(&layout, ex).unwrap().transpose());
    }
    let mut gram = &design * &prior_cov * design.transpose();
    for i in 0..t {
        gram[(i, i)] += noise;
    }
    let chol = spd_cholesky(&gram, "joint marginal").unwrap();
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let solved = chol.solve(&y);
    0.5 * (y.dot(&solved) + log_det + t as f64 * (2.0 * std::f64::consts::PI).ln())
}

fn gaussian_stream(seed: u64, theta: Vec<f64>, rounds: usize, noise: f64) -> Vec<Example> {
    let n = theta.len();
    let likelihood = LikelihoodSpec::gaussian_regression(noise).unwrap();
    let config = SyntheticConfig {
        likelihood,
        theta: ThetaSource::Fixed(DVector::from_vec(theta)),
        num_features: n,
        schedule: SourceSchedule::Single { rounds },
    };
    generate(&config, seed).unwrap().examples
}

#[test]
fn twenty_step_chain_rule_matches_the_direct_marginal() {
    let noise = 0.6;
    let likelihood = LikelihoodSpec::gaussian_regression(noise).unwrap();
    let prior = PriorSpec::iso_gaussian(1.3, 1).unwrap();
    let data = gaussian_stream(42, vec![0.7], 20, noise);
    let run = run_online(&likelihood, &prior, &data, &MethodConfig::default()).unwrap();
    let direct = direct_joint_loss(&likelihood, &prior, &data, noise);
    assert!(
        (run.cumulative_loss - direct).abs() < 1e-8,
        "chain rule {} vs direct {}",
        run.cumulative_loss,
        direct
    );
    let total: f64 = run.per_step_loss.iter().sum();
    assert!((total - run.cumulative_loss).abs() < 1e-9);
}

#[test]
fn hierarchical_prior_chain_rule_matches_the_direct_marginal() {
    let noise = 0.5;
    let likelihood = LikelihoodSpec::gaussian_regression(noise).unwrap();
    let prior = PriorSpec::hier_gauss_one_level(0.7, 0.9, 2, 2).unwrap();
    let config = SyntheticConfig {
        likelihood: likelihood.clone(),
        theta: ThetaSource::FromPrior(prior.clone()),
        num_features: 2,
        schedule: SourceSchedule::RoundRobin {
            num_sources: 2,
            rounds: 14,
        },
    };
    let data = generate(&config, 5).unwrap().examples;
    let run = run_online(&likelihood, &prior, &data, &MethodConfig::default()).unwrap();
    assert_eq!(run.method, Method::ConjugateExact);
    let direct = direct_joint_loss(&likelihood, &prior, &data, noise);
    assert!((run.cumulative_loss - direct).abs() < 1e-8);
}

#[test]
fn two_level_prior_chain_rule_matches_the_direct_marginal() {
    let noise = 0.8;
    let likelihood = LikelihoodSpec::gaussian_regression(noise).unwrap();
    let prior =
        PriorSpec::hier_gauss_two_level(0.5, 0.6, 0.4, vec![1, 1, 2], 2).unwrap();
    let config = SyntheticConfig {
        likelihood: likelihood.clone(),
        theta: ThetaSource::FromPrior(prior.clone()),
        num_features: 2,
        schedule: SourceSchedule::RoundRobin {
            num_sources: 3,
            rounds: 12,
        },
    };
    let data = generate(&config, 31).unwrap().examples;
    let run = run_online(&likelihood, &prior, &data, &MethodConfig::default()).unwrap();
    let direct = direct_joint_loss(&likelihood, &prior, &data, noise);
    assert!((run.cumulative_loss - direct).abs() < 1e-8);
}

#[test]
fn cumulative_loss_is_permutation_invariant() {
    let noise = 0.6;
    let likelihood = LikelihoodSpec::gaussian_regression(noise).unwrap();
    let data = gaussian_stream(11, vec![0.5, -0.8], 12, noise);
    let mut shuffles: Vec<Vec<Example>> = Vec::new();
    let mut reversed = data.clone();
    reversed.reverse();
    shuffles.push(reversed);
    let mut rotated = data.clone();
    rotated.rotate_left(5);
    shuffles.push(rotated);

    // Exact Gaussian posterior, support enumeration, and quadrature are all
    // order-free in exact arithmetic.
    let priors = vec![
        PriorSpec::iso_gaussian(1.0, 2).unwrap(),
        PriorSpec::spike_slab(0.4, 1.2, 2).unwrap(),
        PriorSpec::multivariate_t(6.0, 1.0, 2).unwrap(),
    ];
    for prior in priors {
        let base = run_online(&likelihood, &prior, &data, &MethodConfig::default())
            .unwrap()
            .cumulative_loss;
        for shuffled in &shuffles {
            let permuted = run_online(&likelihood, &prior, shuffled, &MethodConfig::default())
                .unwrap()
                .cumulative_loss;
            assert!(
                (base - permuted).abs() < 1e-8,
                "order changed the loss: {base} vs {permuted}"
            );
        }
    }
}

#[test]
fn quadrature_matches_one_dimensional_adaptive_integration() {
    let noise = 0.7;
    let dof = 5.0;
    let scale = 1.1;
    let likelihood = LikelihoodSpec::gaussian_regression(noise).unwrap();
    let prior = PriorSpec::multivariate_t(dof, scale, 1).unwrap();
    let data = gaussian_stream(23, vec![0.9], 5, noise);
    let run = run_online(&likelihood, &prior, &data, &MethodConfig::default()).unwrap();
    assert_eq!(run.method, Method::Quadrature);

    // Oracle: integrate the conditional joint marginal against the mixing
    // density with adaptive Simpson in log-scale, over wider quantile
    // bounds than the production grid uses.
    let shape = dof / 2.0;
    let rate = dof * scale / 2.0;
    let ln_mixing = |v: f64| {
        shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * v.ln() - rate / v
    };
    let t = data.len();
    let mut y = DVector::zeros(t);
    let mut x = DVector::zeros(t);
    for (i, ex) in data.iter().enumerate() {
        x[i] = ex.features()[0];
        y[i] = match ex.label() {
            Label::Real(v) => *v,
            _ => unreachable!(),
        };
    }
    let conditional_log_marginal = |v: f64| {
        let mut gram = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in 0..t {
                gram[(i, j)] = v * x[i] * x[j] + if i == j { noise } else { 0.0 };
            }
        }
        let chol = spd_cholesky(&gram, "conditional marginal").unwrap();
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let solved = chol.solve(&y);
        -0.5 * (y.dot(&solved) + log_det + t as f64 * (2.0 * std::f64::consts::PI).ln())
    };
    let mixing_gamma = Gamma::new(shape, rate).unwrap();
    let v_hi = 1.0 / mixing_gamma.inverse_cdf(1e-12);
    let v_lo = 1.0 / mixing_gamma.inverse_cdf(1.0 - 1e-12);
    let integrand = |s: f64| {
        let v = s.exp();
        (ln_mixing(v) + s + conditional_log_marginal(v)).exp()
    };
    let marginal = adaptive_simpson(&integrand, v_lo.ln(), v_hi.ln(), 1e-12);
    let oracle = -marginal.ln();
    assert!(
        (run.cumulative_loss - oracle).abs() < 1e-6,
        "quadrature {} vs adaptive integration {}",
        run.cumulative_loss,
        oracle
    );
    // The built-in half-resolution diagnostic should agree about the scale
    // of the grid error.
    assert!(run.diagnostics.quadrature_error.unwrap() < 1e-6);
}

#[test]
fn mixture_predictive_density_integrates_to_one() {
    let noise = 0.7;
    let likelihood = LikelihoodSpec::gaussian_regression(noise).unwrap();
    let prior = PriorSpec::spike_slab(0.5, 1.0, 3).unwrap();
    let data = gaussian_stream(9, vec![0.8, 0.0, -0.5], 6, noise);
    let run = run_online(&likelihood, &prior, &data, &MethodConfig::default()).unwrap();
    let x = DVector::from_vec(vec![0.4, -0.3, 0.2]);
    let predictive = posterior_predictive(&run, &x, None).unwrap();
    let (mean, variance) = predictive.mean_and_variance().unwrap();
    let half_width = 14.0 * variance.sqrt();
    let mass = adaptive_simpson(
        &|y: f64| predictive.density(y).unwrap(),
        mean - half_width,
        mean + half_width,
        1e-10,
    );
    assert!((mass - 1.0).abs() < 1e-6, "predictive mass {mass}");
}

#[test]
fn conjugate_predictive_variance_matches_brute_force_sampling() {
    let noise = 0.4;
    let likelihood = LikelihoodSpec::gaussian_regression(noise).unwrap();
    let prior = PriorSpec::iso_gaussian(0.9, 2).unwrap();
    let data = gaussian_stream(3, vec![0.6, -0.2], 10, noise);
    let run = run_online(&likelihood, &prior, &data, &MethodConfig::default()).unwrap();
    let x = DVector::from_vec(vec![0.7, 0.1]);
    let predictive = posterior_predictive(&run, &x, None).unwrap();
    let (mean, variance) = predictive.mean_and_variance().unwrap();

    // Analytic cross-check of the variance decomposition.
    if let PosteriorState::Gaussian { posterior, .. } = &run.posterior {
        let direct = x.dot(&(&posterior.cov * &x)) + noise;
        assert!((variance - direct).abs() < 1e-12);
    } else {
        panic!("conjugate run should carry a Gaussian state");
    }

    let sampler = run.posterior.sampler().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let draws = 1_000_000usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let theta = sampler.draw(&mut rng);
        let eps: f64 = StandardNormal.sample(&mut rng);
        let y = theta.dot(&x) + noise.sqrt() * eps;
        sum += y;
        sum_sq += y * y;
    }
    let mc_mean = sum / draws as f64;
    let mc_var = sum_sq / draws as f64 - mc_mean * mc_mean;
    // The sample variance of a Gaussian has standard error var * sqrt(2/N).
    let tolerance = 3.0 * variance * (2.0 / draws as f64).sqrt();
    assert!(
        (mc_var - variance).abs() < tolerance,
        "analytic {variance} vs monte carlo {mc_var} (tolerance {tolerance})"
    );
    assert!((mc_mean - mean).abs() < 4.0 * (variance / draws as f64).sqrt());
}

#[test]
fn quadrature_posterior_moments_match_a_dense_oracle_grid() {
    // Rerunning with a much finer grid should not move the posterior.
    let noise = 0.7;
    let likelihood = LikelihoodSpec::gaussian_regression(noise).unwrap();
    let prior = PriorSpec::multivariate_t(7.0, 0.8, 2).unwrap();
    let data = gaussian_stream(15, vec![0.4, 0.6], 8, noise);
    let coarse = run_online(&likelihood, &prior, &data, &MethodConfig::default()).unwrap();
    let fine = run_online(
        &likelihood,
        &prior,
        &data,
        &MethodConfig {
            quadrature_nodes: 1024,
            ..MethodConfig::default()
        },
    )
    .unwrap();
    assert!((coarse.cumulative_loss - fine.cumulative_loss).abs() < 1e-7);
    let m_coarse = coarse.posterior_summary();
    let m_fine = fine.posterior_summary();
    for d in 0..2 {
        assert!((m_coarse.mean[d] - m_fine.mean[d]).abs() < 1e-7);
        assert!((m_coarse.marginal_variance[d] - m_fine.marginal_variance[d]).abs() < 1e-6);
    }
}

/// Sanity for the run container contract: per-step losses sum to the
/// cumulative loss and every entry is finite.
#[test]
fn run_results_are_internally_consistent() {
    let noise = 1.0;
    let likelihood = LikelihoodSpec::gaussian_regression(noise).unwrap();
    let priors = vec![
        PriorSpec::iso_gaussian(1.0, 2).unwrap(),
        PriorSpec::spike_slab(0.5, 1.0, 2).unwrap(),
        PriorSpec::multivariate_t(5.0, 1.0, 2).unwrap(),
        PriorSpec::laplace(0.8, 2).unwrap(),
    ];
    let data = gaussian_stream(2, vec![0.3, -0.4], 8, noise);
    for prior in priors {
        let run = run_online(&likelihood, &prior, &data, &MethodConfig::default()).unwrap();
        check_consistency(&run);
    }
}

fn check_consistency(run: &OnlineRunResult) {
    assert!(run.per_step_loss.iter().all(|l| l.is_finite()));
    let total: f64 = run.per_step_loss.iter().sum();
    assert!((total - run.cumulative_loss).abs() < 1e-9);
    let moments = run.posterior_summary();
    assert!(moments.mean.iter().all(|m| m.is_finite()));
    assert!(moments.marginal_variance.iter().all(|v| *v >= 0.0));
}
