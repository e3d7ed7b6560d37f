//! Online Bayesian learning under log-loss.
//!
//! [`run_online`] processes an observation stream one example at a time,
//! charging each step the negative log posterior-predictive density of the
//! observed label and then conditioning on it. The method is picked per
//! likelihood/prior pair: Gaussian likelihoods with jointly Gaussian priors
//! are filtered in closed form, spike-and-slab priors go through exact
//! support enumeration, heavy-tailed scale mixtures through quadrature over
//! the mixing scale, and everything else through sequential Monte Carlo.

mod conjugate;
mod mixture;
mod smc;

pub use conjugate::{gaussian_log_density, GaussianPosterior};
pub use mixture::{
    inclusion_probabilities, mixture_expected_loss, mixture_predictive, mixture_step,
    spike_slab_components, t_quadrature_components, MixtureComponent, MAX_ENUMERATION_DIM,
};
pub use smc::ParticleCloud;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{embedded_feature, infer_layout, loss_of_theta, Layout};
use crate::divergences::kl_gaussian_gaussian;
use crate::error::{Error, Result};
use crate::likelihoods::{Example, Label, LikelihoodSpec};
use crate::math::{log_sum_exp, sigmoid, softmax, spd_cholesky};
use crate::priors::PriorSpec;

use smc::run_smc;

/// How a run's posterior was tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Closed-form Gaussian filtering (includes exact finite mixtures over
    /// enumerated supports).
    ConjugateExact,
    /// Exact conditional filtering combined with deterministic quadrature
    /// over a one-dimensional mixing scale.
    Quadrature,
    /// Sequential Monte Carlo with systematic resampling and random-walk
    /// refresh moves.
    Smc,
}

/// Tuning knobs for [`run_online`].
#[derive(Debug, Clone)]
pub struct MethodConfig {
    /// Route conjugate-capable problems through the particle path anyway
    /// (used to validate the sampler against exact answers).
    pub force_smc: bool,
    /// Particle count for the sequential Monte Carlo path.
    pub particles: usize,
    /// Metropolis refresh sweeps applied after each resampling event.
    pub refresh_sweeps: usize,
    /// Node count for the mixing-scale quadrature grid.
    pub quadrature_nodes: usize,
    /// Seed for every stochastic choice the run makes.
    pub seed: u64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            force_smc: false,
            particles: 4096,
            refresh_sweeps: 3,
            quadrature_nodes: 256,
            seed: 0,
        }
    }
}

/// Per-run health indicators. Vectors are empty and options `None` on paths
/// where the quantity does not exist.
#[derive(Debug, Clone, Default)]
pub struct RunDiagnostics {
    /// Effective sample size after each step (particle path only).
    pub effective_sample_size: Vec<f64>,
    /// Relative standard error of each step's predictive estimate
    /// (particle path only).
    pub predictive_se: Vec<f64>,
    /// Number of resampling events triggered.
    pub resample_count: usize,
    /// Acceptance rate of the Metropolis refresh moves, if any ran.
    pub mh_acceptance: Option<f64>,
    /// Absolute change in cumulative loss when the quadrature grid is
    /// rerun at half resolution (quadrature path only).
    pub quadrature_error: Option<f64>,
    /// Number of exact mixture components tracked (enumeration and
    /// quadrature paths).
    pub num_components: Option<usize>,
}

/// The tracked posterior at the end of a run.
#[derive(Debug, Clone)]
pub enum PosteriorState {
    /// Exact Gaussian posterior from conjugate filtering.
    Gaussian {
        posterior: GaussianPosterior,
        noise_variance: f64,
    },
    /// Exact finite mixture of Gaussians (support enumeration or
    /// mixing-scale quadrature).
    Mixture {
        components: Vec<MixtureComponent>,
        noise_variance: f64,
        dim: usize,
    },
    /// Weighted particle approximation.
    Particles { cloud: ParticleCloud },
}

/// First and second marginal moments of a posterior.
#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    pub mean: DVector<f64>,
    pub marginal_variance: DVector<f64>,
}

impl PosteriorState {
    /// Parameter dimension.
    pub fn dim(&self) -> usize {
        match self {
            PosteriorState::Gaussian { posterior, .. } => posterior.dim(),
            PosteriorState::Mixture { dim, .. } => *dim,
            PosteriorState::Particles { cloud } => cloud.particles[0].len(),
        }
    }

    /// Posterior mean and per-coordinate variance.
    pub fn moments(&self) -> PosteriorMoments {
        match self {
            PosteriorState::Gaussian { posterior, .. } => PosteriorMoments {
                mean: posterior.mean.clone(),
                marginal_variance: posterior.cov.diagonal(),
            },
            PosteriorState::Mixture {
                components, dim, ..
            } => {
                let mut mean: DVector<f64> = DVector::zeros(*dim);
                let mut second: DVector<f64> = DVector::zeros(*dim);
                for comp in components {
                    let w = comp.log_weight.exp();
                    let local_dim = comp.state.dim();
                    for local in 0..local_dim {
                        let global = match &comp.coords {
                            None => local,
                            Some(coords) => coords[local],
                        };
                        let m = comp.state.mean[local];
                        mean[global] += w * m;
                        second[global] += w * (m * m + comp.state.cov[(local, local)]);
                    }
                }
                let marginal_variance =
                    DVector::from_fn(*dim, |i, _| (second[i] - mean[i] * mean[i]).max(0.0));
                PosteriorMoments {
                    mean,
                    marginal_variance,
                }
            }
            PosteriorState::Particles { cloud } => {
                let dim = self.dim();
                let weights = cloud.weights();
                let mut mean = DVector::zeros(dim);
                for (theta, &w) in cloud.particles.iter().zip(&weights) {
                    mean += theta * w;
                }
                let mut var = DVector::zeros(dim);
                for (theta, &w) in cloud.particles.iter().zip(&weights) {
                    for i in 0..dim {
                        let d = theta[i] - mean[i];
                        var[i] += w * d * d;
                    }
                }
                PosteriorMoments {
                    mean,
                    marginal_variance: var,
                }
            }
        }
    }

    /// Prepares a reusable sampler (factorizations are done once here, not
    /// per draw).
    pub fn sampler(&self) -> Result<PosteriorSampler> {
        match self {
            PosteriorState::Gaussian { posterior, .. } => Ok(PosteriorSampler::Gaussian {
                mean: posterior.mean.clone(),
                chol: robust_cholesky_l(&posterior.cov, "posterior covariance")?,
            }),
            PosteriorState::Mixture {
                components, dim, ..
            } => {
                let mut cumulative = Vec::with_capacity(components.len());
                let mut acc = 0.0;
                let mut comps = Vec::with_capacity(components.len());
                for comp in components {
                    acc += comp.log_weight.exp();
                    cumulative.push(acc);
                    let chol = robust_cholesky_l(&comp.state.cov, "component covariance")?;
                    comps.push((comp.coords.clone(), comp.state.mean.clone(), chol));
                }
                if let Some(last) = cumulative.last_mut() {
                    *last = f64::INFINITY;
                }
                Ok(PosteriorSampler::Mixture {
                    cumulative,
                    components: comps,
                    dim: *dim,
                })
            }
            PosteriorState::Particles { cloud } => {
                let mut cumulative = Vec::with_capacity(cloud.particles.len());
                let mut acc = 0.0;
                for lw in &cloud.log_weights {
                    acc += lw.exp();
                    cumulative.push(acc);
                }
                if let Some(last) = cumulative.last_mut() {
                    *last = f64::INFINITY;
                }
                Ok(PosteriorSampler::Particles {
                    cumulative,
                    particles: cloud.particles.clone(),
                })
            }
        }
    }
}

/// Draws parameter vectors from a finished run's posterior.
#[derive(Debug, Clone)]
pub enum PosteriorSampler {
    Gaussian {
        mean: DVector<f64>,
        chol: DMatrix<f64>,
    },
    Mixture {
        cumulative: Vec<f64>,
        components: Vec<(Option<Vec<usize>>, DVector<f64>, DMatrix<f64>)>,
        dim: usize,
    },
    Particles {
        cumulative: Vec<f64>,
        particles: Vec<DVector<f64>>,
    },
}

fn pick_index(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| c > u)
        .unwrap_or(cumulative.len() - 1)
}

impl PosteriorSampler {
    /// One draw from the posterior.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            PosteriorSampler::Gaussian { mean, chol } => {
                let xi = DVector::from_fn(mean.len(), |_, _| rng.sample(StandardNormal));
                mean + chol * xi
            }
            PosteriorSampler::Mixture {
                cumulative,
                components,
                dim,
            } => {
                let idx = pick_index(cumulative, rng.gen());
                let (coords, mean, chol) = &components[idx];
                let local = mean.len();
                let xi = DVector::from_fn(local, |_, _| rng.sample(StandardNormal));
                let restricted = mean + chol * xi;
                match coords {
                    None => restricted,
                    Some(coords) => {
                        let mut full = DVector::zeros(*dim);
                        for (l, &g) in coords.iter().enumerate() {
                            full[g] = restricted[l];
                        }
                        full
                    }
                }
            }
            PosteriorSampler::Particles {
                cumulative,
                particles,
            } => particles[pick_index(cumulative, rng.gen())].clone(),
        }
    }
}

fn robust_cholesky_l(matrix: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    if matrix.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Ok(c) = spd_cholesky(matrix, context) {
        return Ok(c.l());
    }
    // Long-filtered covariances can lose strict positive definiteness to
    // roundoff; restore it with the smallest jitter that factors.
    let scale = matrix
        .diagonal()
        .iter()
        .fold(0.0f64, |a, d| a.max(d.abs()))
        .max(1e-300);
    for exponent in [-14, -11, -8] {
        let mut jittered = matrix.clone();
        let jitter = scale * 10f64.powi(exponent);
        for i in 0..matrix.nrows() {
            jittered[(i, i)] += jitter;
        }
        if let Ok(c) = spd_cholesky(&jittered, context) {
            return Ok(c.l());
        }
    }
    Err(Error::NotPositiveDefinite(context))
}

/// Everything a finished online run reports.
#[derive(Debug, Clone)]
pub struct OnlineRunResult {
    /// Per-step log-loss charged to the learner.
    pub per_step_loss: Vec<f64>,
    /// Sum of the per-step losses.
    pub cumulative_loss: f64,
    /// Final tracked posterior.
    pub posterior: PosteriorState,
    /// Method the dispatcher selected.
    pub method: Method,
    pub diagnostics: RunDiagnostics,
    /// Likelihood the run was evaluated under.
    pub likelihood: LikelihoodSpec,
    /// Prior the run started from.
    pub prior: PriorSpec,
    /// Parameter layout the run inferred from the stream.
    pub layout: Layout,
}

impl OnlineRunResult {
    /// Mean and per-coordinate variance of the final posterior.
    pub fn posterior_summary(&self) -> PosteriorMoments {
        self.posterior.moments()
    }
}

fn requires_particles(likelihood: &LikelihoodSpec, prior: &PriorSpec) -> bool {
    match likelihood {
        LikelihoodSpec::GaussianRegression { .. } => matches!(prior, PriorSpec::Laplace { .. }),
        LikelihoodSpec::BinaryLogistic | LikelihoodSpec::MultiClassLogistic { .. } => true,
    }
}

fn real_label(example: &Example) -> Result<f64> {
    match example.label() {
        Label::Real(y) => Ok(*y),
        _ => Err(Error::InvalidLabel {
            family: "gaussian_regression",
            reason: "expected a real-valued label",
        }),
    }
}

/// Runs the online learner over `data`, dispatching on the
/// likelihood/prior pair.
pub fn run_online(
    likelihood: &LikelihoodSpec,
    prior: &PriorSpec,
    data: &[Example],
    config: &MethodConfig,
) -> Result<OnlineRunResult> {
    for example in data {
        likelihood.validate_label(example.label())?;
    }
    let layout = infer_layout(likelihood, data, Some(prior))?;

    let (method, per_step_loss, posterior, diagnostics) =
        if config.force_smc || requires_particles(likelihood, prior) {
            let outcome = run_smc(likelihood, prior, data, &layout, config)?;
            (
                Method::Smc,
                outcome.per_step_loss,
                PosteriorState::Particles {
                    cloud: outcome.cloud,
                },
                RunDiagnostics {
                    effective_sample_size: outcome.ess,
                    predictive_se: outcome.predictive_se,
                    resample_count: outcome.resample_count,
                    mh_acceptance: outcome.mh_acceptance,
                    quadrature_error: None,
                    num_components: None,
                },
            )
        } else {
            let noise = match likelihood {
                LikelihoodSpec::GaussianRegression { noise_variance } => *noise_variance,
                _ => unreachable!("non-Gaussian likelihoods take the particle path"),
            };
            match prior {
                PriorSpec::IsoGaussian { .. }
                | PriorSpec::HierGaussOneLevel { .. }
                | PriorSpec::HierGaussTwoLevel { .. } => {
                    let mut post = GaussianPosterior::from_prior_covariance(prior.covariance()?);
                    let mut losses = Vec::with_capacity(data.len());
                    for example in data {
                        let x = embedded_feature(&layout, example)?;
                        let y = real_label(example)?;
                        let (mean, variance) = post.predictive(&x, noise);
                        losses.push(-gaussian_log_density(y, mean, variance));
                        post.update(&x, y, noise);
                    }
                    (
                        Method::ConjugateExact,
                        losses,
                        PosteriorState::Gaussian {
                            posterior: post,
                            noise_variance: noise,
                        },
                        RunDiagnostics::default(),
                    )
                }
                PriorSpec::SpikeSlab {
                    atom_probability,
                    slab_variance,
                    dim,
                } => {
                    let mut components =
                        spike_slab_components(*dim, *atom_probability, *slab_variance)?;
                    let losses = filter_mixture(&mut components, likelihood, &layout, data, noise)?;
                    let count = components.len();
                    (
                        Method::ConjugateExact,
                        losses,
                        PosteriorState::Mixture {
                            components,
                            noise_variance: noise,
                            dim: *dim,
                        },
                        RunDiagnostics {
                            num_components: Some(count),
                            ..RunDiagnostics::default()
                        },
                    )
                }
                PriorSpec::MultivariateT {
                    dof,
                    scale_variance,
                    dim,
                } => {
                    let mut components = t_quadrature_components(
                        *dim,
                        *dof,
                        *scale_variance,
                        config.quadrature_nodes,
                    )?;
                    let losses = filter_mixture(&mut components, likelihood, &layout, data, noise)?;
                    // Half-resolution rerun as a grid-convergence diagnostic.
                    let mut coarse = t_quadrature_components(
                        *dim,
                        *dof,
                        *scale_variance,
                        (config.quadrature_nodes / 2).max(2),
                    )?;
                    let coarse_losses =
                        filter_mixture(&mut coarse, likelihood, &layout, data, noise)?;
                    let error =
                        (losses.iter().sum::<f64>() - coarse_losses.iter().sum::<f64>()).abs();
                    let count = components.len();
                    (
                        Method::Quadrature,
                        losses,
                        PosteriorState::Mixture {
                            components,
                            noise_variance: noise,
                            dim: *dim,
                        },
                        RunDiagnostics {
                            quadrature_error: Some(error),
                            num_components: Some(count),
                            ..RunDiagnostics::default()
                        },
                    )
                }
                PriorSpec::Laplace { .. } => unreachable!("Laplace priors take the particle path"),
            }
        };

    let cumulative_loss: f64 = per_step_loss.iter().sum();
    if !cumulative_loss.is_finite() {
        return Err(Error::NonFinite("cumulative loss"));
    }
    Ok(OnlineRunResult {
        per_step_loss,
        cumulative_loss,
        posterior,
        method,
        diagnostics,
        likelihood: likelihood.clone(),
        prior: prior.clone(),
        layout,
    })
}

fn filter_mixture(
    components: &mut [MixtureComponent],
    likelihood: &LikelihoodSpec,
    layout: &Layout,
    data: &[Example],
    noise_variance: f64,
) -> Result<Vec<f64>> {
    let _ = likelihood;
    let mut losses = Vec::with_capacity(data.len());
    for example in data {
        let x = embedded_feature(layout, example)?;
        let y = real_label(example)?;
        losses.push(mixture_step(components, &x, y, noise_variance));
    }
    Ok(losses)
}

/// Posterior-predictive law of the next label at feature vector `features`
/// (optionally tagged with a 1-based `source` when the layout has blocks).
#[derive(Debug, Clone)]
pub enum Predictive {
    Gaussian {
        mean: f64,
        variance: f64,
    },
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
    },
    Binary {
        /// Probability of the label +1.
        p_plus: f64,
    },
    Categorical {
        /// Probabilities of classes 1..K.
        probs: Vec<f64>,
    },
}

impl Predictive {
    /// Predictive density at a real observation (continuous families only).
    pub fn density(&self, y: f64) -> Result<f64> {
        Ok(self.log_density(&Label::Real(y))?.exp())
    }

    /// Log predictive mass/density of a label.
    pub fn log_density(&self, label: &Label) -> Result<f64> {
        match (self, label) {
            (Predictive::Gaussian { mean, variance }, Label::Real(y)) => {
                Ok(gaussian_log_density(*y, *mean, *variance))
            }
            (
                Predictive::GaussianMixture {
                    weights,
                    means,
                    variances,
                },
                Label::Real(y),
            ) => {
                let contributions: Vec<f64> = weights
                    .iter()
                    .zip(means.iter().zip(variances))
                    .map(|(w, (m, v))| w.ln() + gaussian_log_density(*y, *m, *v))
                    .collect();
                Ok(log_sum_exp(&contributions))
            }
            (Predictive::Binary { p_plus }, Label::Sign(s)) => {
                if *s == 1 {
                    Ok(p_plus.ln())
                } else {
                    Ok((1.0 - p_plus).ln())
                }
            }
            (Predictive::Categorical { probs }, Label::Class(k)) => {
                if *k == 0 || *k > probs.len() {
                    return Err(Error::InvalidLabel {
                        family: "multi_class_logistic",
                        reason: "class index out of range for the predictive",
                    });
                }
                Ok(probs[*k - 1].ln())
            }
            _ => Err(Error::InvalidLabel {
                family: "predictive",
                reason: "label kind does not match the predictive family",
            }),
        }
    }

    /// Probabilities over the discrete label set: `[p(-1), p(+1)]` for the
    /// binary family, `[p(1), ..., p(K)]` for the multi-class family.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        match self {
            Predictive::Binary { p_plus } => Ok(vec![1.0 - p_plus, *p_plus]),
            Predictive::Categorical { probs } => Ok(probs.clone()),
            _ => Err(Error::UnsupportedConfiguration(
                "a continuous predictive has no probability vector; use density()".to_string(),
            )),
        }
    }

    /// Mean and variance of the predictive (continuous families only).
    pub fn mean_and_variance(&self) -> Option<(f64, f64)> {
        match self {
            Predictive::Gaussian { mean, variance } => Some((*mean, *variance)),
            Predictive::GaussianMixture {
                weights,
                means,
                variances,
            } => {
                let mean: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
                let second: f64 = weights
                    .iter()
                    .zip(means.iter().zip(variances))
                    .map(|(w, (m, v))| w * (m * m + v))
                    .sum();
                Some((mean, second - mean * mean))
            }
            _ => None,
        }
    }
}

fn embed_block(layout: &Layout, features: &DVector<f64>, block: usize) -> Result<DVector<f64>> {
    if features.len() != layout.block_dim {
        return Err(Error::dim(layout.block_dim, features.len(), "feature vector"));
    }
    if block >= layout.blocks {
        return Err(Error::InvalidParameter {
            name: "source",
            reason: "exceeds the number of blocks in the layout",
            value: (block + 1) as f64,
        });
    }
    let mut full = DVector::zeros(layout.total_dim());
    full.rows_mut(block * layout.block_dim, layout.block_dim)
        .copy_from(features);
    Ok(full)
}

/// Posterior-predictive law at `features` under a finished run. `source` is
/// the 1-based block tag for multi-source layouts (`None` means block 1).
pub fn posterior_predictive(
    run: &OnlineRunResult,
    features: &DVector<f64>,
    source: Option<usize>,
) -> Result<Predictive> {
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("features"));
    }
    let block = match source {
        None => 0,
        Some(0) => {
            return Err(Error::InvalidParameter {
                name: "source",
                reason: "sources are numbered from 1",
                value: 0.0,
            })
        }
        Some(s) => s - 1,
    };
    match (&run.posterior, &run.likelihood) {
        (
            PosteriorState::Gaussian {
                posterior,
                noise_variance,
            },
            LikelihoodSpec::GaussianRegression { .. },
        ) => {
            let x = embed_block(&run.layout, features, block)?;
            let (mean, variance) = posterior.predictive(&x, *noise_variance);
            Ok(Predictive::Gaussian { mean, variance })
        }
        (
            PosteriorState::Mixture {
                components,
                noise_variance,
                ..
            },
            LikelihoodSpec::GaussianRegression { .. },
        ) => {
            let x = embed_block(&run.layout, features, block)?;
            let (weights, means, variances) = mixture_predictive(components, &x, *noise_variance);
            Ok(Predictive::GaussianMixture {
                weights,
                means,
                variances,
            })
        }
        (PosteriorState::Particles { cloud }, LikelihoodSpec::GaussianRegression { noise_variance }) => {
            let x = embed_block(&run.layout, features, block)?;
            let weights = cloud.weights();
            let means: Vec<f64> = cloud.particles.iter().map(|theta| theta.dot(&x)).collect();
            let variances = vec![*noise_variance; means.len()];
            Ok(Predictive::GaussianMixture {
                weights,
                means,
                variances,
            })
        }
        (PosteriorState::Particles { cloud }, LikelihoodSpec::BinaryLogistic) => {
            let x = embed_block(&run.layout, features, block)?;
            let p_plus = cloud.expectation(|theta| sigmoid(-theta.dot(&x)));
            Ok(Predictive::Binary { p_plus })
        }
        (PosteriorState::Particles { cloud }, LikelihoodSpec::MultiClassLogistic { num_classes }) => {
            if source.is_some() {
                return Err(Error::UnsupportedConfiguration(
                    "multi-class layouts identify blocks with classes; source tags do not apply"
                        .to_string(),
                ));
            }
            if features.len() != run.layout.block_dim {
                return Err(Error::dim(
                    run.layout.block_dim,
                    features.len(),
                    "feature vector",
                ));
            }
            let n = run.layout.block_dim;
            let k = *num_classes;
            let weights = cloud.weights();
            let mut probs = vec![0.0; k];
            for (theta, w) in cloud.particles.iter().zip(weights) {
                let scores =
                    DVector::from_fn(k, |class, _| theta.rows(class * n, n).dot(features));
                let p = softmax(&scores);
                for class in 0..k {
                    probs[class] += w * p[class];
                }
            }
            Ok(Predictive::Categorical { probs })
        }
        _ => Err(Error::UnsupportedConfiguration(
            "this posterior state cannot form a predictive for the run's likelihood".to_string(),
        )),
    }
}

/// KL divergence from the prior to a run's posterior, reported through two
/// routes: a closed form when the posterior is exactly Gaussian, and the
/// loss identity `KL = cumulative_loss - E_posterior[total loss]`, which
/// holds because the posterior reweights the prior by the exponentiated
/// negative loss.
#[derive(Debug, Clone)]
pub struct PosteriorPriorKl {
    /// Best available value (closed form when it exists, otherwise the
    /// loss-identity route).
    pub value: f64,
    /// Closed-form Gaussian-to-Gaussian divergence, when the posterior is
    /// exactly Gaussian.
    pub closed_form: Option<f64>,
    /// The loss-identity route.
    pub loss_identity: f64,
}

/// Computes `KL(posterior || prior)` for a finished run; `data` must be the
/// same stream the run consumed.
pub fn posterior_kl_from_prior(
    run: &OnlineRunResult,
    data: &[Example],
) -> Result<PosteriorPriorKl> {
    if data.len() != run.per_step_loss.len() {
        return Err(Error::dim(
            run.per_step_loss.len(),
            data.len(),
            "observation stream",
        ));
    }
    let expected_loss = match &run.posterior {
        PosteriorState::Gaussian {
            posterior,
            noise_variance,
        } => {
            let mut total = 0.0;
            for example in data {
                let x = embedded_feature(&run.layout, example)?;
                total += posterior.expected_gaussian_loss(&x, real_label(example)?, *noise_variance);
            }
            total
        }
        PosteriorState::Mixture {
            components,
            noise_variance,
            ..
        } => {
            let mut embedded = Vec::with_capacity(data.len());
            let mut ys = Vec::with_capacity(data.len());
            for example in data {
                embedded.push(embedded_feature(&run.layout, example)?);
                ys.push(real_label(example)?);
            }
            mixture_expected_loss(components, &embedded, &ys, *noise_variance)
        }
        PosteriorState::Particles { cloud } => {
            let mut total = 0.0;
            for (theta, w) in cloud.particles.iter().zip(cloud.weights()) {
                total += w * loss_of_theta(&run.likelihood, &run.layout, theta, data)?;
            }
            total
        }
    };
    let loss_identity = run.cumulative_loss - expected_loss;
    let closed_form = match &run.posterior {
        PosteriorState::Gaussian { posterior, .. } => {
            let prior_cov = run.prior.covariance()?;
            let zero = DVector::zeros(posterior.dim());
            Some(kl_gaussian_gaussian(&posterior.mean, &posterior.cov, &zero, &prior_cov)?.value)
        }
        _ => None,
    };
    Ok(PosteriorPriorKl {
        value: closed_form.unwrap_or(loss_identity),
        closed_form,
        loss_identity,
    })
}

/// Outcome of checking the information-budget inequality on a discrete
/// parameter grid: the exact Bayesian loss on one side, a candidate
/// distribution's loss plus its divergence from the prior on the other.
#[derive(Debug, Clone)]
pub struct CompressionCheck {
    /// Exact Bayesian cumulative log-loss under the discrete prior.
    pub bayes_loss: f64,
    /// Candidate distribution's expected cumulative loss.
    pub q_loss: f64,
    /// `KL(q || prior)` on the grid.
    pub q_divergence: f64,
    /// `q_loss + q_divergence`; always at least `bayes_loss`.
    pub q_bound: f64,
}

fn validate_masses(name: &'static str, masses: &[f64], len: usize) -> Result<()> {
    if masses.len() != len {
        return Err(Error::InvalidMasses(format!(
            "{name} has {} entries for a {len}-point grid",
            masses.len()
        )));
    }
    if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::InvalidMasses(format!(
            "{name} must be finite and non-negative"
        )));
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidMasses(format!(
            "{name} sums to {total}, not 1"
        )));
    }
    Ok(())
}

fn grid_losses(
    likelihood: &LikelihoodSpec,
    grid: &[DVector<f64>],
    data: &[Example],
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("parameter grid"));
    }
    if data.is_empty() {
        return Ok(vec![0.0; grid.len()]);
    }
    let layout = infer_layout(likelihood, data, None)?;
    grid.iter()
        .map(|theta| loss_of_theta(likelihood, &layout, theta, data))
        .collect()
}

/// Verifies the information-budget inequality on a discrete grid: the exact
/// Bayesian mixture loss never exceeds any candidate's loss plus its
/// divergence from the prior, with equality exactly at the posterior.
pub fn compression_check(
    likelihood: &LikelihoodSpec,
    grid: &[DVector<f64>],
    prior_masses: &[f64],
    q_masses: &[f64],
    data: &[Example],
) -> Result<CompressionCheck> {
    validate_masses("prior_masses", prior_masses, grid.len())?;
    validate_masses("q_masses", q_masses, grid.len())?;
    for (q, m) in q_masses.iter().zip(prior_masses) {
        if *q > 0.0 && *m == 0.0 {
            return Err(Error::InvalidMasses(
                "q places mass where the prior has none".to_string(),
            ));
        }
    }
    let losses = grid_losses(likelihood, grid, data)?;
    let contributions: Vec<f64> = prior_masses
        .iter()
        .zip(&losses)
        .filter(|(m, _)| **m > 0.0)
        .map(|(m, loss)| m.ln() - loss)
        .collect();
    let bayes_loss = -log_sum_exp(&contributions);
    let mut q_loss = 0.0;
    let mut q_divergence = 0.0;
    for ((q, m), loss) in q_masses.iter().zip(prior_masses).zip(&losses) {
        if *q > 0.0 {
            q_loss += q * loss;
            q_divergence += q * (q.ln() - m.ln());
        }
    }
    Ok(CompressionCheck {
        bayes_loss,
        q_loss,
        q_divergence,
        q_bound: q_loss + q_divergence,
    })
}

/// Exact posterior over a discrete parameter grid: prior mass reweighted by
/// the exponentiated negative loss.
pub fn discrete_posterior(
    likelihood: &LikelihoodSpec,
    grid: &[DVector<f64>],
    prior_masses: &[f64],
    data: &[Example],
) -> Result<Vec<f64>> {
    validate_masses("prior_masses", prior_masses, grid.len())?;
    let losses = grid_losses(likelihood, grid, data)?;
    let log_unnormalized: Vec<f64> = prior_masses
        .iter()
        .zip(&losses)
        .map(|(m, loss)| {
            if *m > 0.0 {
                m.ln() - loss
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let normalizer = log_sum_exp(&log_unnormalized);
    if !normalizer.is_finite() {
        return Err(Error::NonFinite("discrete posterior normalizer"));
    }
    Ok(log_unnormalized
        .iter()
        .map(|lu| (lu - normalizer).exp())
        .collect())
}
