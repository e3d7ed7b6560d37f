//! Sequential Monte Carlo for likelihoods without a conjugate posterior.
//!
//! Particles start as prior draws and are reweighted by each observation's
//! likelihood. When the effective sample size drops below half the particle
//! count the cloud is resampled systematically and refreshed with a few
//! random-walk Metropolis sweeps targeting the current posterior, so
//! particle diversity survives long runs. The per-step predictive estimate
//! is the weighted average of the particles' own predictive densities.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{linear_value, loss_of_theta, Layout};
use crate::error::{Error, Result};
use crate::likelihoods::{Example, LikelihoodSpec};
use crate::math::log_sum_exp;
use crate::priors::PriorSpec;

use super::MethodConfig;

/// A weighted particle approximation of the parameter posterior.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub particles: Vec<DVector<f64>>,
    /// Normalized log-weights (their log-sum-exp is 0).
    pub log_weights: Vec<f64>,
}

impl ParticleCloud {
    /// Plain normalized weights.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    /// Effective sample size `1 / sum w_i^2`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights().iter().map(|w| w * w).sum::<f64>()
    }

    /// Weighted mean of the cloud.
    pub fn mean(&self) -> DVector<f64> {
        let dim = self.particles[0].len();
        let mut mean = DVector::zeros(dim);
        for (theta, w) in self.particles.iter().zip(self.weights()) {
            mean += theta * w;
        }
        mean
    }

    /// Weighted average of a per-particle statistic.
    pub fn expectation<F: Fn(&DVector<f64>) -> f64>(&self, f: F) -> f64 {
        self.particles
            .iter()
            .zip(self.weights())
            .map(|(theta, w)| w * f(theta))
            .sum()
    }
}

pub(super) struct SmcOutcome {
    pub per_step_loss: Vec<f64>,
    pub cloud: ParticleCloud,
    pub ess: Vec<f64>,
    pub predictive_se: Vec<f64>,
    pub resample_count: usize,
    pub mh_acceptance: Option<f64>,
}

fn log_posterior(
    likelihood: &LikelihoodSpec,
    prior: &PriorSpec,
    layout: &Layout,
    observed: &[Example],
    theta: &DVector<f64>,
) -> Result<f64> {
    Ok(prior.log_density(theta)?.total() - loss_of_theta(likelihood, layout, theta, observed)?)
}

fn weighted_std(particles: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    let dim = particles[0].len();
    let mut mean = DVector::zeros(dim);
    for (theta, &w) in particles.iter().zip(weights) {
        mean += theta * w;
    }
    let mut var: DVector<f64> = DVector::zeros(dim);
    for (theta, &w) in particles.iter().zip(weights) {
        let d = theta - &mean;
        for i in 0..dim {
            var[i] += w * d[i] * d[i];
        }
    }
    DVector::from_fn(dim, |i, _| var[i].sqrt().max(1e-6 * (1.0 + mean[i].abs())))
}

fn systematic_resample<R: Rng + ?Sized>(
    particles: &mut Vec<DVector<f64>>,
    log_weights: &mut [f64],
    rng: &mut R,
) {
    let n = particles.len();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for lw in log_weights.iter() {
        acc += lw.exp();
        cumulative.push(acc);
    }
    cumulative[n - 1] = 1.0;
    let u0: f64 = rng.gen();
    let mut selected = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let u = (i as f64 + u0) / n as f64;
        while cumulative[j] < u && j + 1 < n {
            j += 1;
        }
        selected.push(particles[j].clone());
    }
    *particles = selected;
    let uniform = -(n as f64).ln();
    log_weights.iter_mut().for_each(|lw| *lw = uniform);
}

pub(super) fn run_smc(
    likelihood: &LikelihoodSpec,
    prior: &PriorSpec,
    data: &[Example],
    layout: &Layout,
    config: &MethodConfig,
) -> Result<SmcOutcome> {
    if matches!(prior, PriorSpec::SpikeSlab { .. }) {
        return Err(Error::UnsupportedConfiguration(
            "the particle path requires a continuous prior (atoms cannot survive \
             random-walk refreshes)"
                .to_string(),
        ));
    }
    let n = config.particles;
    if n < 2 {
        return Err(Error::InvalidParameter {
            name: "particles",
            reason: "must be at least 2",
            value: n as f64,
        });
    }
    let dim = layout.total_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut particles: Vec<DVector<f64>> = (0..n).map(|_| prior.sample(&mut rng)).collect();
    let mut log_weights = vec![-(n as f64).ln(); n];
    let mut per_step_loss = Vec::with_capacity(data.len());
    let mut ess_history = Vec::with_capacity(data.len());
    let mut se_history = Vec::with_capacity(data.len());
    let mut resample_count = 0usize;
    let mut proposals = 0usize;
    let mut accepts = 0usize;
    let step_scale = 2.38 / (dim as f64).sqrt();

    for (t, example) in data.iter().enumerate() {
        let mut log_preds = Vec::with_capacity(n);
        for theta in &particles {
            let z = linear_value(likelihood, layout, theta, example)?;
            log_preds.push(-likelihood.neg_log_loss(&z, example.label())?);
        }
        let contributions: Vec<f64> = log_weights
            .iter()
            .zip(&log_preds)
            .map(|(lw, lp)| lw + lp)
            .collect();
        let step_log_marginal = log_sum_exp(&contributions);
        if !step_log_marginal.is_finite() {
            return Err(Error::NonFinite("particle predictive density"));
        }
        per_step_loss.push(-step_log_marginal);
        // Relative standard error of the weighted predictive estimate:
        // sqrt(sum_i w_i^2 (p_i - p_hat)^2) / p_hat, computed in log space.
        let mut variance = 0.0;
        for i in 0..n {
            let ratio = (contributions[i] - step_log_marginal).exp();
            let w = log_weights[i].exp();
            variance += (ratio - w) * (ratio - w);
        }
        se_history.push(variance.sqrt());
        for i in 0..n {
            log_weights[i] = contributions[i] - step_log_marginal;
        }
        let ess = 1.0 / log_weights.iter().map(|lw| (2.0 * lw).exp()).sum::<f64>();
        ess_history.push(ess);

        if ess < n as f64 / 2.0 {
            resample_count += 1;
            let weights: Vec<f64> = log_weights.iter().map(|lw| lw.exp()).collect();
            let scales = weighted_std(&particles, &weights);
            systematic_resample(&mut particles, &mut log_weights, &mut rng);
            let observed = &data[..=t];
            let mut log_posts = Vec::with_capacity(n);
            for theta in &particles {
                log_posts.push(log_posterior(likelihood, prior, layout, observed, theta)?);
            }
            for _ in 0..config.refresh_sweeps {
                for i in 0..n {
                    let proposal = DVector::from_fn(dim, |d, _| {
                        particles[i][d]
                            + step_scale * scales[d] * rng.sample::<f64, _>(StandardNormal)
                    });
                    let lp_new =
                        log_posterior(likelihood, prior, layout, observed, &proposal)?;
                    proposals += 1;
                    if rng.gen::<f64>().ln() < lp_new - log_posts[i] {
                        particles[i] = proposal;
                        log_posts[i] = lp_new;
                        accepts += 1;
                    }
                }
            }
        }
    }

    Ok(SmcOutcome {
        per_step_loss,
        cloud: ParticleCloud {
            particles,
            log_weights,
        },
        ess: ess_history,
        predictive_se: se_history,
        resample_count,
        mh_acceptance: if proposals == 0 {
            None
        } else {
            Some(accepts as f64 / proposals as f64)
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn systematic_resampling_concentrates_on_heavy_particles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut particles: Vec<DVector<f64>> =
            (0..8).map(|i| DVector::from_element(1, i as f64)).collect();
        // Particle 3 carries 90% of the mass.
        let mut log_weights: Vec<f64> = (0..8)
            .map(|i| if i == 3 { 0.9f64.ln() } else { (0.1 / 7.0f64).ln() })
            .collect();
        systematic_resample(&mut particles, &mut log_weights, &mut rng);
        let copies = particles.iter().filter(|p| p[0] == 3.0).count();
        assert!(copies >= 7, "only {copies}/8 copies of the heavy particle");
        assert!((log_sum_exp(&log_weights) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn effective_sample_size_bounds() {
        let cloud = ParticleCloud {
            particles: vec![DVector::zeros(1); 4],
            log_weights: vec![-(4.0f64).ln(); 4],
        };
        assert!((cloud.effective_sample_size() - 4.0).abs() < 1e-9);
        let degenerate = ParticleCloud {
            particles: vec![DVector::zeros(1); 4],
            log_weights: vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        };
        assert!((degenerate.effective_sample_size() - 1.0).abs() < 1e-9);
    }
}
