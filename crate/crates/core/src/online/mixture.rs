//! Exact filtering for finite Gaussian-mixture posteriors.
//!
//! Two exact-path posteriors are mixtures of conjugate Gaussian states: the
//! spike-and-slab prior (one component per support, restricted to the
//! support's coordinates) and the heavy-tailed prior discretized over its
//! inverse-gamma mixing variance (one full-dimensional component per
//! quadrature node). Both share this filter: per step, every component
//! produces a Gaussian predictive, the mixture predictive is their
//! log-weighted sum, and weights are multiplied by each component's own
//! predictive density.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::math::log_sum_exp;

use super::conjugate::{gaussian_log_density, GaussianPosterior};

/// Largest spike-and-slab dimension admitted for exact support enumeration.
pub const MAX_ENUMERATION_DIM: usize = 15;

/// One Gaussian component of a mixture posterior.
#[derive(Debug, Clone)]
pub struct MixtureComponent {
    /// Normalized log-weight of the component.
    pub log_weight: f64,
    /// Coordinates of the full parameter space the component lives on
    /// (`None` = all of them). Off-support coordinates are exactly zero.
    pub coords: Option<Vec<usize>>,
    pub state: GaussianPosterior,
}

impl MixtureComponent {
    /// Gathers the entries of a full-space vector the component sees.
    pub fn restrict(&self, x_full: &DVector<f64>) -> DVector<f64> {
        match &self.coords {
            None => x_full.clone(),
            Some(coords) => DVector::from_fn(coords.len(), |i, _| x_full[coords[i]]),
        }
    }
}

/// All spike-and-slab support components at the prior: support `S` carries
/// prior mass `p^{n-|S|} (1-p)^{|S|}` and a `N(0, slab_variance I_{|S|})`
/// state. Supports are enumerated in lexicographic bit order.
pub fn spike_slab_components(
    n: usize,
    atom_probability: f64,
    slab_variance: f64,
) -> Result<Vec<MixtureComponent>> {
    if n > MAX_ENUMERATION_DIM {
        return Err(Error::EnumerationTooLarge {
            dim: n,
            max: MAX_ENUMERATION_DIM,
        });
    }
    let ln_p = atom_probability.ln();
    let ln_1mp = (-atom_probability).ln_1p();
    let mut components = Vec::with_capacity(1 << n);
    for mask in 0u32..(1u32 << n) {
        let coords: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = coords.len();
        let log_weight = (n - k) as f64 * ln_p + k as f64 * ln_1mp;
        let state =
            GaussianPosterior::from_prior_covariance(DMatrix::identity(k, k) * slab_variance);
        components.push(MixtureComponent {
            log_weight,
            coords: Some(coords),
            state,
        });
    }
    Ok(components)
}

/// Quadrature components for the heavy-tailed prior: the mixing variance
/// `V ~ InvGamma(nu/2, nu sigma^2 / 2)` is discretized on a midpoint grid in
/// `ln V` between its 1e-8 and 1-1e-8 quantiles, each node carrying the
/// prior `N(0, V_j I_n)` and the log-transformed density mass of its cell
/// (weights normalized over the grid).
pub fn t_quadrature_components(
    dim: usize,
    dof: f64,
    scale_variance: f64,
    nodes: usize,
) -> Result<Vec<MixtureComponent>> {
    if nodes < 2 {
        return Err(Error::InvalidParameter {
            name: "quadrature_nodes",
            reason: "must be at least 2",
            value: nodes as f64,
        });
    }
    let shape = dof / 2.0;
    let rate = dof * scale_variance / 2.0;
    let gamma = Gamma::new(shape, rate).map_err(|_| Error::InvalidParameter {
        name: "dof",
        reason: "inverse-gamma mixing distribution is undefined",
        value: dof,
    })?;
    // V = 1/W with W ~ Gamma(shape, rate), so Q_V(u) = 1 / Q_W(1 - u).
    let eps = 1e-8;
    let v_lo = 1.0 / gamma.inverse_cdf(1.0 - eps);
    let v_hi = 1.0 / gamma.inverse_cdf(eps);
    let (s_lo, s_hi) = (v_lo.ln(), v_hi.ln());
    let step = (s_hi - s_lo) / nodes as f64;
    // ln pi_V(v) for InvGamma(shape, rate).
    let ln_inv_gamma = |v: f64| shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * v.ln() - rate / v;
    let mut log_weights = Vec::with_capacity(nodes);
    let mut variances = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let s = s_lo + (j as f64 + 0.5) * step;
        let v = s.exp();
        // Change of variables: pi_V(v) dv = pi_V(e^s) e^s ds.
        log_weights.push(ln_inv_gamma(v) + s + step.ln());
        variances.push(v);
    }
    let norm = log_sum_exp(&log_weights);
    Ok(variances
        .into_iter()
        .zip(log_weights)
        .map(|(v, lw)| MixtureComponent {
            log_weight: lw - norm,
            coords: None,
            state: GaussianPosterior::from_prior_covariance(
                DMatrix::identity(dim, dim) * v,
            ),
        })
        .collect())
}

/// One filtering step: returns the mixture's per-step log-loss and leaves
/// the components conditioned on the observation with renormalized weights.
pub fn mixture_step(
    components: &mut [MixtureComponent],
    x_full: &DVector<f64>,
    y: f64,
    noise_variance: f64,
) -> f64 {
    let mut contributions = Vec::with_capacity(components.len());
    let mut restricted = Vec::with_capacity(components.len());
    for comp in components.iter() {
        let xr = comp.restrict(x_full);
        let (m, v) = comp.state.predictive(&xr, noise_variance);
        contributions.push(comp.log_weight + gaussian_log_density(y, m, v));
        restricted.push(xr);
    }
    let step_log_marginal = log_sum_exp(&contributions);
    for ((comp, contrib), xr) in components.iter_mut().zip(contributions).zip(restricted) {
        comp.log_weight = contrib - step_log_marginal;
        comp.state.update(&xr, y, noise_variance);
    }
    -step_log_marginal
}

/// Mixture predictive (weights, means, variances) at features `x_full`.
pub fn mixture_predictive(
    components: &[MixtureComponent],
    x_full: &DVector<f64>,
    noise_variance: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut weights = Vec::with_capacity(components.len());
    let mut means = Vec::with_capacity(components.len());
    let mut variances = Vec::with_capacity(components.len());
    for comp in components {
        let xr = comp.restrict(x_full);
        let (m, v) = comp.state.predictive(&xr, noise_variance);
        weights.push(comp.log_weight.exp());
        means.push(m);
        variances.push(v);
    }
    (weights, means, variances)
}

/// Expected cumulative Gaussian log-loss of the mixture posterior over a
/// dataset of embedded features.
pub fn mixture_expected_loss(
    components: &[MixtureComponent],
    embedded: &[DVector<f64>],
    ys: &[f64],
    noise_variance: f64,
) -> f64 {
    let mut total = 0.0;
    for comp in components {
        let w = comp.log_weight.exp();
        if w == 0.0 {
            continue;
        }
        let mut comp_loss = 0.0;
        for (x, &y) in embedded.iter().zip(ys) {
            let xr = comp.restrict(x);
            comp_loss += comp.state.expected_gaussian_loss(&xr, y, noise_variance);
        }
        total += w * comp_loss;
    }
    total
}

/// Posterior inclusion probability of each coordinate (support-restricted
/// mixtures only; full-space components count toward every coordinate).
pub fn inclusion_probabilities(components: &[MixtureComponent], dim: usize) -> Vec<f64> {
    let mut probs = vec![0.0; dim];
    for comp in components {
        let w = comp.log_weight.exp();
        match &comp.coords {
            None => probs.iter_mut().for_each(|p| *p += w),
            Some(coords) => coords.iter().for_each(|&i| probs[i] += w),
        }
    }
    probs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn support_enumeration_counts_and_masses() {
        let comps = spike_slab_components(3, 0.5, 1.0).unwrap();
        assert_eq!(comps.len(), 8);
        let total: f64 = comps.iter().map(|c| c.log_weight.exp()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        assert!(spike_slab_components(16, 0.5, 1.0).is_err());
    }

    #[test]
    fn quadrature_weights_normalize_and_cover_the_scale() {
        let comps = t_quadrature_components(2, 8.0, 1.5, 256).unwrap();
        assert_eq!(comps.len(), 256);
        let total: f64 = comps.iter().map(|c| c.log_weight.exp()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        // The integrated mixing mean E[V] = nu sigma^2 / (nu - 2) for nu > 2.
        let mean_v: f64 = comps
            .iter()
            .map(|c| c.log_weight.exp() * c.state.cov[(0, 0)])
            .sum();
        assert_relative_eq!(mean_v, 8.0 * 1.5 / 6.0, epsilon = 1e-3);
        // Heavy tails (small dof) lose some of the mean integrand to the
        // quantile truncation; the grid should still land within a percent.
        let heavy = t_quadrature_components(1, 3.0, 1.5, 256).unwrap();
        let heavy_mean: f64 = heavy
            .iter()
            .map(|c| c.log_weight.exp() * c.state.cov[(0, 0)])
            .sum();
        assert_relative_eq!(heavy_mean, 4.5, max_relative = 0.02);
    }

    #[test]
    fn single_component_mixture_reduces_to_the_conjugate_filter() {
        let mut comps = vec![MixtureComponent {
            log_weight: 0.0,
            coords: None,
            state: GaussianPosterior::from_prior_covariance(DMatrix::identity(2, 2)),
        }];
        let x = DVector::from_vec(vec![0.6, -0.2]);
        let mut reference = GaussianPosterior::from_prior_covariance(DMatrix::identity(2, 2));
        let (m, v) = reference.predictive(&x, 0.5);
        let loss = mixture_step(&mut comps, &x, 0.3, 0.5);
        assert_relative_eq!(loss, -gaussian_log_density(0.3, m, v), epsilon = 1e-12);
        reference.update(&x, 0.3, 0.5);
        assert_relative_eq!(comps[0].state.mean, reference.mean, epsilon = 1e-12);
        assert_relative_eq!(comps[0].state.cov, reference.cov, epsilon = 1e-12);
        assert_relative_eq!(comps[0].log_weight, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn inclusion_probabilities_track_the_data() {
        // Coordinate 0 drives the responses; its inclusion probability must
        // dominate coordinate 1's after a few strong observations.
        let mut comps = spike_slab_components(2, 0.5, 4.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        for _ in 0..6 {
            mixture_step(&mut comps, &x0, 2.0, 0.1);
        }
        let probs = inclusion_probabilities(&comps, 2);
        assert!(probs[0] > 0.99, "active coordinate at {}", probs[0]);
        assert!(probs[1] < 0.6, "inactive coordinate at {}", probs[1]);
    }
}
