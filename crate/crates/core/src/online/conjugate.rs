//! Exact Gaussian filtering for linear regression under a Gaussian prior.
//!
//! With `y = theta . x + eps`, `eps ~ N(0, noise)`, and `theta ~ N(mean,
//! cov)`, each observation updates the posterior by a rank-1 correction and
//! the predictive distribution of `y` stays Gaussian throughout.

use nalgebra::{DMatrix, DVector};

/// Gaussian parameter posterior `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianPosterior {
    /// Zero-mean state with the given prior covariance.
    pub fn from_prior_covariance(cov: DMatrix<f64>) -> Self {
        let dim = cov.nrows();
        GaussianPosterior {
            mean: DVector::zeros(dim),
            cov,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Predictive mean and variance of `y = theta . x + eps` at this state.
    pub fn predictive(&self, x: &DVector<f64>, noise_variance: f64) -> (f64, f64) {
        let sx = &self.cov * x;
        (self.mean.dot(x), x.dot(&sx) + noise_variance)
    }

    /// Conditions on one observation `y` at features `x`.
    pub fn update(&mut self, x: &DVector<f64>, y: f64, noise_variance: f64) {
        let sx = &self.cov * x;
        let s = x.dot(&sx) + noise_variance;
        let residual = y - self.mean.dot(x);
        self.mean += &sx * (residual / s);
        self.cov -= &sx * sx.transpose() / s;
        // The rank-1 downdate is symmetric in exact arithmetic; keep it so.
        let dim = self.cov.nrows();
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (self.cov[(i, j)] + self.cov[(j, i)]);
                self.cov[(i, j)] = avg;
                self.cov[(j, i)] = avg;
            }
        }
    }

    /// Expected log-loss `E[(y - theta . x)^2 / (2 noise) + ln(2 pi noise)/2]`
    /// of the Gibbs parameter under this state, on one observation.
    pub fn expected_gaussian_loss(&self, x: &DVector<f64>, y: f64, noise_variance: f64) -> f64 {
        let residual = y - self.mean.dot(x);
        let spread = x.dot(&(&self.cov * x));
        0.5 * (2.0 * std::f64::consts::PI * noise_variance).ln()
            + (residual * residual + spread) / (2.0 * noise_variance)
    }
}

/// Log-density of `N(mean, variance)` at `y`.
pub fn gaussian_log_density(y: f64, mean: f64, variance: f64) -> f64 {
    let residual = y - mean;
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - residual * residual / (2.0 * variance)
}
