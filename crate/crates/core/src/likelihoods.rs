//! Generalized-linear likelihoods and their per-example losses.
//!
//! Every family is driven by a linear value `z`: a scalar `z = theta . x` for
//! regression and binary classification, or the vector of per-class scores
//! for multi-class logistic regression. The per-example loss is the negative
//! log conditional density/mass `f_y(z) = -ln p(y | z)`:
//!
//! * Gaussian regression: `f_y(z) = (y - z)^2 / (2 sigma^2) + ln(2 pi sigma^2) / 2`.
//! * Binary logistic (labels in {-1, +1}): `p(y | z) = 1 / (1 + exp(y z))`,
//!   so `f_y(z) = ln(1 + exp(y z))` — note the sign convention: positive
//!   `y z` makes the label *less* likely.
//! * Multi-class logistic (1-based labels in {1..K}):
//!   `f_y(z) = -z_y + ln sum_k exp(z_k)`.
//!
//! Each family carries a smoothness constant `c` bounding the curvature of
//! `f_y` along `z`; the regret bounds in [`crate::bounds`] consume it. The
//! [`hessian_norm_probe`](LikelihoodSpec::hessian_norm_probe) measures the
//! actual curvature by central finite differences so tests can confirm the
//! constant is honored with slack.

use nalgebra::{DMatrix, DVector};

use crate::error::{require_positive, Error, Result};
use crate::math::{log1p_exp, log_sum_exp, sigmoid, softmax};

/// Slack allowed on the unit-norm feature contract at ingestion.
pub const FEATURE_NORM_TOLERANCE: f64 = 1e-9;

/// Step used by the finite-difference Hessian probe.
const FD_STEP: f64 = 1e-4;

/// Observation label, matched to the likelihood family.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    /// Real-valued response for Gaussian regression.
    Real(f64),
    /// Binary label in {-1, +1}.
    Sign(i8),
    /// 1-based class index in {1..K} for multi-class logistic regression.
    Class(usize),
}

/// Linear value the loss is evaluated at: a scalar for single-output
/// families, a K-vector of class scores for multi-class.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearValue {
    Scalar(f64),
    Vector(DVector<f64>),
}

impl LinearValue {
    /// Dimension of the linear value (1 for scalars).
    pub fn dim(&self) -> usize {
        match self {
            LinearValue::Scalar(_) => 1,
            LinearValue::Vector(v) => v.len(),
        }
    }
}

/// One observation: features, label, and an optional 1-based source id used
/// by hierarchical models that share statistical strength across sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    x: DVector<f64>,
    y: Label,
    source: Option<usize>,
}

impl Example {
    /// Builds an example, enforcing the unit-ball feature contract
    /// `||x||_2 <= 1 + 1e-9`; all entries must be finite.
    pub fn new(x: DVector<f64>, y: Label, source: Option<usize>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        let norm = x.norm();
        if norm > 1.0 + FEATURE_NORM_TOLERANCE {
            return Err(Error::FeatureNormTooLarge { norm });
        }
        if let Some(s) = source {
            if s == 0 {
                return Err(Error::InvalidParameter {
                    name: "source",
                    reason: "source ids are 1-based",
                    value: 0.0,
                });
            }
        }
        Ok(Example { x, y, source })
    }

    /// Builds an example, rescaling any feature vector with norm above 1
    /// onto the unit sphere instead of rejecting it.
    pub fn new_normalized(mut x: DVector<f64>, y: Label, source: Option<usize>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        let norm = x.norm();
        if norm > 1.0 {
            x /= norm;
        }
        Example::new(x, y, source)
    }

    pub fn features(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn label(&self) -> &Label {
        &self.y
    }

    /// 1-based source id, if the example belongs to a named source.
    pub fn source(&self) -> Option<usize> {
        self.source
    }

    pub fn num_features(&self) -> usize {
        self.x.len()
    }
}

/// A GLM likelihood family.
#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodSpec {
    GaussianRegression { noise_variance: f64 },
    BinaryLogistic,
    MultiClassLogistic { num_classes: usize },
}

impl LikelihoodSpec {
    /// Gaussian regression with the given noise variance (> 0).
    pub fn gaussian_regression(noise_variance: f64) -> Result<Self> {
        require_positive("noise_variance", noise_variance)?;
        Ok(LikelihoodSpec::GaussianRegression { noise_variance })
    }

    /// Binary logistic regression with labels in {-1, +1}.
    pub fn binary_logistic() -> Self {
        LikelihoodSpec::BinaryLogistic
    }

    /// Multi-class logistic regression over `num_classes >= 2` classes.
    pub fn multi_class_logistic(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidParameter {
                name: "num_classes",
                reason: "must be at least 2",
                value: num_classes as f64,
            });
        }
        Ok(LikelihoodSpec::MultiClassLogistic { num_classes })
    }

    /// Short family name for error messages and reports.
    pub fn family_name(&self) -> &'static str {
        match self {
            LikelihoodSpec::GaussianRegression { .. } => "gaussian_regression",
            LikelihoodSpec::BinaryLogistic => "binary_logistic",
            LikelihoodSpec::MultiClassLogistic { .. } => "multi_class_logistic",
        }
    }

    /// Dimension of the linear value: 1 for single-output families, the
    /// class count for multi-class.
    pub fn linear_dim(&self) -> usize {
        match self {
            LikelihoodSpec::MultiClassLogistic { num_classes } => *num_classes,
            _ => 1,
        }
    }

    /// Parameter dimension for a model over `num_features` features: `n` for
    /// single-output families, `K * n` for multi-class (one weight vector per
    /// class, concatenated class-major).
    pub fn param_dim(&self, num_features: usize) -> usize {
        self.linear_dim() * num_features
    }

    /// Curvature constant `c`: an upper bound on the second derivative of
    /// `f_y` along any direction of `z`, uniformly over labels.
    pub fn smoothness_constant(&self) -> f64 {
        match self {
            LikelihoodSpec::GaussianRegression { noise_variance } => 1.0 / noise_variance,
            LikelihoodSpec::BinaryLogistic => 0.5,
            LikelihoodSpec::MultiClassLogistic { .. } => 0.5,
        }
    }

    /// Checks that a label is admissible for this family.
    pub fn validate_label(&self, y: &Label) -> Result<()> {
        match (self, y) {
            (LikelihoodSpec::GaussianRegression { .. }, Label::Real(v)) => {
                if v.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidLabel {
                        family: self.family_name(),
                        reason: "real label must be finite",
                    })
                }
            }
            (LikelihoodSpec::BinaryLogistic, Label::Sign(s)) => {
                if *s == 1 || *s == -1 {
                    Ok(())
                } else {
                    Err(Error::InvalidLabel {
                        family: self.family_name(),
                        reason: "binary label must be -1 or +1",
                    })
                }
            }
            (LikelihoodSpec::MultiClassLogistic { num_classes }, Label::Class(k)) => {
                if *k >= 1 && *k <= *num_classes {
                    Ok(())
                } else {
                    Err(Error::InvalidLabel {
                        family: self.family_name(),
                        reason: "class index must lie in 1..=K",
                    })
                }
            }
            _ => Err(Error::InvalidLabel {
                family: self.family_name(),
                reason: "label kind does not match the likelihood family",
            }),
        }
    }

    fn check_linear_dim(&self, z: &LinearValue) -> Result<()> {
        let expected = self.linear_dim();
        let got = z.dim();
        let ok = match (self, z) {
            (LikelihoodSpec::MultiClassLogistic { .. }, LinearValue::Vector(_)) => got == expected,
            (LikelihoodSpec::MultiClassLogistic { .. }, LinearValue::Scalar(_)) => false,
            (_, LinearValue::Scalar(_)) => true,
            (_, LinearValue::Vector(_)) => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::dim(expected, got, "linear value"))
        }
    }

    /// Per-example loss `f_y(z) = -ln p(y | z)`.
    ///
    /// Finite for all finite inputs; no clamping is applied.
    pub fn neg_log_loss(&self, z: &LinearValue, y: &Label) -> Result<f64> {
        self.validate_label(y)?;
        self.check_linear_dim(z)?;
        Ok(match (self, z, y) {
            (
                LikelihoodSpec::GaussianRegression { noise_variance },
                LinearValue::Scalar(z),
                Label::Real(y),
            ) => {
                let resid = y - z;
                0.5 * (2.0 * std::f64::consts::PI * noise_variance).ln()
                    + resid * resid / (2.0 * noise_variance)
            }
            (LikelihoodSpec::BinaryLogistic, LinearValue::Scalar(z), Label::Sign(s)) => {
                log1p_exp(f64::from(*s) * z)
            }
            (LikelihoodSpec::MultiClassLogistic { .. }, LinearValue::Vector(z), Label::Class(k)) => {
                let scores: Vec<f64> = z.iter().cloned().collect();
                -z[k - 1] + log_sum_exp(&scores)
            }
            _ => unreachable!("validated above"),
        })
    }

    /// Gradient of `f_y` with respect to `z` (same shape as `z`).
    pub fn neg_log_loss_grad(&self, z: &LinearValue, y: &Label) -> Result<LinearValue> {
        self.validate_label(y)?;
        self.check_linear_dim(z)?;
        Ok(match (self, z, y) {
            (
                LikelihoodSpec::GaussianRegression { noise_variance },
                LinearValue::Scalar(z),
                Label::Real(y),
            ) => LinearValue::Scalar((z - y) / noise_variance),
            (LikelihoodSpec::BinaryLogistic, LinearValue::Scalar(z), Label::Sign(s)) => {
                let ys = f64::from(*s);
                LinearValue::Scalar(ys * sigmoid(ys * z))
            }
            (LikelihoodSpec::MultiClassLogistic { .. }, LinearValue::Vector(z), Label::Class(k)) => {
                let mut g = softmax(z);
                g[k - 1] -= 1.0;
                LinearValue::Vector(g)
            }
            _ => unreachable!("validated above"),
        })
    }

    /// Exact Hessian of `f_y` with respect to `z` (for single-output
    /// families this is the 1x1 second derivative).
    pub fn neg_log_loss_hessian(&self, z: &LinearValue, y: &Label) -> Result<DMatrix<f64>> {
        self.validate_label(y)?;
        self.check_linear_dim(z)?;
        Ok(match (self, z) {
            (LikelihoodSpec::GaussianRegression { noise_variance }, LinearValue::Scalar(_)) => {
                DMatrix::from_element(1, 1, 1.0 / noise_variance)
            }
            (LikelihoodSpec::BinaryLogistic, LinearValue::Scalar(zv)) => {
                let y = match y {
                    Label::Sign(s) => f64::from(*s),
                    _ => unreachable!(),
                };
                let p = sigmoid(y * zv);
                DMatrix::from_element(1, 1, p * (1.0 - p))
            }
            (LikelihoodSpec::MultiClassLogistic { num_classes }, LinearValue::Vector(zv)) => {
                let s = softmax(zv);
                let k = *num_classes;
                let mut h = DMatrix::zeros(k, k);
                for i in 0..k {
                    for j in 0..k {
                        h[(i, j)] = if i == j { s[i] * (1.0 - s[i]) } else { -s[i] * s[j] };
                    }
                }
                h
            }
            _ => unreachable!("validated above"),
        })
    }

    /// All labels the Hessian should be probed against. For families whose
    /// curvature does not depend on the label a single representative is
    /// enough, but binary logistic is probed on both signs.
    fn probe_labels(&self) -> Vec<Label> {
        match self {
            LikelihoodSpec::GaussianRegression { .. } => vec![Label::Real(0.0)],
            LikelihoodSpec::BinaryLogistic => vec![Label::Sign(-1), Label::Sign(1)],
            // The multi-class Hessian diag(s) - s s^T does not depend on y.
            LikelihoodSpec::MultiClassLogistic { .. } => vec![Label::Class(1)],
        }
    }

    /// Largest spectral norm of the finite-difference Hessian of `f_y` over
    /// the given grid of linear values, maximized over admissible labels.
    ///
    /// Central differences with step 1e-4 keep the probe within ~1e-8 of the
    /// true curvature, so the result must not exceed
    /// `smoothness_constant() + 1e-6` on any grid.
    pub fn hessian_norm_probe(&self, z_grid: &[LinearValue]) -> Result<f64> {
        if z_grid.is_empty() {
            return Err(Error::EmptyInput("z_grid"));
        }
        let labels = self.probe_labels();
        let mut worst = 0.0_f64;
        for z in z_grid {
            self.check_linear_dim(z)?;
            for y in &labels {
                let norm = match z {
                    LinearValue::Scalar(z0) => {
                        let f = |t: f64| {
                            self.neg_log_loss(&LinearValue::Scalar(t), y)
                                .expect("validated")
                        };
                        ((f(z0 + FD_STEP) - 2.0 * f(*z0) + f(z0 - FD_STEP))
                            / (FD_STEP * FD_STEP))
                            .abs()
                    }
                    LinearValue::Vector(z0) => {
                        let h = self.fd_hessian_vector(z0, y)?;
                        spectral_norm_symmetric(&h)
                    }
                };
                worst = worst.max(norm);
            }
        }
        Ok(worst)
    }

    fn fd_hessian_vector(&self, z0: &DVector<f64>, y: &Label) -> Result<DMatrix<f64>> {
        let k = z0.len();
        let f = |t: &DVector<f64>| -> f64 {
            self.neg_log_loss(&LinearValue::Vector(t.clone()), y)
                .expect("validated")
        };
        let mut h = DMatrix::zeros(k, k);
        let f0 = f(z0);
        for i in 0..k {
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            zp[i] += FD_STEP;
            zm[i] -= FD_STEP;
            h[(i, i)] = (f(&zp) - 2.0 * f0 + f(&zm)) / (FD_STEP * FD_STEP);
        }
        for i in 0..k {
            for j in (i + 1)..k {
                let mut zpp = z0.clone();
                let mut zpm = z0.clone();
                let mut zmp = z0.clone();
                let mut zmm = z0.clone();
                zpp[i] += FD_STEP;
                zpp[j] += FD_STEP;
                zpm[i] += FD_STEP;
                zpm[j] -= FD_STEP;
                zmp[i] -= FD_STEP;
                zmp[j] += FD_STEP;
                zmm[i] -= FD_STEP;
                zmm[j] -= FD_STEP;
                let v = (f(&zpp) - f(&zpm) - f(&zmp) + f(&zmm)) / (4.0 * FD_STEP * FD_STEP);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        Ok(h)
    }
}

/// Spectral norm (largest absolute eigenvalue) of a symmetric matrix.
fn spectral_norm_symmetric(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &l| acc.max(l.abs()))
}
