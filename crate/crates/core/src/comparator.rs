//! Offline comparators the online learner's cumulative loss is measured
//! against: the (optionally norm-constrained) empirical risk minimizer and
//! the best estimator supported on at most `m` coordinates.
//!
//! Minimization is damped Newton with Armijo backtracking, projected onto
//! the norm ball when a radius is given. Sparse comparators enumerate
//! candidate supports in lexicographic order and solve the restricted
//! problem on each.

use nalgebra::{DMatrix, DVector};

use crate::data::{embedded_feature, infer_layout, linear_value, loss_of_theta, Layout};
use crate::error::{require_positive, Error, Result};
use crate::likelihoods::{Example, LikelihoodSpec, LinearValue};
use crate::math::spd_cholesky;
use crate::online::{OnlineRunResult, MAX_ENUMERATION_DIM};

/// Radius of the fallback norm ball used when unconstrained minimization
/// runs away (separable data).
pub const DEFAULT_NORM_CAP: f64 = 100.0;
/// Parameter norm beyond which the unconstrained minimizer is declared
/// divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

const GRADIENT_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 500;

/// Feasible set the comparator was optimized over.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// Euclidean ball of the given radius around the origin.
    NormBall { radius: f64 },
    /// Coordinates allowed to be nonzero.
    Support { coords: Vec<usize> },
}

/// How the optimizer finished.
#[derive(Debug, Clone)]
pub struct OptimizerDiagnostics {
    pub iterations: usize,
    /// Final Euclidean norm of the (restricted) gradient.
    pub gradient_norm: f64,
    /// Final first-order residual when the norm constraint was active at
    /// the solution: tangential gradient norm plus any outward radial part.
    pub kkt_residual: Option<f64>,
    pub converged: bool,
    /// True when the unconstrained problem ran away and the reported
    /// solution comes from the fallback norm ball.
    pub divergence_guard: bool,
}

/// A fitted offline comparator.
#[derive(Debug, Clone)]
pub struct ComparatorResult {
    pub theta_hat: DVector<f64>,
    /// Cumulative loss of `theta_hat` on the data.
    pub loss: f64,
    pub constraint: Option<Constraint>,
    pub diagnostics: OptimizerDiagnostics,
}

/// Loss, gradient and Hessian of the cumulative loss at `theta`.
fn loss_grad_hess(
    likelihood: &LikelihoodSpec,
    layout: &Layout,
    theta: &DVector<f64>,
    data: &[Example],
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let total_dim = layout.total_dim();
    let mut loss = 0.0;
    let mut grad: DVector<f64> = DVector::zeros(total_dim);
    let mut hess: DMatrix<f64> = DMatrix::zeros(total_dim, total_dim);
    for example in data {
        let z = linear_value(likelihood, layout, theta, example)?;
        loss += likelihood.neg_log_loss(&z, example.label())?;
        let g = likelihood.neg_log_loss_grad(&z, example.label())?;
        let h = likelihood.neg_log_loss_hessian(&z, example.label())?;
        match g {
            LinearValue::Vector(gv) => {
                let n = layout.block_dim;
                let k = gv.len();
                let x = example.features();
                for a in 0..k {
                    for i in 0..n {
                        grad[a * n + i] += gv[a] * x[i];
                    }
                }
                for a in 0..k {
                    for b in 0..k {
                        let hab = h[(a, b)];
                        if hab == 0.0 {
                            continue;
                        }
                        for i in 0..n {
                            for j in 0..n {
                                hess[(a * n + i, b * n + j)] += hab * x[i] * x[j];
                            }
                        }
                    }
                }
            }
            LinearValue::Scalar(gs) => {
                let x = embedded_feature(layout, example)?;
                let hs = h[(0, 0)];
                grad.axpy(gs, &x, 1.0);
                hess.syger(hs, &x, &x, 1.0);
            }
        }
    }
    Ok((loss, grad, hess))
}

fn scatter(support: Option<&[usize]>, reduced: &DVector<f64>, total_dim: usize) -> DVector<f64> {
    match support {
        None => reduced.clone(),
        Some(coords) => {
            let mut full = DVector::zeros(total_dim);
            for (local, &global) in coords.iter().enumerate() {
                full[global] = reduced[local];
            }
            full
        }
    }
}

fn restrict_vector(support: Option<&[usize]>, full: &DVector<f64>) -> DVector<f64> {
    match support {
        None => full.clone(),
        Some(coords) => DVector::from_fn(coords.len(), |i, _| full[coords[i]]),
    }
}

fn restrict_matrix(support: Option<&[usize]>, full: &DMatrix<f64>) -> DMatrix<f64> {
    match support {
        None => full.clone(),
        Some(coords) => {
            DMatrix::from_fn(coords.len(), coords.len(), |i, j| full[(coords[i], coords[j])])
        }
    }
}

enum MinimizeOutcome {
    Done {
        theta: DVector<f64>,
        loss: f64,
        diagnostics: OptimizerDiagnostics,
    },
    Diverged,
}

/// First-order stationarity measure: the gradient norm in the interior,
/// the KKT residual on the ball boundary.
fn stationarity(
    grad: &DVector<f64>,
    theta: &DVector<f64>,
    radius: Option<f64>,
) -> (f64, Option<f64>) {
    if let Some(r) = radius {
        let norm = theta.norm();
        if norm >= r * (1.0 - 1e-9) && norm > 0.0 {
            let unit = theta / norm;
            let radial = grad.dot(&unit);
            let residual = (grad - &unit * radial).norm() + radial.max(0.0);
            return (residual, Some(residual));
        }
    }
    (grad.norm(), None)
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let max_diag = hess.diagonal().iter().fold(0.0f64, |a, d| a.max(d.abs()));
    let mut jitter = 0.0;
    loop {
        let mut system = hess.clone();
        if jitter > 0.0 {
            for i in 0..system.nrows() {
                system[(i, i)] += jitter;
            }
        }
        if let Ok(chol) = spd_cholesky(&system, "newton system") {
            return chol.solve(&(-grad));
        }
        jitter = if jitter == 0.0 {
            1e-12 * (1.0 + max_diag)
        } else {
            jitter * 100.0
        };
        if jitter > 1e6 * (1.0 + max_diag) {
            // Hopeless curvature: fall back to steepest descent.
            return -grad;
        }
    }
}

fn minimize(
    likelihood: &LikelihoodSpec,
    layout: &Layout,
    data: &[Example],
    support: Option<&[usize]>,
    radius: Option<f64>,
    guard_norm: f64,
) -> Result<MinimizeOutcome> {
    let total_dim = layout.total_dim();
    let reduced_dim = support.map_or(total_dim, <[usize]>::len);
    let mut theta: DVector<f64> = DVector::zeros(reduced_dim);
    let mut iterations = 0;

    let evaluate = |theta_reduced: &DVector<f64>| -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let full = scatter(support, theta_reduced, total_dim);
        let (loss, grad_full, hess_full) = loss_grad_hess(likelihood, layout, &full, data)?;
        Ok((
            loss,
            restrict_vector(support, &grad_full),
            restrict_matrix(support, &hess_full),
        ))
    };

    let (mut loss, mut grad, mut hess) = evaluate(&theta)?;
    let mut converged = false;
    loop {
        let (residual, _) = stationarity(&grad, &theta, radius);
        if residual <= GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        if iterations >= MAX_ITERATIONS {
            break;
        }
        iterations += 1;
        let direction = newton_direction(&hess, &grad);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut candidate = &theta + &direction * step;
            if let Some(r) = radius {
                let norm = candidate.norm();
                if norm > r {
                    candidate *= r / norm;
                }
            }
            let predicted = grad.dot(&(&candidate - &theta));
            let candidate_loss =
                loss_of_theta(likelihood, layout, &scatter(support, &candidate, total_dim), data)?;
            if candidate_loss <= loss + 1e-4 * predicted {
                theta = candidate;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent left at line-search resolution.
            break;
        }
        if radius.is_none() && theta.norm() > guard_norm {
            return Ok(MinimizeOutcome::Diverged);
        }
        let refreshed = evaluate(&theta)?;
        loss = refreshed.0;
        grad = refreshed.1;
        hess = refreshed.2;
    }

    let (residual, kkt) = stationarity(&grad, &theta, radius);
    let converged = converged || residual <= GRADIENT_TOLERANCE;
    Ok(MinimizeOutcome::Done {
        theta: scatter(support, &theta, total_dim),
        loss,
        diagnostics: OptimizerDiagnostics {
            iterations,
            gradient_norm: grad.norm(),
            kkt_residual: kkt,
            converged,
            divergence_guard: false,
        },
    })
}

fn erm_with_guard(
    likelihood: &LikelihoodSpec,
    data: &[Example],
    radius: Option<f64>,
    guard_norm: f64,
) -> Result<ComparatorResult> {
    if let Some(r) = radius {
        require_positive("radius", r)?;
    }
    let layout = infer_layout(likelihood, data, None)?;
    match minimize(likelihood, &layout, data, None, radius, guard_norm)? {
        MinimizeOutcome::Done {
            theta,
            loss,
            diagnostics,
        } => Ok(ComparatorResult {
            theta_hat: theta,
            loss,
            constraint: radius.map(|r| Constraint::NormBall { radius: r }),
            diagnostics,
        }),
        MinimizeOutcome::Diverged => {
            let outcome = minimize(
                likelihood,
                &layout,
                data,
                None,
                Some(DEFAULT_NORM_CAP),
                f64::INFINITY,
            )?;
            match outcome {
                MinimizeOutcome::Done {
                    theta,
                    loss,
                    mut diagnostics,
                } => {
                    diagnostics.divergence_guard = true;
                    Ok(ComparatorResult {
                        theta_hat: theta,
                        loss,
                        constraint: Some(Constraint::NormBall {
                            radius: DEFAULT_NORM_CAP,
                        }),
                        diagnostics,
                    })
                }
                MinimizeOutcome::Diverged => {
                    unreachable!("constrained minimization cannot diverge")
                }
            }
        }
    }
}

/// Empirical risk minimizer over all of parameter space, or over the
/// Euclidean ball of the given radius. Data that admits no finite
/// unconstrained minimizer is refit on a ball of radius
/// [`DEFAULT_NORM_CAP`] and flagged via `divergence_guard`.
pub fn erm(
    likelihood: &LikelihoodSpec,
    data: &[Example],
    radius: Option<f64>,
) -> Result<ComparatorResult> {
    erm_with_guard(likelihood, data, radius, DIVERGENCE_NORM)
}

/// All coordinate subsets of `{0..dim-1}` with at most `max_size` elements,
/// in lexicographic order of their sorted coordinate lists.
fn supports_up_to(dim: usize, max_size: usize) -> Vec<Vec<usize>> {
    fn visit(start: usize, dim: usize, max_size: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(prefix.clone());
        if prefix.len() == max_size {
            return;
        }
        for next in start..dim {
            prefix.push(next);
            visit(next + 1, dim, max_size, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    visit(0, dim, max_size, &mut Vec::new(), &mut out);
    out
}

/// Best estimator supported on at most `max_support` coordinates: each
/// candidate support (in lexicographic order) is solved to stationarity
/// and the strictly best loss wins, so ties keep the earliest support.
pub fn sparse_comparator(
    likelihood: &LikelihoodSpec,
    data: &[Example],
    max_support: usize,
) -> Result<ComparatorResult> {
    let layout = infer_layout(likelihood, data, None)?;
    let total_dim = layout.total_dim();
    if total_dim > MAX_ENUMERATION_DIM {
        return Err(Error::EnumerationTooLarge {
            dim: total_dim,
            max: MAX_ENUMERATION_DIM,
        });
    }
    let mut best: Option<ComparatorResult> = None;
    for coords in supports_up_to(total_dim, max_support.min(total_dim)) {
        let outcome = minimize(
            likelihood,
            &layout,
            data,
            Some(&coords),
            None,
            DIVERGENCE_NORM,
        )?;
        let candidate = match outcome {
            MinimizeOutcome::Done {
                theta,
                loss,
                diagnostics,
            } => ComparatorResult {
                theta_hat: theta,
                loss,
                constraint: Some(Constraint::Support {
                    coords: coords.clone(),
                }),
                diagnostics,
            },
            MinimizeOutcome::Diverged => {
                let capped = minimize(
                    likelihood,
                    &layout,
                    data,
                    Some(&coords),
                    Some(DEFAULT_NORM_CAP),
                    f64::INFINITY,
                )?;
                match capped {
                    MinimizeOutcome::Done {
                        theta,
                        loss,
                        mut diagnostics,
                    } => {
                        diagnostics.divergence_guard = true;
                        ComparatorResult {
                            theta_hat: theta,
                            loss,
                            constraint: Some(Constraint::Support { coords: coords.clone() }),
                            diagnostics,
                        }
                    }
                    MinimizeOutcome::Diverged => {
                        unreachable!("constrained minimization cannot diverge")
                    }
                }
            }
        };
        let improves = best.as_ref().map_or(true, |b| candidate.loss < b.loss);
        if improves {
            best = Some(candidate);
        }
    }
    best.ok_or(Error::EmptyInput("candidate supports"))
}

/// The online learner's cumulative loss minus the comparator's.
pub fn measured_regret(run: &OnlineRunResult, comparator: &ComparatorResult) -> f64 {
    run.cumulative_loss - comparator.loss
}
