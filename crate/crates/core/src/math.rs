//! Small numerical utilities shared across modules: stable log-domain
//! primitives, a guarded SPD Cholesky, adaptive quadrature, and a splittable
//! seed hash for reproducible replicate streams.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// `ln(1 + exp(x))`, stable for large |x|.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-x))`, stable for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sum_i exp(v_i))` with max-shift stabilization.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // All -inf (empty or degenerate): the sum is 0, its log -inf.
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Softmax of `z`, written into a fresh vector; stable via max subtraction.
pub fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = z.map(|v| (v - m).exp());
    let s = out.sum();
    out /= s;
    out
}

/// `ln C(n, k)` via log-gamma.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
        - statrs::function::gamma::ln_gamma(k as f64 + 1.0)
        - statrs::function::gamma::ln_gamma((n - k) as f64 + 1.0)
}

/// Natural log of the descending factorial `y * (y-1) * ... * (y-m+1)`
/// (m factors). Requires every factor to be positive.
pub fn ln_descending_factorial(y: f64, m: usize) -> Result<f64> {
    let mut acc = 0.0;
    for i in 0..m {
        let factor = y - i as f64;
        if factor <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "descending factorial",
                reason: "factor must stay positive",
                value: factor,
            });
        }
        acc += factor.ln();
    }
    Ok(acc)
}

/// Sample mean and standard error of the mean.
///
/// Returns `(mean, se)`; the SE uses the unbiased sample variance and is 0
/// for fewer than two observations.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Relative pivot floor for the SPD Cholesky guard.
const SPD_PIVOT_FLOOR: f64 = 1e-12;

/// Cholesky factorization that rejects matrices that are not numerically
/// symmetric positive definite: the factorization must succeed and the
/// smallest squared pivot must exceed `1e-12` times the largest.
pub fn spd_cholesky(matrix: &DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::dim(matrix.nrows(), matrix.ncols(), "square matrix"));
    }
    let chol = matrix
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite(context))?;
    let l = chol.l_dirty();
    let mut min_piv = f64::INFINITY;
    let mut max_piv = 0.0_f64;
    for i in 0..l.nrows() {
        let p = l[(i, i)] * l[(i, i)];
        min_piv = min_piv.min(p);
        max_piv = max_piv.max(p);
    }
    if !(min_piv > SPD_PIVOT_FLOOR * max_piv) {
        return Err(Error::NotPositiveDefinite(context));
    }
    Ok(chol)
}

/// Log-determinant of an SPD matrix from its Cholesky factor.
pub fn ln_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Quadratic form `v^T M^{-1} v` via a Cholesky solve.
pub fn inv_quadratic_form(chol: &Cholesky<f64, Dyn>, v: &DVector<f64>) -> f64 {
    let solved = chol.solve(v);
    v.dot(&solved)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson_panel(a, b, fa, fm, fb);
    simpson_recurse(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn simpson_panel(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_panel(a, m, fa, flm, fm);
    let right = simpson_panel(m, b, fm, frm, fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        left + right + err / 15.0
    } else {
        simpson_recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + simpson_recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// SplitMix64 finalizer: a fixed, documented 64-bit mix used to derive
/// independent replicate seeds as `split_seed(master, index)`.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for replicate `index` from a master seed.
///
/// The derivation is a fixed hash (SplitMix64 over `master + index + 1`), so
/// replicate streams are independent of worker scheduling and stable across
/// platforms.
#[inline]
pub fn split_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(1)))
}
