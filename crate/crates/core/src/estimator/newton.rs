//! Positive root of a polynomial with non-negative coefficients.
//!
//! Each scaling update solves `sum_k b_k * beta^k = a` for `beta > 0`. With
//! `b_k >= 0` and some `b_k > 0` for `k >= 1`, the left side is strictly
//! increasing and convex on `(0, inf)`, so the root is unique. Newton's
//! method started at `beta = 1` is guarded by a bracket; any step leaving the
//! bracket is replaced by bisection (or doubling while no upper bound is
//! known).

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("equation has no positive solution")]
    NoSolution,
    #[error("root not resolved after {steps} steps (best estimate {estimate})")]
    NonConvergence { estimate: f64, steps: usize },
    #[error("target {0} must be positive and finite")]
    InvalidTarget(f64),
}

fn evaluate(coeffs: &[(u32, f64)], beta: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut slope = 0.0;
    for &(k, b) in coeffs {
        if k == 0 {
            value += b;
        } else {
            let p = beta.powi(k as i32 - 1);
            value += b * p * beta;
            slope += k as f64 * b * p;
        }
    }
    (value, slope)
}

/// Solves `sum_k b_k beta^k = target` for `beta > 0` to relative tolerance
/// `tol` on `beta`. `coeffs` holds `(k, b_k)` pairs; repeated exponents add.
pub fn newton_update(
    coeffs: &[(u32, f64)],
    target: f64,
    tol: f64,
    max_steps: usize,
) -> Result<f64, SolveError> {
    if !(target.is_finite() && target > 0.0) {
        return Err(SolveError::InvalidTarget(target));
    }
    if !coeffs.iter().any(|&(k, b)| k >= 1 && b > 0.0) {
        return Err(SolveError::NoSolution);
    }
    let constant: f64 = coeffs.iter().filter(|c| c.0 == 0).map(|c| c.1).sum();
    if constant >= target {
        return Err(SolveError::NoSolution);
    }

    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    let mut beta = 1.0_f64;
    for _ in 0..max_steps {
        let (value, slope) = evaluate(coeffs, beta);
        let residual = value - target;
        if residual == 0.0 {
            return Ok(beta);
        }
        if residual < 0.0 {
            lo = lo.max(beta);
        } else {
            hi = hi.min(beta);
        }
        let mut next = beta - residual / slope;
        if !(next.is_finite() && next > lo && next < hi) {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * beta
            };
        }
        if (next - beta).abs() <= tol * next {
            return Ok(next);
        }
        beta = next;
    }
    Err(SolveError::NonConvergence {
        estimate: beta,
        steps: max_steps,
    })
}
