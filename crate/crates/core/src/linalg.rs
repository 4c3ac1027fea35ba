//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition number above which a linear system is reported as nearly
/// singular.
pub const NEAR_SINGULAR_CONDITION: f64 = 1e12;

/// Condition number above which least-squares problems are solved by an
/// orthogonal factorization instead of the normal equations.
pub const QR_FALLBACK_CONDITION: f64 = 1e8;

pub fn norm_1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn sup_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// `sqrt(sum_i xi_i v_i^2)`.
pub fn weighted_norm(v: &DVector<f64>, xi: &DVector<f64>) -> f64 {
    v.iter().zip(xi.iter()).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
}

/// Inverse of a square matrix with its 1-norm condition number.
///
/// The condition number is computed exactly from the inverse obtained via
/// the LU factors, which is affordable at the sizes used here.
pub fn inverse_with_condition(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let lu = a.clone().lu();
    let inv = lu.try_inverse().ok_or(Error::Singular)?;
    if inv.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular);
    }
    let cond = (norm_1(a) * norm_1(&inv)).max(1.0);
    Ok((inv, cond))
}

/// 1-norm condition number; infinite for singular input.
pub fn condition_1(a: &DMatrix<f64>) -> f64 {
    inverse_with_condition(a).map(|(_, c)| c).unwrap_or(f64::INFINITY)
}

/// LU solve of `a x = b`, refusing systems whose condition exceeds
/// [`NEAR_SINGULAR_CONDITION`]. Returns the solution and the condition.
pub fn solve_checked(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let cond = condition_1(a);
    if !cond.is_finite() {
        return Err(Error::Singular);
    }
    if cond > NEAR_SINGULAR_CONDITION {
        return Err(Error::NearSingular { condition: cond });
    }
    let x = a.clone().lu().solve(b).ok_or(Error::Singular)?;
    Ok((x, cond))
}

/// Plain LU solve for systems known to be well posed (e.g. `I - c P` with
/// `c < 1` and `P` stochastic).
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone().lu().solve(b).ok_or(Error::Singular)
}

/// Solves the symmetric positive (semi)definite system `m x = b` by
/// Cholesky, failing if `m` is not positive definite.
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    m.clone().cholesky().map(|c| c.solve(b)).ok_or(Error::Singular)
}

/// Least squares from a Gram matrix `m = A'A` and moment `b = A'y`.
///
/// The normal equations are used when `cond(m) <= QR_FALLBACK_CONDITION`;
/// otherwise `design` is called to produce `(A, y)` for a QR solve.
pub fn least_squares<F>(m: &DMatrix<f64>, b: &DVector<f64>, design: F) -> Result<(DVector<f64>, f64)>
where
    F: FnOnce() -> (DMatrix<f64>, DVector<f64>),
{
    let cond = condition_1(m);
    if !cond.is_finite() {
        return Err(Error::Singular);
    }
    if cond <= QR_FALLBACK_CONDITION {
        let x = solve_spd(m, b).or_else(|_| solve(m, b))?;
        return Ok((x, cond));
    }
    let (a, y) = design();
    let qr = a.qr();
    let qty = qr.q().transpose() * y;
    let x = qr.r().solve_upper_triangular(&qty).ok_or(Error::Singular)?;
    Ok((x, cond))
}

pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    a.clone().svd(false, false).singular_values
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).max()
}

/// Ratio of the smallest to the largest singular value (0 for a zero matrix).
pub fn singular_value_ratio(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

/// Relative Frobenius distance `|a - b| / |b|`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
