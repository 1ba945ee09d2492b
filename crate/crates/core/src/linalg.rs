//! Small dense solves for detector weights.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative singular-value cutoff below which a matrix is treated as singular.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Solves `A X = B` for symmetric positive (semi)definite `A`.
///
/// Uses a Cholesky factorisation; if that fails the system is solved through
/// the SVD pseudo-inverse, unless `A` is numerically rank deficient, which is
/// an error.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "{context}: cannot solve {}x{} system against {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("{context}: non-finite input")));
    }
    if let Some(chol) = a.clone().cholesky() {
        // a tiny pivot means the factorisation only succeeded by rounding
        let diag_max = a.diagonal().max();
        let pivot_min = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |m, &x| m.min(x * x));
        let x = chol.solve(b);
        if pivot_min > RANK_CUTOFF * diag_max && x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_CUTOFF * max)
        .count();
    if max == 0.0 || rank < a.nrows() {
        return Err(Error::RankDeficient {
            rank,
            expected: a.nrows(),
            context: context.to_string(),
        });
    }
    svd.solve(b, RANK_CUTOFF * max)
        .map_err(|e| Error::Numerical(format!("{context}: {e}")))
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// `max |a - b| / max |b|`, or the absolute deviation when `b` is zero.
pub fn relative_deviation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = max_abs(b);
    let dev = max_abs(&(a - b));
    if scale == 0.0 {
        dev
    } else {
        dev / scale
    }
}
