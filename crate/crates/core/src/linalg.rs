//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Numerical rank with a relative singular-value cutoff. Empty matrices have rank 0.
pub(crate) fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Minimum-norm least-squares solution of `a x = b`.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let eps = (rel_tol * max).max(f64::MIN_POSITIVE);
    svd.solve(b, eps)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}


#[cfg(test)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
