//! Small dense helpers shared by the likelihood, simulator and estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Jitter ladder tried after a plain factorization fails.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

pub(crate) const MAX_JITTER: f64 = 1e-6;

/// Cholesky factorization with adaptive diagonal jitter.
///
/// Tries the matrix as is, then adds `jitter * mean(diag)` for each rung of
/// the ladder. Returns the factor and the jitter that was used.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular {
            max_jitter: MAX_JITTER,
        });
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let n = m.nrows();
    let scale = (m.diagonal().sum() / n as f64).abs().max(1.0);
    for &j in JITTER_LADDER.iter() {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += j * scale;
        }
        if let Some(c) = Cholesky::new(a) {
            return Ok((c, j));
        }
    }
    Err(Error::Singular {
        max_jitter: MAX_JITTER,
    })
}

pub fn log_det_from_cholesky(c: &Cholesky<f64, Dyn>) -> f64 {
    c.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// Symmetric factor `F` with `F F' = m` for a positive semi-definite `m`.
///
/// Uses the Cholesky factor when it exists so draws are cheap, and falls back
/// to an eigen square root otherwise (zero or rank-deficient covariances).
pub fn psd_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::dim(format!("{what} (square)"), n, m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(what, "non-finite entry"));
    }
    let asym = (m - m.transpose()).amax();
    let scale = m.amax().max(1.0);
    if asym > 1e-10 * scale {
        return Err(Error::invalid(what, "matrix is not symmetric"));
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c.unpack());
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::NotPositiveSemiDefinite { what: what.into() });
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Log density of `N(mean, cov)` at `x`, with `cov` already factorized.
pub fn gaussian_logpdf_chol(x: &DVector<f64>, mean: &DVector<f64>, c: &Cholesky<f64, Dyn>) -> f64 {
    let r = x - mean;
    let z = c
        .l_dirty()
        .solve_lower_triangular(&r)
        .expect("Cholesky factor has a positive diagonal");
    -0.5 * (r.len() as f64 * LN_2PI + log_det_from_cholesky(c) + z.norm_squared())
}

/// Sum in a fixed pairwise order so totals do not depend on scheduling.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Moore-Penrose inverse of a symmetric matrix via eigen decomposition.
/// Eigenvalues below `rtol * max|eig|` are treated as zero.
pub fn symmetric_pinv(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let cutoff = eig.eigenvalues.amax() * rtol;
    let inv = eig
        .eigenvalues
        .map(|v| if v.abs() > cutoff { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}
