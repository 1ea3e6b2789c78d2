//! Least squares from accumulated normal equations, with a rank check that
//! names the offending columns.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Scaled residual variance below which a column counts as a linear
/// combination of the columns before it.
const RANK_TOL: f64 = 1e-10;
/// Scaled projection coefficients smaller than this do not name a column.
const COEF_TOL: f64 = 1e-6;

/// Normal equations `Z'Z b = Z'y` accumulated row by row, for several
/// responses at once.
#[derive(Debug, Clone)]
pub(crate) struct NormalEquations {
    pub names: Vec<String>,
    pub gram: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub n_obs: usize,
}

impl NormalEquations {
    pub fn new(names: Vec<String>, responses: usize) -> Self {
        let p = names.len();
        Self {
            names,
            gram: DMatrix::zeros(p, p),
            cross: DMatrix::zeros(p, responses),
            n_obs: 0,
        }
    }

    pub fn add(&mut self, z: &[f64], y: &[f64]) {
        let p = z.len();
        for a in 0..p {
            if z[a] == 0.0 {
                continue;
            }
            for b in a..p {
                self.gram[(a, b)] += z[a] * z[b];
            }
            for (r, yr) in y.iter().enumerate() {
                self.cross[(a, r)] += z[a] * yr;
            }
        }
        self.n_obs += 1;
    }

    fn symmetric_gram(&self) -> DMatrix<f64> {
        let mut g = self.gram.clone();
        for a in 0..g.nrows() {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        g
    }

    /// Coefficients (`p x responses`) and `(Z'Z)^{-1}`.
    pub fn solve(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let g = self.symmetric_gram();
        check_rank(&g, &self.names)?;
        let d = DVector::from_iterator(g.nrows(), g.diagonal().iter().map(|v| 1.0 / v.sqrt()));
        let scaled = DMatrix::from_fn(g.nrows(), g.ncols(), |a, b| g[(a, b)] * d[a] * d[b]);
        let chol = nalgebra::Cholesky::new(scaled).ok_or_else(|| Error::CollinearRegressors {
            columns: self.names.clone(),
        })?;
        let inv_scaled = chol.inverse();
        let inv = DMatrix::from_fn(g.nrows(), g.ncols(), |a, b| {
            inv_scaled[(a, b)] * d[a] * d[b]
        });
        let coef = &inv * &self.cross;
        Ok((coef, inv))
    }
}

/// Fails with the names of a collinear set if the Gram matrix is singular.
/// Columns are scanned in order; the first column that is (numerically) a
/// combination of earlier ones is reported with the columns it depends on.
pub(crate) fn check_rank(gram: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let p = gram.nrows();
    for j in 0..p {
        if !(gram[(j, j)] > 0.0) {
            return Err(Error::CollinearRegressors {
                columns: vec![names[j].clone()],
            });
        }
    }
    let d: Vec<f64> = (0..p).map(|j| 1.0 / gram[(j, j)].sqrt()).collect();
    let s = |a: usize, b: usize| gram[(a, b)] * d[a] * d[b];
    let mut independent: Vec<usize> = Vec::with_capacity(p);
    for j in 0..p {
        if !independent.is_empty() {
            let m = independent.len();
            let sub = DMatrix::from_fn(m, m, |a, b| s(independent[a], independent[b]));
            let rhs = DVector::from_fn(m, |a, _| s(independent[a], j));
            if let Some(chol) = nalgebra::Cholesky::new(sub) {
                let c = chol.solve(&rhs);
                let resid = s(j, j) - rhs.dot(&c);
                if resid < RANK_TOL {
                    let mut columns: Vec<String> = independent
                        .iter()
                        .zip(c.iter())
                        .filter(|(_, cj)| cj.abs() > COEF_TOL)
                        .map(|(i, _)| names[*i].clone())
                        .collect();
                    columns.push(names[j].clone());
                    return Err(Error::CollinearRegressors { columns });
                }
            }
        }
        independent.push(j);
    }
    Ok(())
}
