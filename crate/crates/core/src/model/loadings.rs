//! Stacked solution of the outcome recursion.
//!
//! Substituting the effect path into the outcome equation and unrolling in
//! calendar time gives, for every realization of the latents,
//! `Y = b + L_alpha alpha + L_delta0 delta0 + L_eps eps + L_U U`.

use nalgebra::{DMatrix, DVector};

use super::{Adoption, EventDesign, StructuralParams};
use crate::error::{Error, Result};

/// Loadings that depend only on `(rho_y, rho_delta, t0)`, shared by every
/// unit of a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralLoadings {
    pub l_alpha: DVector<f64>,
    pub l_delta0: DVector<f64>,
    /// `T x J_max`; column `k - 1` loads `eps_k`.
    pub l_eps: DMatrix<f64>,
    /// Lower triangular, `L_U[t][s] = rho_y^(t-s)`.
    pub l_u: DMatrix<f64>,
}

impl StructuralLoadings {
    pub fn new(rho_y: f64, rho_delta: f64, t0: Adoption, design: &EventDesign) -> Self {
        let t_len = design.periods;
        let j_max = design.max_event_time;
        let mut l_alpha = DVector::zeros(t_len);
        let mut l_delta0 = DVector::zeros(t_len);
        let mut l_eps = DMatrix::zeros(t_len, j_max);
        let mut l_u = DMatrix::zeros(t_len, t_len);

        // Loading of each latent on the period's own shock, before propagation.
        let mut eps_own = vec![0.0; j_max];
        for t in 0..t_len {
            let (a_prev, d_prev) = if t == 0 {
                (0.0, 0.0)
            } else {
                (l_alpha[t - 1], l_delta0[t - 1])
            };
            let mut d_own = 0.0;
            eps_own.iter_mut().for_each(|v| *v = 0.0);
            if let Some(j) = t0.active_effect(t + 1, j_max) {
                d_own = rho_delta.powi(j as i32);
                for k in 1..=j {
                    eps_own[k - 1] = rho_delta.powi((j - k) as i32);
                }
            }
            l_alpha[t] = rho_y * a_prev + 1.0;
            l_delta0[t] = rho_y * d_prev + d_own;
            for k in 0..j_max {
                let prev = if t == 0 { 0.0 } else { l_eps[(t - 1, k)] };
                l_eps[(t, k)] = rho_y * prev + eps_own[k];
            }
            for s in 0..t {
                l_u[(t, s)] = rho_y * l_u[(t - 1, s)];
            }
            l_u[(t, t)] = 1.0;
        }
        Self {
            l_alpha,
            l_delta0,
            l_eps,
            l_u,
        }
    }

    /// `[L_alpha | L_delta0]`, `T x 2`.
    pub fn l_lambda(&self) -> DMatrix<f64> {
        let t_len = self.l_alpha.len();
        let mut m = DMatrix::zeros(t_len, 2);
        m.set_column(0, &self.l_alpha);
        m.set_column(1, &self.l_delta0);
        m
    }
}

/// Deterministic part of the unrolled outcome:
/// `b_t = rho^t Y0 + sum_{s<=t} rho^(t-s) (X_s' beta + gamma_s)`.
pub fn mean_offset(theta: &StructuralParams, y0: f64, x: &[f64]) -> DVector<f64> {
    let t_len = theta.gamma.len();
    let k = theta.beta.len();
    let mut b = DVector::zeros(t_len);
    let mut prev = y0;
    for t in 0..t_len {
        let xb: f64 = x[t * k..(t + 1) * k]
            .iter()
            .zip(&theta.beta)
            .map(|(a, b)| a * b)
            .sum();
        prev = theta.rho_y * prev + xb + theta.gamma[t];
        b[t] = prev;
    }
    b
}

/// Full stacked solution for one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitLoadings {
    pub b: DVector<f64>,
    pub l_alpha: DVector<f64>,
    pub l_delta0: DVector<f64>,
    pub l_eps: DMatrix<f64>,
    pub l_u: DMatrix<f64>,
}

impl UnitLoadings {
    /// `b + L_alpha alpha + L_delta0 delta0 + L_eps eps + L_U U`.
    pub fn reconstruct(&self, alpha: f64, delta0: f64, eps: &[f64], u: &[f64]) -> DVector<f64> {
        let eps = DVector::from_column_slice(eps);
        let u = DVector::from_column_slice(u);
        &self.b
            + &self.l_alpha * alpha
            + &self.l_delta0 * delta0
            + &self.l_eps * eps
            + &self.l_u * u
    }
}

/// Loadings for a unit with initial outcome `y0`, adoption `t0` and covariate
/// path `x` (row-major `T x K`).
pub fn build_loadings(
    theta: &StructuralParams,
    design: &EventDesign,
    y0: f64,
    t0: Adoption,
    x: &[f64],
) -> Result<UnitLoadings> {
    theta.validate(design)?;
    design.validate_adoption(t0)?;
    if x.len() != design.periods * design.covariates {
        return Err(Error::dim(
            "covariate path",
            design.periods * design.covariates,
            x.len(),
        ));
    }
    let s = StructuralLoadings::new(theta.rho_y, theta.rho_delta, t0, design);
    Ok(UnitLoadings {
        b: mean_offset(theta, y0, x),
        l_alpha: s.l_alpha,
        l_delta0: s.l_delta0,
        l_eps: s.l_eps,
        l_u: s.l_u,
    })
}
