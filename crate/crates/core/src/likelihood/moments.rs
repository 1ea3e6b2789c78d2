//! Sufficient-statistic form of the integrated likelihood.
//!
//! Within a cohort every unit shares the marginal covariance, and the
//! residual `Y_i - mean_i` is linear in the stacked data vector
//! `w_i = [Y_1..Y_T, r(I0), X_1..X_T]`: `resid_i = R(theta, H) w_i`. Hence
//! `sum_i resid_i' V^{-1} resid_i = tr(V^{-1} R G R')` with `G = sum_i w_i w_i'`
//! precomputed once. One evaluation costs O(cohorts * T * d^2), independent
//! of the number of units.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, log_det_from_cholesky, LN_2PI};
use crate::model::{
    Adoption, CohortCoding, EventDesign, HeterogeneityModel, PanelData, StructuralLoadings,
    StructuralParams,
};

#[derive(Debug, Clone)]
struct CohortBlock {
    t0: Adoption,
    n: usize,
    gram: DMatrix<f64>,
}

/// Outcome-block log likelihood of a fixed panel, evaluated from moments.
#[derive(Debug, Clone)]
pub struct OutcomeObjective {
    design: EventDesign,
    cohorts: CohortCoding,
    n_regressors: usize,
    n_units: usize,
    blocks: Vec<CohortBlock>,
}

impl OutcomeObjective {
    pub fn new(panel: &PanelData, design: &EventDesign, cohorts: &CohortCoding) -> Result<Self> {
        panel.check_design(design)?;
        let (t_len, k) = (design.periods, design.covariates);
        let p = HeterogeneityModel::n_regressors(k, cohorts);
        let d = t_len + p + t_len * k;
        let probe = HeterogeneityModel {
            mean_coef: DMatrix::zeros(2, p),
            cov: nalgebra::Matrix2::zeros(),
            cohorts: cohorts.clone(),
        };
        let mut levels: Vec<Adoption> = panel.units.iter().map(|u| u.t0).collect();
        levels.sort();
        levels.dedup();
        let mut blocks: Vec<CohortBlock> = levels
            .iter()
            .map(|&t0| CohortBlock {
                t0,
                n: 0,
                gram: DMatrix::zeros(d, d),
            })
            .collect();
        let mut w = vec![0.0; d];
        for unit in &panel.units {
            let b = levels
                .binary_search(&unit.t0)
                .expect("level collected above");
            w[..t_len].copy_from_slice(&unit.y);
            probe.fill_regressors(unit.y0, &unit.x0, unit.t0, &mut w[t_len..t_len + p]);
            w[t_len + p..].copy_from_slice(&unit.x);
            let block = &mut blocks[b];
            block.n += 1;
            // upper triangle only; mirrored below
            for a in 0..d {
                let wa = w[a];
                if wa == 0.0 {
                    continue;
                }
                for c in a..d {
                    block.gram[(a, c)] += wa * w[c];
                }
            }
        }
        for block in &mut blocks {
            for a in 0..d {
                for c in 0..a {
                    block.gram[(a, c)] = block.gram[(c, a)];
                }
            }
        }
        Ok(Self {
            design: *design,
            cohorts: cohorts.clone(),
            n_regressors: p,
            n_units: panel.n_units(),
            blocks,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn design(&self) -> &EventDesign {
        &self.design
    }

    pub fn cohorts(&self) -> &CohortCoding {
        &self.cohorts
    }

    /// Total log likelihood of the outcome block.
    pub fn loglik(&self, theta: &StructuralParams, het: &HeterogeneityModel) -> Result<f64> {
        if theta.sigma2_u <= 0.0 {
            return Err(Error::invalid(
                "sigma2_u",
                "must be positive for the likelihood",
            ));
        }
        if het.cohorts != self.cohorts || het.mean_coef.ncols() != self.n_regressors {
            return Err(Error::invalid(
                "heterogeneity",
                "cohort coding differs from the objective's",
            ));
        }
        let (t_len, k, p) = (
            self.design.periods,
            self.design.covariates,
            self.n_regressors,
        );
        let d = t_len + p + t_len * k;
        let sigma_lambda = DMatrix::from_column_slice(2, 2, het.cov.as_slice());

        // Parts of R shared by all cohorts: the Y identity, the Y0 and
        // time-effect propagation and the covariate block.
        let mut shared = DMatrix::zeros(t_len, d);
        let mut gamma_acc = 0.0;
        let mut rho_pow = 1.0;
        for t in 0..t_len {
            gamma_acc = theta.rho_y * gamma_acc + theta.gamma[t];
            rho_pow *= theta.rho_y;
            shared[(t, t)] = 1.0;
            shared[(t, t_len)] = -gamma_acc;
            shared[(t, t_len + 1)] = -rho_pow;
        }
        let l_u = StructuralLoadings::new(theta.rho_y, 0.0, Adoption::Never, &self.design).l_u;
        for t in 0..t_len {
            for s in 0..=t {
                for (kk, b) in theta.beta.iter().enumerate() {
                    shared[(t, t_len + p + s * k + kk)] = -l_u[(t, s)] * b;
                }
            }
        }

        let mut total = 0.0;
        for block in &self.blocks {
            let s = StructuralLoadings::new(theta.rho_y, theta.rho_delta, block.t0, &self.design);
            let l_lambda = s.l_lambda();
            let cov = &l_lambda * &sigma_lambda * l_lambda.transpose()
                + &s.l_eps * s.l_eps.transpose() * theta.sigma2_eps
                + &s.l_u * s.l_u.transpose() * theta.sigma2_u;
            let (chol, _) = cholesky_jittered(&cov)?;
            let lm = &l_lambda * &het.mean_coef;
            let mut r = shared.clone();
            for t in 0..t_len {
                for c in 0..p {
                    r[(t, t_len + c)] -= lm[(t, c)];
                }
            }
            let q = chol
                .l_dirty()
                .solve_lower_triangular(&r)
                .expect("Cholesky factor has a positive diagonal");
            let qg = &q * &block.gram;
            let quad = qg.component_mul(&q).sum();
            total += -0.5
                * (block.n as f64 * (t_len as f64 * LN_2PI + log_det_from_cholesky(&chol)) + quad);
        }
        Ok(total)
    }
}
