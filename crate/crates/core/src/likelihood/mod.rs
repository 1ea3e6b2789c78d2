//! Integrated Gaussian likelihood of the outcome block.
//!
//! Conditional on the covariate path and initial conditions the outcome
//! vector is Gaussian once `lambda` is integrated against its correlated
//! random-effects law:
//!
//! ```text
//! Y | X, I0 ~ N(b + L_lambda mu(I0),
//!               L_lambda Sigma_lambda L_lambda' + s2_eps L_eps L_eps' + s2_u L_U L_U')
//! ```
//!
//! The covariate factor is free of `lambda` and of these parameters, so it is
//! left out and reported separately by the feedback estimator.

mod demean;
mod moments;

pub use demean::{demean_panel, CrossSectionMeans, DemeanedPanel};
pub use moments::OutcomeObjective;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, gaussian_logpdf_chol, pairwise_sum};
use crate::model::{
    build_loadings, EventDesign, HeterogeneityModel, PanelData, StructuralParams, UnitObs,
};

/// Marginal law of one unit's outcome path.
#[derive(Debug, Clone)]
pub struct MarginalGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cov_factor: Cholesky<f64, Dyn>,
    /// Diagonal jitter (relative) needed to factorize `cov`; zero normally.
    pub jitter: f64,
    l_lambda: DMatrix<f64>,
    prior_mean: Vector2<f64>,
}

impl MarginalGaussian {
    pub fn logpdf(&self, y: &[f64]) -> f64 {
        gaussian_logpdf_chol(&DVector::from_column_slice(y), &self.mean, &self.cov_factor)
    }
}

fn sym2(m: &Matrix2<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 2, m.as_slice())
}

pub fn marginal_of_unit(
    theta: &StructuralParams,
    het: &HeterogeneityModel,
    design: &EventDesign,
    unit: &UnitObs,
) -> Result<MarginalGaussian> {
    if theta.sigma2_u <= 0.0 {
        return Err(Error::invalid(
            "sigma2_u",
            "must be positive for the likelihood",
        ));
    }
    let l = build_loadings(theta, design, unit.y0, unit.t0, &unit.x)?;
    let prior_mean = het.mean(unit.y0, &unit.x0, unit.t0);
    let mut l_lambda = DMatrix::zeros(design.periods, 2);
    l_lambda.set_column(0, &l.l_alpha);
    l_lambda.set_column(1, &l.l_delta0);
    let mean = &l.b + &l_lambda * DVector::from_column_slice(prior_mean.as_slice());
    let cov = &l_lambda * sym2(&het.cov) * l_lambda.transpose()
        + &l.l_eps * l.l_eps.transpose() * theta.sigma2_eps
        + &l.l_u * l.l_u.transpose() * theta.sigma2_u;
    let (cov_factor, jitter) = cholesky_jittered(&cov)?;
    Ok(MarginalGaussian {
        mean,
        cov,
        cov_factor,
        jitter,
        l_lambda,
        prior_mean,
    })
}

const CHUNK: usize = 64;

/// `sum_i log N(Y_i; mean_i, cov_i)`, evaluated unit by unit.
///
/// Units are processed in parallel; the per-unit terms are summed pairwise
/// in unit order so the total is bitwise stable across thread counts.
pub fn loglik(
    theta: &StructuralParams,
    het: &HeterogeneityModel,
    panel: &PanelData,
    design: &EventDesign,
) -> Result<f64> {
    panel.check_design(design)?;
    let terms: Vec<f64> = panel
        .units
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            chunk
                .iter()
                .enumerate()
                .map(|(j, unit)| {
                    let i = c * CHUNK + j;
                    let m = marginal_of_unit(theta, het, design, unit).map_err(|e| match e {
                        Error::Singular { max_jitter } => Error::SingularCovariance {
                            unit: i,
                            max_jitter,
                        },
                        other => other,
                    })?;
                    Ok(m.logpdf(&unit.y))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?
        .concat();
    Ok(pairwise_sum(&terms))
}

/// Gaussian posterior of `lambda` given the unit's observed outcome path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaPosterior {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

pub fn lambda_posterior(
    theta: &StructuralParams,
    het: &HeterogeneityModel,
    design: &EventDesign,
    unit: &UnitObs,
) -> Result<LambdaPosterior> {
    let m = marginal_of_unit(theta, het, design, unit)?;
    let resid = DVector::from_column_slice(&unit.y) - &m.mean;
    // K = Sigma_lambda L' V^{-1}
    let s = sym2(&het.cov);
    let v_inv_l = m.cov_factor.solve(&m.l_lambda);
    let gain = &s * v_inv_l.transpose();
    let mean = DVector::from_column_slice(m.prior_mean.as_slice()) + &gain * resid;
    let cov = &s - &gain * &m.l_lambda * &s;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(LambdaPosterior {
        mean: Vector2::new(mean[0], mean[1]),
        cov: Matrix2::new(cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LN_2PI;
    use crate::model::{Adoption, CohortCoding, StructuralLoadings};
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn unit(t: usize, t0: Adoption) -> UnitObs {
        UnitObs {
            y0: 0.5,
            x0: vec![0.2],
            t0,
            y: (0..t).map(|i| 0.3 * i as f64 - 0.4).collect(),
            x: (0..t).map(|i| (i as f64).sin()).collect(),
        }
    }

    #[test]
    fn single_period_standard_normal() {
        let design = EventDesign::new(1, 1, 0).unwrap();
        let theta = StructuralParams::new(0.0, 0.0, vec![0.0], 1.0, 1.0, 1);
        let het = HeterogeneityModel::constant(0.0, 0.0, Matrix2::zeros(), 1);
        let u = UnitObs {
            y0: 0.0,
            x0: vec![0.0],
            t0: Adoption::Never,
            y: vec![0.0],
            x: vec![0.0],
        };
        let panel = PanelData::new(1, 1, vec![u]).unwrap();
        let ll = loglik(&theta, &het, &panel, &design).unwrap();
        assert!((ll + 0.5 * LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn no_heterogeneity_no_persistence_is_white_noise() {
        let design = EventDesign::new(4, 1, 2).unwrap();
        let theta = StructuralParams::new(0.0, 0.5, vec![1.0], 2.0, 0.0, 4);
        let het = HeterogeneityModel::constant(0.0, 0.0, Matrix2::zeros(), 1);
        let m = marginal_of_unit(&theta, &het, &design, &unit(4, Adoption::Period(2))).unwrap();
        assert_eq!(m.cov, DMatrix::identity(4, 4) * 2.0);
    }

    #[test]
    fn never_treated_has_no_effect_terms() {
        let design = EventDesign::new(4, 1, 2).unwrap();
        let theta = StructuralParams::new(0.4, 0.5, vec![1.0], 1.0, 3.0, 4);
        let het = HeterogeneityModel::constant(0.2, 5.0, Matrix2::new(0.5, 0.0, 0.0, 7.0), 1);
        let u = unit(4, Adoption::Never);
        let m = marginal_of_unit(&theta, &het, &design, &u).unwrap();
        let l = build_loadings(&theta, &design, u.y0, u.t0, &u.x).unwrap();
        let expect_mean = &l.b + &l.l_alpha * 0.2;
        let expect_cov = &l.l_alpha * l.l_alpha.transpose() * 0.5 + &l.l_u * l.l_u.transpose();
        assert!((m.mean - expect_mean).amax() < 1e-14);
        assert!((m.cov - expect_cov).amax() < 1e-14);
    }

    #[test]
    fn posterior_with_degenerate_prior_is_point_mass() {
        let design = EventDesign::new(4, 1, 2).unwrap();
        let theta = StructuralParams::new(0.4, 0.5, vec![1.0], 1.0, 0.3, 4);
        let het = HeterogeneityModel::constant(0.2, 1.5, Matrix2::zeros(), 1);
        let p = lambda_posterior(&theta, &het, &design, &unit(4, Adoption::Period(2))).unwrap();
        assert_eq!(p.mean, Vector2::new(0.2, 1.5));
        assert_eq!(p.cov, Matrix2::zeros());
    }

    #[test]
    fn posterior_reverts_to_prior_without_information() {
        let design = EventDesign::new(4, 1, 2).unwrap();
        let theta = StructuralParams::new(0.4, 0.5, vec![1.0], 1e8, 0.3, 4);
        let prior_cov = Matrix2::new(0.6, 0.2, 0.2, 0.5);
        let het = HeterogeneityModel::constant(0.2, 1.5, prior_cov, 1);
        let p = lambda_posterior(&theta, &het, &design, &unit(4, Adoption::Period(2))).unwrap();
        let prior_mean = Vector2::new(0.2, 1.5);
        // KL(posterior || prior) for 2-d Gaussians
        let inv = prior_cov.try_inverse().unwrap();
        let d = prior_mean - p.mean;
        let kl = 0.5
            * ((inv * p.cov).trace() + (d.transpose() * inv * d)[0] - 2.0
                + (prior_cov.determinant() / p.cov.determinant()).ln());
        assert!(kl < 1e-3, "kl = {kl}");
    }

    #[test]
    fn level_normalization_is_unidentified() {
        let design = EventDesign::new(5, 1, 2).unwrap();
        let theta = StructuralParams::new(0.6, 0.7, vec![0.4], 1.1, 0.3, 5)
            .with_gamma(vec![0.0, 0.3, -0.2, 0.1, 0.5]);
        let het = HeterogeneityModel {
            mean_coef: DMatrix::from_row_slice(2, 4, &[0.5, 0.2, 0.1, 0.3, 1.0, 0.0, 0.2, 0.0]),
            cov: Matrix2::new(0.4, 0.1, 0.1, 0.3),
            cohorts: CohortCoding::new(vec![Adoption::Never]),
        };
        let units = [Adoption::Period(2), Adoption::Period(4), Adoption::Never]
            .iter()
            .map(|t0| unit(5, *t0))
            .collect();
        let panel = PanelData::new(5, 1, units).unwrap();
        let base = loglik(&theta, &het, &panel, &design).unwrap();
        let c = 0.75;
        let mut theta2 = theta.clone();
        theta2.gamma.iter_mut().for_each(|g| *g += c);
        let mut het2 = het.clone();
        het2.mean_coef[(0, 0)] -= c;
        let shifted = loglik(&theta2, &het2, &panel, &design).unwrap();
        assert!((base - shifted).abs() < 1e-8, "{base} vs {shifted}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn marginal_covariance_is_psd(
            rho_y in -0.99..0.99f64, rho_d in -1.0..1.0f64,
            s_u in 1e-3..5.0f64, s_e in 0.0..5.0f64,
            a in 0.0..3.0f64, c in -1.0..1.0f64, d in 0.0..3.0f64,
            t0 in 0usize..=6,
        ) {
            let design = EventDesign::new(6, 1, 3).unwrap();
            let s = StructuralLoadings::new(rho_y, rho_d, crate::model::Adoption::from_code(t0), &design);
            let l = s.l_lambda();
            let chol = Matrix2::new(a, 0.0, c, d);
            let sig = chol * chol.transpose();
            let cov = &l * sym2(&sig) * l.transpose() + &s.l_eps * s.l_eps.transpose() * s_e + &s.l_u * s.l_u.transpose() * s_u;
            let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
            prop_assert!(min >= -1e-10 * cov.amax().max(1.0));
            prop_assert!((&cov - cov.transpose()).amax() == 0.0 || (&cov - cov.transpose()).amax() < 1e-12);
        }
    }
}
