//! Fit report written by `estimate` and read by `counterfactual` and
//! `decompose`. JSON numbers use shortest round-trip formatting, so a
//! reloaded model is bitwise equal to the fitted one.

use std::path::Path;

use dynevent::estimation::FitResult;
use dynevent::{
    Adoption, CohortCoding, EventDesign, FeedbackModel, HeterogeneityModel, StructuralModel,
    StructuralParams,
};
use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub schema_version: u32,
    pub design: DesignReport,
    pub n_units: usize,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    pub loglik_y: f64,
    /// Absent when the fitted innovation covariance is singular.
    pub loglik_x: Option<f64>,
    pub hessian_pd: bool,
    pub hessian_min_eigenvalue: f64,
    pub starts: Vec<StartReport>,
    pub parameters: Vec<ParameterReport>,
    pub theta: ThetaReport,
    pub heterogeneity: HeterogeneityReport,
    pub feedback: FeedbackReport,
    pub trace_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignReport {
    pub periods: usize,
    pub covariates: usize,
    pub max_event_time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartReport {
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterReport {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    /// Standard error of the unconstrained (optimizer) coordinate.
    pub se_unconstrained: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaReport {
    pub rho_y: f64,
    pub rho_delta: f64,
    pub beta: Vec<f64>,
    pub sigma2_u: f64,
    pub sigma2_eps: f64,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneityReport {
    /// Adoption dates of the cohort dummy columns (0 = never treated).
    pub cohorts: Vec<usize>,
    pub regressors: Vec<String>,
    pub mean_alpha: Vec<f64>,
    pub mean_delta0: Vec<f64>,
    pub cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackReport {
    pub regressors: Vec<String>,
    /// One row per covariate equation.
    pub coef: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub t_stats: Vec<Vec<f64>>,
    pub sigma_x: Vec<Vec<f64>>,
    pub n_obs: usize,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn from_rows(
    field: &str,
    v: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<DMatrix<f64>, CliError> {
    if v.len() != nrows || v.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Data(format!(
            "fit report: `{field}` is not {nrows} x {ncols}"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| v[r][c]))
}

fn regressor_names(k: usize, cohorts: &CohortCoding) -> Vec<String> {
    let mut names = vec!["const".to_string(), "y0".into()];
    names.extend((1..=k).map(|c| format!("x0[{c}]")));
    names.extend(cohorts.levels.iter().map(|a| format!("cohort[{a}]")));
    names
}

impl FitReport {
    pub fn from_fit(
        fit: &FitResult,
        design: &EventDesign,
        n_units: usize,
        trace_file: &str,
    ) -> Self {
        let o = &fit.outcome;
        let natural = o.natural();
        let parameters = o
            .names()
            .into_iter()
            .enumerate()
            .map(|(i, name)| ParameterReport {
                name,
                estimate: natural[i],
                se: fit.se.natural[i],
                se_unconstrained: fit.se.packed[i],
            })
            .collect();
        let th = &o.theta;
        let het = &o.het;
        let f = &fit.feedback;
        FitReport {
            schema_version: REPORT_VERSION,
            design: DesignReport {
                periods: design.periods,
                covariates: design.covariates,
                max_event_time: design.max_event_time,
            },
            n_units,
            converged: o.converged,
            iterations: o.iterations,
            evaluations: o.evaluations,
            grad_norm: o.grad_norm,
            loglik_y: o.loglik,
            loglik_x: f.loglik.is_finite().then_some(f.loglik),
            hessian_pd: fit.se.hessian_pd,
            hessian_min_eigenvalue: fit.se.min_eigenvalue,
            starts: o
                .starts
                .iter()
                .map(|s| StartReport {
                    objective: s.objective,
                    converged: s.converged,
                    iterations: s.iterations,
                })
                .collect(),
            parameters,
            theta: ThetaReport {
                rho_y: th.rho_y,
                rho_delta: th.rho_delta,
                beta: th.beta.clone(),
                sigma2_u: th.sigma2_u,
                sigma2_eps: th.sigma2_eps,
                gamma: th.gamma.clone(),
            },
            heterogeneity: HeterogeneityReport {
                cohorts: het.cohorts.levels.iter().map(|a| a.code()).collect(),
                regressors: regressor_names(design.covariates, &het.cohorts),
                mean_alpha: het.mean_coef.row(0).iter().copied().collect(),
                mean_delta0: het.mean_coef.row(1).iter().copied().collect(),
                cov: [
                    [het.cov[(0, 0)], het.cov[(0, 1)]],
                    [het.cov[(1, 0)], het.cov[(1, 1)]],
                ],
            },
            feedback: FeedbackReport {
                regressors: f.regressors.clone(),
                coef: rows(&f.coef),
                se: rows(&f.se),
                t_stats: rows(&f.t_stats),
                sigma_x: rows(&f.model.sigma_x),
                n_obs: f.n_obs,
            },
            trace_file: trace_file.to_string(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read fit report {}: {e}", path.display())))?;
        let report: FitReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("fit report {}: {e}", path.display())))?;
        if report.schema_version != REPORT_VERSION {
            return Err(CliError::Data(format!(
                "fit report schema_version {} is not supported",
                report.schema_version
            )));
        }
        Ok(report)
    }

    pub fn design(&self) -> Result<EventDesign, CliError> {
        let d = &self.design;
        Ok(EventDesign::new(d.periods, d.covariates, d.max_event_time)?)
    }

    /// The fitted structural model.
    pub fn model(&self) -> Result<StructuralModel, CliError> {
        let design = self.design()?;
        let (t, k, nj) = (design.periods, design.covariates, design.n_event_times());
        let th = &self.theta;
        let theta = StructuralParams::new(
            th.rho_y,
            th.rho_delta,
            th.beta.clone(),
            th.sigma2_u,
            th.sigma2_eps,
            t,
        )
        .with_gamma(th.gamma.clone());
        let h = &self.heterogeneity;
        let cohorts =
            CohortCoding::new(h.cohorts.iter().map(|c| Adoption::from_code(*c)).collect());
        let p = HeterogeneityModel::n_regressors(k, &cohorts);
        let mean_coef = from_rows(
            "heterogeneity mean",
            &[h.mean_alpha.clone(), h.mean_delta0.clone()],
            2,
            p,
        )?;
        let het = HeterogeneityModel {
            mean_coef,
            cov: Matrix2::new(h.cov[0][0], h.cov[0][1], h.cov[1][0], h.cov[1][1]),
            cohorts,
        };
        let f = &self.feedback;
        let coef = from_rows("feedback coef", &f.coef, k, 2 + k + nj)?;
        let feedback = FeedbackModel {
            intercept: DVector::from_iterator(k, coef.column(0).iter().copied()),
            a_x: coef.columns(1, k).into_owned(),
            a_y: DVector::from_iterator(k, coef.column(1 + k).iter().copied()),
            a_d: coef.columns(2 + k, nj).into_owned(),
            sigma_x: from_rows("feedback sigma_x", &f.sigma_x, k, k)?,
        };
        let model = StructuralModel {
            design,
            theta,
            het,
            feedback,
        };
        model.validate()?;
        Ok(model)
    }
}
