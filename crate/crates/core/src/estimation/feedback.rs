//! Second step: the covariate transition law, equation by equation.

use nalgebra::DMatrix;

use super::ols::NormalEquations;
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::model::{EventDesign, FeedbackModel, PanelData};
use crate::simulation::feedback_logdensity;

/// Least-squares fit of `X_t = c + A X_{t-1} + a_y Y_{t-1} + a_d D_t + eta_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackFit {
    pub model: FeedbackModel,
    /// Regressor names in column order of `coef`.
    pub regressors: Vec<String>,
    /// `K x p`: row `a` is the equation for covariate `a`.
    pub coef: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub t_stats: DMatrix<f64>,
    pub n_obs: usize,
    /// Feedback factor of the likelihood at the fitted model.
    pub loglik: f64,
}

/// Names of the transition regressors: `const, x1_lag.., y_lag, d0..dJ`.
pub fn feedback_regressor_names(design: &EventDesign) -> Vec<String> {
    let mut names = vec!["const".to_string()];
    names.extend((1..=design.covariates).map(|k| format!("x{k}_lag")));
    names.push("y_lag".into());
    names.extend((0..design.n_event_times()).map(|j| format!("d{j}")));
    names
}

fn fill_row(design: &EventDesign, unit: &crate::model::UnitObs, t: usize, z: &mut [f64]) {
    let k = design.covariates;
    z.fill(0.0);
    z[0] = 1.0;
    z[1..1 + k].copy_from_slice(unit.x_at(t - 1));
    z[1 + k] = unit.y_at(t - 1);
    if let Some(j) = unit.t0.active_effect(t, design.max_event_time) {
        z[2 + k + j] = 1.0;
    }
}

/// Equation-by-equation least squares, which is the Gaussian maximum
/// likelihood estimator of the linear transition. `Sigma_X` uses the
/// residual cross products over `N T - p`.
pub fn fit_feedback(panel: &PanelData, design: &EventDesign) -> Result<FeedbackFit> {
    panel.check_design(design)?;
    let k = design.covariates;
    let names = feedback_regressor_names(design);
    let p = names.len();
    let n_obs = panel.n_units() * design.periods;
    if n_obs < p + 5 {
        return Err(Error::InsufficientData(format!(
            "{n_obs} covariate transitions for {p} regressors per equation"
        )));
    }
    let mut ne = NormalEquations::new(names.clone(), k);
    let mut z = vec![0.0; p];
    for unit in &panel.units {
        for t in 1..=design.periods {
            fill_row(design, unit, t, &mut z);
            ne.add(&z, unit.x_at(t));
        }
    }
    let (b, inv) = ne.solve()?;

    let mut resid_cp = DMatrix::<f64>::zeros(k, k);
    let mut e = vec![0.0; k];
    for unit in &panel.units {
        for t in 1..=design.periods {
            fill_row(design, unit, t, &mut z);
            for (a, ea) in e.iter_mut().enumerate() {
                let fitted: f64 = z.iter().enumerate().map(|(c, zc)| zc * b[(c, a)]).sum();
                *ea = unit.x_at(t)[a] - fitted;
            }
            for a in 0..k {
                for c in 0..k {
                    resid_cp[(a, c)] += e[a] * e[c];
                }
            }
        }
    }
    let sigma_x = resid_cp / (n_obs - p) as f64;

    let coef = b.transpose();
    let se = DMatrix::from_fn(k, p, |a, c| (sigma_x[(a, a)] * inv[(c, c)]).sqrt());
    let t_stats = coef.component_div(&se);
    let model = FeedbackModel {
        intercept: coef.column(0).into_owned(),
        a_x: coef.columns(1, k).into_owned(),
        a_y: coef.column(1 + k).into_owned(),
        a_d: coef.columns(2 + k, design.n_event_times()).into_owned(),
        sigma_x,
    };
    let loglik = match panel
        .units
        .iter()
        .map(|u| feedback_logdensity(u, &model, design))
        .collect::<Result<Vec<f64>>>()
    {
        Ok(terms) => pairwise_sum(&terms),
        Err(e) => {
            log::warn!("feedback log likelihood undefined: {e}");
            f64::NAN
        }
    };
    Ok(FeedbackFit {
        model,
        regressors: names,
        coef,
        se,
        t_stats,
        n_obs,
        loglik,
    })
}
