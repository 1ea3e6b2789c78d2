//! Data-generating processes shared by the integration tests.
#![allow(dead_code)]

use dynevent::simulation::{CohortLaw, InitialLaw, SimConfig};
use dynevent::{
    CohortCoding, EventDesign, FeedbackModel, HeterogeneityModel, PanelData, StructuralModel,
    StructuralParams,
};
use nalgebra::{DMatrix, DVector, Matrix2};

pub const GAMMA: [f64; 8] = [0.0, 0.2, 0.1, 0.3, -0.1, 0.2, 0.4, 0.1];

/// Heterogeneity mean depending on initial conditions, no cohort dummies.
pub fn heterogeneity(k: usize) -> HeterogeneityModel {
    let mut het = HeterogeneityModel::constant(0.5, 1.0, Matrix2::new(0.5, 0.1, 0.1, 0.3), k);
    het.mean_coef[(0, 1)] = 0.3;
    het.mean_coef[(0, 2)] = 0.2;
    het.mean_coef[(1, 1)] = 0.2;
    het
}

/// Feedback with persistence `a_x`, outcome loading `a_y` and a decaying
/// treatment response.
pub fn feedback(design: &EventDesign, a_x: f64, a_y: f64, a_d0: f64) -> FeedbackModel {
    let k = design.covariates;
    let mut a_d = DMatrix::zeros(k, design.n_event_times());
    for j in 0..design.n_event_times() {
        a_d[(0, j)] = a_d0 * 0.5f64.powi(j as i32);
    }
    FeedbackModel {
        a_x: DMatrix::identity(k, k) * a_x,
        a_y: DVector::from_element(k, a_y),
        a_d,
        intercept: DVector::zeros(k),
        sigma_x: DMatrix::identity(k, k),
    }
}

/// Adoption spread over the middle of the window with a never-treated share.
pub fn cohorts(periods: usize, never: f64) -> CohortLaw {
    let treated: Vec<usize> = (3..=periods.saturating_sub(2).max(3)).collect();
    let mut probs = vec![0.0; periods + 1];
    for &t in &treated {
        probs[t - 1] = (1.0 - never) / treated.len() as f64;
    }
    probs[periods] = never;
    CohortLaw::independent(probs)
}

/// The recovery design: `T = 8`, `J_max = 4`, `(rho_y, rho_delta) = (0.6, 0.8)`.
pub fn recovery_config(n_units: usize, seed: u64) -> SimConfig {
    let design = EventDesign::new(8, 1, 4).unwrap();
    let theta = StructuralParams::new(0.6, 0.8, vec![0.5], 1.0, 0.25, 8).with_gamma(GAMMA.to_vec());
    SimConfig {
        n_units,
        model: StructuralModel {
            design,
            theta,
            het: heterogeneity(1),
            feedback: feedback(&design, 0.4, 0.2, 0.5),
        },
        initial: InitialLaw::Gaussian {
            mean: vec![1.0, 0.0],
            cov: DMatrix::identity(2, 2),
        },
        cohorts: cohorts(8, 0.4),
        seed,
    }
}

/// `het` extended with zero coefficients on the panel's cohort dummies.
pub fn with_panel_cohorts(het: &HeterogeneityModel, panel: &PanelData) -> HeterogeneityModel {
    let cohorts = CohortCoding::from_adoptions(panel.units.iter().map(|u| u.t0)).unwrap();
    let k = panel.covariates;
    let mut mean_coef = DMatrix::zeros(2, HeterogeneityModel::n_regressors(k, &cohorts));
    mean_coef
        .columns_mut(0, 2 + k)
        .copy_from(&het.mean_coef.columns(0, 2 + k));
    HeterogeneityModel {
        mean_coef,
        cov: het.cov,
        cohorts,
    }
}

/// Sample correlation of two equally long series.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
