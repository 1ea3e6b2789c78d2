//! Two-way fixed-effects least squares of the outcome equation, treating the
//! covariates as strictly exogenous and the effect as common across units.

use super::ols::NormalEquations;
use crate::error::{Error, Result};
use crate::model::{EventDesign, PanelData};

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveFit {
    pub rho_y: f64,
    pub beta: Vec<f64>,
    /// Common effect at each event time `0..=J_max`.
    pub delta: Vec<f64>,
    /// Conventional standard errors aligned with `[rho_y, beta, delta]`.
    pub se: Vec<f64>,
    pub regressors: Vec<String>,
}

/// Regresses `Y_t` on `Y_{t-1}`, `X_t` and event-time dummies after removing
/// unit and period means (exact for a balanced panel).
pub fn fit_naive(panel: &PanelData, design: &EventDesign) -> Result<NaiveFit> {
    panel.check_design(design)?;
    let (n, t_len, k, nj) = (
        panel.n_units(),
        design.periods,
        design.covariates,
        design.n_event_times(),
    );
    let width = 2 + k + nj; // y, y_lag, x, d
    if n < 2 || t_len < 2 {
        return Err(Error::InsufficientData(
            "two-way fixed effects need N >= 2 and T >= 2".into(),
        ));
    }
    // raw[i][t][v]
    let mut raw = vec![0.0; n * t_len * width];
    for (i, unit) in panel.units.iter().enumerate() {
        for t in 1..=t_len {
            let row = &mut raw[(i * t_len + t - 1) * width..(i * t_len + t) * width];
            row[0] = unit.y_at(t);
            row[1] = unit.y_at(t - 1);
            row[2..2 + k].copy_from_slice(unit.x_at(t));
            if let Some(j) = unit.t0.active_effect(t, design.max_event_time) {
                row[2 + k + j] = 1.0;
            }
        }
    }
    let mut unit_mean = vec![0.0; n * width];
    let mut time_mean = vec![0.0; t_len * width];
    let mut grand = vec![0.0; width];
    for i in 0..n {
        for t in 0..t_len {
            for v in 0..width {
                let z = raw[(i * t_len + t) * width + v];
                unit_mean[i * width + v] += z / t_len as f64;
                time_mean[t * width + v] += z / n as f64;
                grand[v] += z / (n * t_len) as f64;
            }
        }
    }
    let mut names = vec!["y_lag".to_string()];
    names.extend((1..=k).map(|c| format!("x{c}")));
    names.extend((0..nj).map(|j| format!("d{j}")));
    let mut ne = NormalEquations::new(names.clone(), 1);
    let mut row = vec![0.0; width];
    let mut rows = Vec::with_capacity(n * t_len);
    for i in 0..n {
        for t in 0..t_len {
            for (v, r) in row.iter_mut().enumerate() {
                *r = raw[(i * t_len + t) * width + v]
                    - unit_mean[i * width + v]
                    - time_mean[t * width + v]
                    + grand[v];
            }
            ne.add(&row[1..], &row[..1]);
            rows.push(row.clone());
        }
    }
    let (b, inv) = ne.solve()?;
    let p = width - 1;
    let dof = (n * t_len).saturating_sub(n + t_len - 1 + p);
    if dof == 0 {
        return Err(Error::InsufficientData(
            "no residual degrees of freedom".into(),
        ));
    }
    let ssr: f64 = rows
        .iter()
        .map(|r| {
            let fit: f64 = (0..p).map(|c| r[1 + c] * b[(c, 0)]).sum();
            (r[0] - fit).powi(2)
        })
        .sum();
    let s2 = ssr / dof as f64;
    Ok(NaiveFit {
        rho_y: b[(0, 0)],
        beta: (0..k).map(|c| b[(1 + c, 0)]).collect(),
        delta: (0..nj).map(|j| b[(1 + k + j, 0)]).collect(),
        se: (0..p).map(|c| (s2 * inv[(c, c)]).sqrt()).collect(),
        regressors: names,
    })
}
