//! Cross-sectional demeaning, which removes additive time effects.

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::model::{PanelData, UnitObs};

/// Cross-sectional means removed by [`demean_panel`], for reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSectionMeans {
    /// `Ybar_0..Ybar_T`.
    pub y: Vec<f64>,
    /// `Xbar_0..Xbar_T`, row-major `(T + 1) x K`.
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemeanedPanel {
    pub panel: PanelData,
    pub means: CrossSectionMeans,
}

/// Subtracts the cross-sectional mean unless it is already within the
/// rounding error of a summation, `(n + 1) eps max|v|`. After one
/// subtraction the recomputed mean is below that bound (rounding of the
/// differences contributes at most `eps/2 max|v|`, the summation at most
/// `(n - 1) eps max|v|`), so a second call is a no-op and demeaning is
/// idempotent bit for bit. Returns the amount subtracted.
fn center(values: &mut [f64]) -> f64 {
    let n = values.len() as f64;
    let m = pairwise_sum(values) / n;
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m.abs() <= 2.0 * (n + 1.0) * f64::EPSILON * scale {
        return 0.0;
    }
    values.iter_mut().for_each(|v| *v -= m);
    m
}

/// `Ydot_it = Y_it - Ybar_t`, `Xdot_it = X_it - Xbar_t` for `t = 0..T`.
pub fn demean_panel(panel: &PanelData) -> Result<DemeanedPanel> {
    let n = panel.n_units();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "demeaning needs at least 2 units, got {n}"
        )));
    }
    let (t_len, k) = (panel.periods, panel.covariates);
    let mut units: Vec<UnitObs> = panel.units.clone();
    let mut y_means = Vec::with_capacity(t_len + 1);
    let mut x_means = Vec::with_capacity((t_len + 1) * k);
    let mut col = vec![0.0; n];
    for t in 0..=t_len {
        col.iter_mut().zip(&units).for_each(|(c, u)| *c = u.y_at(t));
        y_means.push(center(&mut col));
        for (u, c) in units.iter_mut().zip(&col) {
            if t == 0 {
                u.y0 = *c;
            } else {
                u.y[t - 1] = *c;
            }
        }
        for kk in 0..k {
            col.iter_mut()
                .zip(&units)
                .for_each(|(c, u)| *c = u.x_at(t)[kk]);
            x_means.push(center(&mut col));
            for (u, c) in units.iter_mut().zip(&col) {
                if t == 0 {
                    u.x0[kk] = *c;
                } else {
                    u.x[(t - 1) * k + kk] = *c;
                }
            }
        }
    }
    Ok(DemeanedPanel {
        panel: PanelData::new(t_len, k, units)?,
        means: CrossSectionMeans {
            y: y_means,
            x: x_means,
        },
    })
}
