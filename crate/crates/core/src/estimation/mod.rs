//! Two-step estimation: the integrated outcome likelihood over
//! `(theta, H, gamma)`, then the covariate transition law.

mod feedback;
mod naive;
mod ols;
mod study;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::likelihood::{loglik, OutcomeObjective};
use crate::linalg::symmetric_pinv;
use crate::model::{
    Adoption, CohortCoding, EventDesign, GammaMode, HeterogeneityModel, PanelData, ParamLayout,
    StructuralParams,
};
use crate::optim::{fd_hessian, minimize, OptimOptions};
use crate::rng::{substream, Domain};

pub use feedback::{feedback_regressor_names, fit_feedback, FeedbackFit};
pub use naive::{fit_naive, NaiveFit};
pub use study::{
    monte_carlo, CellResult, Estimator, ParamSummary, ReplicationRecord, StudyCell, StudySpec,
};

/// How the time effects enter the outcome likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeEffects {
    /// Estimated, with `gamma_1 = 0`.
    #[default]
    Free,
    /// Held at zero.
    Zero,
}

/// Starting point for the outcome fit. The heterogeneity model must use the
/// panel's cohort coding (see [`CohortCoding::from_adoptions`]).
#[derive(Debug, Clone, PartialEq)]
pub struct FitStart {
    pub theta: StructuralParams,
    pub het: HeterogeneityModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Defaults to a moment-based start when absent.
    pub start: Option<FitStart>,
    /// Number of starts. Without an explicit start the first two are the
    /// regression start and the default start; further starts perturb the
    /// first one.
    pub starts: usize,
    /// Seed of the perturbations.
    pub seed: u64,
    /// Standard deviation of the packed-scale perturbations.
    pub perturbation: f64,
    pub time_effects: TimeEffects,
    pub optim: OptimOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            start: None,
            starts: 3,
            seed: 0,
            perturbation: 0.25,
            time_effects: TimeEffects::Free,
            optim: OptimOptions::default(),
        }
    }
}

/// Outcome of one optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct StartSummary {
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// First-step estimates of `theta` and the heterogeneity law.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeFit {
    pub layout: ParamLayout,
    /// Estimates on the unconstrained scale.
    pub packed: DVector<f64>,
    pub theta: StructuralParams,
    pub het: HeterogeneityModel,
    /// Outcome-block log likelihood, evaluated unit by unit at the estimates.
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    /// `(iteration, objective per unit)` of the selected start.
    pub trace: Vec<(usize, f64)>,
    pub starts: Vec<StartSummary>,
}

impl OutcomeFit {
    pub fn names(&self) -> Vec<String> {
        self.layout.names()
    }

    pub fn natural(&self) -> DVector<f64> {
        self.layout
            .natural(&self.packed)
            .expect("packed vector matches its layout")
    }
}

/// Inverse information from the numerical Hessian of the log likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardErrors {
    pub names: Vec<String>,
    pub packed: DVector<f64>,
    pub natural: DVector<f64>,
    pub cov_packed: DMatrix<f64>,
    pub cov_natural: DMatrix<f64>,
    /// Whether the negative Hessian was positive definite; if not, a
    /// pseudo-inverse was used.
    pub hessian_pd: bool,
    pub min_eigenvalue: f64,
    pub condition_number: f64,
}

/// Both estimation steps with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub outcome: OutcomeFit,
    pub se: StandardErrors,
    pub feedback: FeedbackFit,
}

impl FitResult {
    pub fn theta_hat(&self) -> &StructuralParams {
        &self.outcome.theta
    }

    pub fn het_hat(&self) -> &HeterogeneityModel {
        &self.outcome.het
    }

    pub fn gamma_hat(&self) -> &[f64] {
        &self.outcome.theta.gamma
    }

    pub fn loglik_y(&self) -> f64 {
        self.outcome.loglik
    }

    pub fn loglik_x(&self) -> f64 {
        self.feedback.loglik
    }

    pub fn converged(&self) -> bool {
        self.outcome.converged
    }
}

/// Runs [`fit_outcome_model`], [`standard_errors`] and [`fit_feedback`].
pub fn estimate(
    panel: &PanelData,
    design: &EventDesign,
    options: &FitOptions,
) -> Result<FitResult> {
    let outcome = fit_outcome_model(panel, design, options)?;
    let se = standard_errors(&outcome, panel)?;
    let feedback = fit_feedback(panel, design)?;
    Ok(FitResult {
        outcome,
        se,
        feedback,
    })
}

fn layout_for(
    panel: &PanelData,
    design: &EventDesign,
    time_effects: TimeEffects,
) -> Result<ParamLayout> {
    panel.check_design(design)?;
    let cohorts = CohortCoding::from_adoptions(panel.units.iter().map(|u| u.t0))?;
    if !panel.units.iter().any(|u| u.t0 != Adoption::Period(1)) {
        return Err(Error::DegenerateDesign(
            "no untreated observations: every unit adopts in period 1".into(),
        ));
    }
    let p = HeterogeneityModel::n_regressors(design.covariates, &cohorts);
    if panel.n_units() < p {
        return Err(Error::InsufficientData(format!(
            "{} units for {p} heterogeneity regressors",
            panel.n_units()
        )));
    }
    let gamma = match time_effects {
        TimeEffects::Free => GammaMode::Free,
        TimeEffects::Zero => GammaMode::Fixed(vec![0.0; design.periods]),
    };
    ParamLayout::new(*design, cohorts, gamma)
}

/// Starting values: `rho = 0`, `beta` from pooled least squares of first
/// differences, variances from the residual variance of that regression,
/// zero heterogeneity mean and `Sigma_lambda = 0.1 I`.
pub fn default_start(panel: &PanelData, design: &EventDesign, cohorts: &CohortCoding) -> FitStart {
    let k = design.covariates;
    let names: Vec<String> = (0..=k).map(|c| c.to_string()).collect();
    let mut ne = ols::NormalEquations::new(names, 1);
    let mut z = vec![0.0; k + 1];
    let mut dy_all = Vec::with_capacity(panel.n_units() * design.periods);
    for unit in &panel.units {
        for t in 1..=design.periods {
            z[0] = 1.0;
            for c in 0..k {
                z[1 + c] = unit.x_at(t)[c] - unit.x_at(t - 1)[c];
            }
            let dy = unit.y_at(t) - unit.y_at(t - 1);
            ne.add(&z, &[dy]);
            dy_all.push((z.clone(), dy));
        }
    }
    let coef = ne.solve().ok().map(|(b, _)| b);
    let beta: Vec<f64> = match &coef {
        Some(b) => (0..k).map(|c| b[(1 + c, 0)]).collect(),
        None => vec![0.0; k],
    };
    let resid: Vec<f64> = dy_all
        .iter()
        .map(|(z, dy)| {
            let fit = coef.as_ref().map_or(0.0, |b| {
                z.iter().enumerate().map(|(c, v)| v * b[(c, 0)]).sum()
            });
            dy - fit
        })
        .collect();
    let n = resid.len() as f64;
    let m = resid.iter().sum::<f64>() / n;
    let s2 = (resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n).max(1e-6);
    let theta = StructuralParams::new(0.0, 0.0, beta, s2 / 2.0, s2 / 4.0, design.periods);
    let het = HeterogeneityModel {
        mean_coef: DMatrix::zeros(2, HeterogeneityModel::n_regressors(k, cohorts)),
        cov: Matrix2::identity() * 0.1,
        cohorts: cohorts.clone(),
    };
    FitStart { theta, het }
}

/// Starting values from pooled least squares of `Y_t` on `Y_{t-1}`, `X_t`,
/// the heterogeneity regressors, event-time dummies and period dummies. The
/// fitted coefficients seed `rho_y` (clipped to `[-0.9, 0.9]`), `beta`, the
/// conditional mean of alpha, the intercept of delta0 and `gamma`. Falls back
/// to [`default_start`] when the regression is rank deficient.
pub fn regression_start(
    panel: &PanelData,
    design: &EventDesign,
    cohorts: &CohortCoding,
) -> FitStart {
    let (t_len, k, nj) = (design.periods, design.covariates, design.n_event_times());
    let probe = HeterogeneityModel {
        mean_coef: DMatrix::zeros(2, HeterogeneityModel::n_regressors(k, cohorts)),
        cov: Matrix2::identity() * 0.1,
        cohorts: cohorts.clone(),
    };
    let p = probe.mean_coef.ncols();
    let width = 1 + k + p + nj + (t_len - 1);
    let mut ne = ols::NormalEquations::new((0..width).map(|c| c.to_string()).collect(), 1);
    let mut z = vec![0.0; width];
    let mut rows = Vec::with_capacity(panel.n_units() * t_len);
    for unit in &panel.units {
        let r = probe.regressors(unit.y0, &unit.x0, unit.t0);
        for t in 1..=t_len {
            z.fill(0.0);
            z[0] = unit.y_at(t - 1);
            z[1..1 + k].copy_from_slice(unit.x_at(t));
            z[1 + k..1 + k + p].copy_from_slice(r.as_slice());
            if let Some(j) = unit.t0.active_effect(t, design.max_event_time) {
                z[1 + k + p + j] = 1.0;
            }
            if t >= 2 {
                z[1 + k + p + nj + t - 2] = 1.0;
            }
            ne.add(&z, &[unit.y_at(t)]);
            rows.push((z.clone(), unit.y_at(t)));
        }
    }
    let Ok((b, _)) = ne.solve() else {
        return default_start(panel, design, cohorts);
    };
    let ssr: f64 = rows
        .iter()
        .map(|(z, y)| {
            (y - z
                .iter()
                .enumerate()
                .map(|(c, v)| v * b[(c, 0)])
                .sum::<f64>())
            .powi(2)
        })
        .sum();
    let s2 = (ssr / rows.len() as f64).max(1e-6);
    let mut gamma = vec![0.0];
    gamma.extend((0..t_len - 1).map(|t| b[(1 + k + p + nj + t, 0)]));
    let theta = StructuralParams::new(
        b[(0, 0)].clamp(-0.9, 0.9),
        0.0,
        (0..k).map(|c| b[(1 + c, 0)]).collect(),
        s2 / 2.0,
        s2 / 4.0,
        t_len,
    )
    .with_gamma(gamma);
    let mut het = probe;
    for c in 0..p {
        het.mean_coef[(0, c)] = b[(1 + k + c, 0)];
    }
    het.mean_coef[(1, 0)] = b[(1 + k + p, 0)];
    FitStart { theta, het }
}

/// Maximizes the integrated outcome likelihood over the packed parameters:
/// BFGS on finite-difference gradients, then a Nelder-Mead polish, from
/// each start; the best objective wins. Non-convergence is reported in the
/// result, not as an error.
pub fn fit_outcome_model(
    panel: &PanelData,
    design: &EventDesign,
    options: &FitOptions,
) -> Result<OutcomeFit> {
    let layout = layout_for(panel, design, options.time_effects)?;
    let pack = |start: &FitStart| -> Result<DVector<f64>> {
        let mut theta = start.theta.clone();
        if let GammaMode::Fixed(g) = layout.gamma_mode() {
            theta.gamma = g.clone();
        }
        layout.pack(&theta, &start.het)
    };
    // Base starts first, then perturbations of the first one.
    let bases = match &options.start {
        Some(s) => vec![pack(s)?],
        None => vec![
            pack(&regression_start(panel, design, layout.cohorts()))?,
            pack(&default_start(panel, design, layout.cohorts()))?,
        ],
    };

    let objective = OutcomeObjective::new(panel, design, layout.cohorts())?;
    let n = panel.n_units() as f64;
    let f = |v: &DVector<f64>| -> f64 {
        match layout
            .unpack(v)
            .and_then(|(th, het)| objective.loglik(&th, &het))
        {
            Ok(ll) => -ll / n,
            Err(_) => f64::INFINITY,
        }
    };

    let mut best: Option<crate::optim::OptimResult> = None;
    let mut summaries = Vec::with_capacity(options.starts.max(1));
    for r in 0..options.starts.max(1) {
        let x0 = if let Some(b) = bases.get(r) {
            b.clone()
        } else {
            let mut rng = substream(options.seed, Domain::Restart, &[r as u64]);
            let mut v = bases[0].clone();
            for e in v.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *e += options.perturbation * z;
            }
            v
        };
        let res = minimize(&f, &x0, &options.optim);
        log::debug!("start {r}: objective {} converged {}", res.f, res.converged);
        summaries.push(StartSummary {
            objective: res.f,
            converged: res.converged,
            iterations: res.iterations,
        });
        if best.as_ref().is_none_or(|b| res.f < b.f) {
            best = Some(res);
        }
    }
    let best = best.expect("at least one start");
    let (theta, het) = layout.unpack(&best.x)?;
    let ll = loglik(&theta, &het, panel, design)?;
    Ok(OutcomeFit {
        layout,
        packed: best.x,
        theta,
        het,
        loglik: ll,
        converged: best.converged,
        iterations: best.iterations,
        evaluations: best.evaluations,
        grad_norm: best.grad_norm,
        trace: best.trace,
        starts: summaries,
    })
}

/// Central-difference Hessian of the log likelihood on the packed scale,
/// inverted and mapped to the natural scale by the delta method. A negative
/// Hessian that is not positive definite is flagged and pseudo-inverted.
pub fn standard_errors(fit: &OutcomeFit, panel: &PanelData) -> Result<StandardErrors> {
    let layout = &fit.layout;
    let objective = OutcomeObjective::new(panel, layout.design(), layout.cohorts())?;
    let f = |v: &DVector<f64>| -> f64 {
        match layout
            .unpack(v)
            .and_then(|(th, het)| objective.loglik(&th, &het))
        {
            Ok(ll) => -ll,
            Err(_) => f64::NAN,
        }
    };
    let info = fd_hessian(f, &fit.packed, 1e-4);
    let info = (&info + info.transpose()) * 0.5;
    if info.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "hessian",
            "non-finite entries at the estimates",
        ));
    }
    let eig = SymmetricEigen::new(info.clone());
    let min_eig = eig.eigenvalues.min();
    let max_eig = eig.eigenvalues.max();
    let hessian_pd = min_eig > 0.0;
    let cov_packed = match (hessian_pd, nalgebra::Cholesky::new(info.clone())) {
        (true, Some(c)) => c.inverse(),
        _ => {
            log::warn!("negative Hessian is not positive definite (min eigenvalue {min_eig:e}); using a pseudo-inverse");
            symmetric_pinv(&info, 1e-10)
        }
    };
    let jac = layout.natural_jacobian(&fit.packed)?;
    let cov_natural = &jac * &cov_packed * jac.transpose();
    let sd = |m: &DMatrix<f64>| {
        DVector::from_iterator(m.nrows(), m.diagonal().iter().map(|v| v.max(0.0).sqrt()))
    };
    Ok(StandardErrors {
        names: layout.names(),
        packed: sd(&cov_packed),
        natural: sd(&cov_natural),
        cov_packed,
        cov_natural,
        hessian_pd,
        min_eigenvalue: min_eig,
        condition_number: if min_eig > 0.0 {
            max_eig / min_eig
        } else {
            f64::INFINITY
        },
    })
}
