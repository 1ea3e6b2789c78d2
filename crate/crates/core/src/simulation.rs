//! Panel generation from the joint process, and the factorized log density.
//!
//! Per unit the draw order is: initial conditions, adoption date, `lambda`,
//! the effect innovations, then for each period the covariate innovation
//! before the outcome shock. `X_t` is formed from the history only, so it is
//! independent of `U_t` given the past.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, gaussian_logpdf_chol, psd_factor};
use crate::model::{
    build_loadings, delta_path, Adoption, EventDesign, FeedbackModel, Lambda, PanelData,
    StructuralModel, StructuralParams, UnitObs,
};
use crate::rng::{substream, Domain};

/// Law of the initial conditions `(Y0, X0)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    Fixed {
        y0: f64,
        x0: Vec<f64>,
    },
    /// Joint normal over `(Y0, X0')`, dimension `1 + K`.
    Gaussian {
        mean: Vec<f64>,
        cov: DMatrix<f64>,
    },
}

/// Adoption probabilities over `{1, ..., T, never}`.
///
/// `y0_tilt` reweights the never-treated probability by `exp(y0_tilt * Y0)`
/// so cohorts can depend on initial conditions; zero gives independent
/// assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortLaw {
    pub probs: Vec<f64>,
    pub y0_tilt: f64,
}

impl CohortLaw {
    pub fn independent(probs: Vec<f64>) -> Self {
        Self {
            probs,
            y0_tilt: 0.0,
        }
    }

    fn draw(&self, y0: f64, rng: &mut impl Rng) -> Adoption {
        let t_len = self.probs.len() - 1;
        let mut w = self.probs.clone();
        if self.y0_tilt != 0.0 {
            w[t_len] *= (self.y0_tilt * y0).exp();
        }
        let total: f64 = w.iter().sum();
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if u < acc && *wi > 0.0 {
                return if i == t_len {
                    Adoption::Never
                } else {
                    Adoption::Period(i + 1)
                };
            }
        }
        // u landed on the rounding gap at the top: take the last positive level
        let last = w.iter().rposition(|v| *v > 0.0).unwrap_or(t_len);
        if last == t_len {
            Adoption::Never
        } else {
            Adoption::Period(last + 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_units: usize,
    pub model: StructuralModel,
    pub initial: InitialLaw,
    pub cohorts: CohortLaw,
    pub seed: u64,
}

impl SimConfig {
    pub fn design(&self) -> &EventDesign {
        &self.model.design
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::invalid("N", "must be at least 1"));
        }
        self.model.validate()?;
        let d = &self.model.design;
        let k = d.covariates;
        match &self.initial {
            InitialLaw::Fixed { y0, x0 } => {
                if x0.len() != k {
                    return Err(Error::dim("initial x0", k, x0.len()));
                }
                if !y0.is_finite() || x0.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("initial", "non-finite value"));
                }
            }
            InitialLaw::Gaussian { mean, cov } => {
                if mean.len() != k + 1 {
                    return Err(Error::dim("initial mean", k + 1, mean.len()));
                }
                if cov.nrows() != k + 1 || cov.ncols() != k + 1 {
                    return Err(Error::dim("initial cov", k + 1, cov.nrows()));
                }
                psd_factor(cov, "initial covariance")?;
            }
        }
        let probs = &self.cohorts.probs;
        if probs.len() != d.periods + 1 {
            return Err(Error::dim(
                "cohort probabilities (T periods + never)",
                d.periods + 1,
                probs.len(),
            ));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(
                "cohort probabilities",
                "must be non-negative",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "cohort probabilities",
                format!("sum to {total}, not 1"),
            ));
        }
        if !self.cohorts.y0_tilt.is_finite() {
            return Err(Error::invalid("cohort y0_tilt", "non-finite"));
        }
        Ok(())
    }
}

/// Realized latents of one unit, kept for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitLatent {
    pub lambda: Lambda,
    /// `eps_1..eps_J`.
    pub eps: Vec<f64>,
    /// `U_1..U_T`.
    pub u: Vec<f64>,
    /// Covariate innovations `eta_1..eta_T`, row-major `T x K`.
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub panel: PanelData,
    pub latent: Vec<UnitLatent>,
}

/// Standard-normal shocks for one unit, drawn in the canonical order:
/// `lambda` (2), effect innovations (J), then `(eta_t, U_t)` per period.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitShocks {
    pub lambda: [f64; 2],
    pub eps: Vec<f64>,
    pub eta: Vec<f64>,
    pub u: Vec<f64>,
}

impl UnitShocks {
    pub fn draw(design: &EventDesign, rng: &mut impl Rng) -> Self {
        let lambda = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let eps = (0..design.max_event_time)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let k = design.covariates;
        let mut eta = Vec::with_capacity(design.periods * k);
        let mut u = Vec::with_capacity(design.periods);
        for _ in 0..design.periods {
            for _ in 0..k {
                eta.push(rng.sample(StandardNormal));
            }
            u.push(rng.sample(StandardNormal));
        }
        Self {
            lambda,
            eps,
            eta,
            u,
        }
    }
}

/// Scale factors turning standard normals into model shocks.
#[derive(Debug, Clone)]
pub(crate) struct ShockScales {
    pub lambda: Matrix2<f64>,
    pub eta: DMatrix<f64>,
    pub sd_u: f64,
    pub sd_eps: f64,
}

impl ShockScales {
    pub fn new(model: &StructuralModel) -> Result<Self> {
        let cov = DMatrix::from_column_slice(2, 2, model.het.cov.as_slice());
        Ok(Self {
            lambda: lambda_factor(&cov)?,
            eta: psd_factor(&model.feedback.sigma_x, "feedback sigma_x")?,
            sd_u: model.theta.sigma2_u.sqrt(),
            sd_eps: model.theta.sigma2_eps.sqrt(),
        })
    }

    pub fn eps(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| self.sd_eps * v).collect()
    }

    pub fn u(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|v| self.sd_u * v).collect()
    }

    pub fn eta(&self, z: &[f64]) -> Vec<f64> {
        let k = self.eta.nrows();
        let mut out = vec![0.0; z.len()];
        for (zt, ot) in z.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
            for a in 0..k {
                ot[a] = (0..k).map(|b| self.eta[(a, b)] * zt[b]).sum();
            }
        }
        out
    }
}

pub(crate) fn lambda_factor(cov: &DMatrix<f64>) -> Result<Matrix2<f64>> {
    let f = psd_factor(cov, "heterogeneity covariance")?;
    Ok(Matrix2::new(f[(0, 0)], f[(0, 1)], f[(1, 0)], f[(1, 1)]))
}

pub(crate) fn draw_lambda(mean: Vector2<f64>, factor: &Matrix2<f64>, z: [f64; 2]) -> Lambda {
    let v = mean + factor * Vector2::new(z[0], z[1]);
    Lambda {
        alpha: v[0],
        delta0: v[1],
    }
}

/// One outcome transition. Shared by the simulator and the counterfactual
/// engine so identical inputs give bitwise-identical outputs.
#[inline]
pub(crate) fn outcome_step(
    theta: &StructuralParams,
    t: usize,
    y_prev: f64,
    alpha: f64,
    x_t: &[f64],
    effect: f64,
    u: f64,
) -> f64 {
    let xb: f64 = x_t.iter().zip(&theta.beta).map(|(a, b)| a * b).sum();
    theta.rho_y * y_prev + alpha + xb + theta.gamma[t - 1] + effect + u
}

/// Covariate source for [`roll_unit`].
#[derive(Debug, Clone, Copy)]
pub enum CovariatePath<'a> {
    /// Draw from the feedback model with the given innovations (`T x K`).
    Feedback(&'a [f64]),
    /// Use a given realized path (`T x K`).
    Fixed(&'a [f64]),
}

/// Rolls the outcome and covariate recursions forward for one unit.
/// Returns `(Y_1..Y_T, X_1..X_T)`.
#[allow(clippy::too_many_arguments)]
pub fn roll_unit(
    design: &EventDesign,
    theta: &StructuralParams,
    feedback: &FeedbackModel,
    y0: f64,
    x0: &[f64],
    t0: Adoption,
    lambda: Lambda,
    eps: &[f64],
    u: &[f64],
    covariates: CovariatePath<'_>,
) -> (Vec<f64>, Vec<f64>) {
    let k = design.covariates;
    let delta = delta_path(lambda.delta0, eps, theta.rho_delta);
    let mut y = Vec::with_capacity(design.periods);
    let mut x = Vec::with_capacity(design.periods * k);
    let mut y_prev = y0;
    let mut x_t = vec![0.0; k];
    for t in 1..=design.periods {
        let active = t0.active_effect(t, design.max_event_time);
        match covariates {
            CovariatePath::Feedback(eta) => {
                let x_prev = if t == 1 {
                    x0
                } else {
                    &x[(t - 2) * k..(t - 1) * k]
                };
                feedback.mean_into(x_prev, y_prev, active, &mut x_t);
                for (xa, e) in x_t.iter_mut().zip(&eta[(t - 1) * k..t * k]) {
                    *xa += e;
                }
            }
            CovariatePath::Fixed(path) => x_t.copy_from_slice(&path[(t - 1) * k..t * k]),
        }
        let effect = active.map_or(0.0, |j| delta[j]);
        let y_t = outcome_step(theta, t, y_prev, lambda.alpha, &x_t, effect, u[t - 1]);
        x.extend_from_slice(&x_t);
        y.push(y_t);
        y_prev = y_t;
    }
    (y, x)
}

fn simulate_unit(
    cfg: &SimConfig,
    scales: &ShockScales,
    init_factor: Option<&DMatrix<f64>>,
    index: usize,
) -> (UnitObs, UnitLatent) {
    let design = cfg.design();
    let model = &cfg.model;
    let k = design.covariates;
    let mut rng = substream(cfg.seed, Domain::Panel, &[index as u64]);

    let (y0, x0) = match &cfg.initial {
        InitialLaw::Fixed { y0, x0 } => (*y0, x0.clone()),
        InitialLaw::Gaussian { mean, .. } => {
            let f = init_factor.expect("factor computed for gaussian initial law");
            let z = DVector::from_iterator(
                k + 1,
                (0..=k).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            let v = DVector::from_column_slice(mean) + f * z;
            (v[0], v.as_slice()[1..].to_vec())
        }
    };
    let t0 = cfg.cohorts.draw(y0, &mut rng);
    let shocks = UnitShocks::draw(design, &mut rng);

    let lambda = draw_lambda(model.het.mean(y0, &x0, t0), &scales.lambda, shocks.lambda);
    let eps = scales.eps(&shocks.eps);
    let eta = scales.eta(&shocks.eta);
    let u = scales.u(&shocks.u);
    let (y, x) = roll_unit(
        design,
        &model.theta,
        &model.feedback,
        y0,
        &x0,
        t0,
        lambda,
        &eps,
        &u,
        CovariatePath::Feedback(&eta),
    );
    (
        UnitObs { y0, x0, t0, y, x },
        UnitLatent {
            lambda,
            eps,
            u,
            eta,
        },
    )
}

/// Simulates a panel. Each unit uses its own substream keyed by
/// `(seed, unit index)`, so the result does not depend on the thread count.
pub fn simulate_panel(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let scales = ShockScales::new(&cfg.model)?;
    let init_factor = match &cfg.initial {
        InitialLaw::Gaussian { cov, .. } => Some(psd_factor(cov, "initial covariance")?),
        InitialLaw::Fixed { .. } => None,
    };
    let (units, latent): (Vec<_>, Vec<_>) = (0..cfg.n_units)
        .into_par_iter()
        .map(|i| simulate_unit(cfg, &scales, init_factor.as_ref(), i))
        .unzip();
    let d = cfg.design();
    Ok(SimOutput {
        panel: PanelData::new(d.periods, d.covariates, units)?,
        latent,
    })
}

/// Log of the two factors of the conditional likelihood given `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLogDensity {
    /// Product of outcome conditionals given `lambda` (effect innovations integrated out).
    pub outcome: f64,
    /// Feedback factor: product of covariate transition densities, free of `lambda`.
    pub feedback: f64,
}

impl JointLogDensity {
    pub fn total(&self) -> f64 {
        self.outcome + self.feedback
    }
}

/// Outcome block of the joint density given `lambda`:
/// `log N(Y; b + L_alpha alpha + L_delta0 delta0, sigma2_eps L_eps L_eps' + sigma2_u L_U L_U')`.
pub fn outcome_logdensity(
    unit: &UnitObs,
    lambda: Lambda,
    theta: &StructuralParams,
    design: &EventDesign,
) -> Result<f64> {
    if theta.sigma2_u <= 0.0 {
        return Err(Error::invalid(
            "sigma2_u",
            "must be positive to evaluate densities",
        ));
    }
    let l = build_loadings(theta, design, unit.y0, unit.t0, &unit.x)?;
    let mean = &l.b + &l.l_alpha * lambda.alpha + &l.l_delta0 * lambda.delta0;
    let cov = &l.l_eps * l.l_eps.transpose() * theta.sigma2_eps
        + &l.l_u * l.l_u.transpose() * theta.sigma2_u;
    let (c, _) = cholesky_jittered(&cov)?;
    Ok(gaussian_logpdf_chol(
        &DVector::from_column_slice(&unit.y),
        &mean,
        &c,
    ))
}

/// Feedback factor `sum_t log f(X_t | history)`. Has no `lambda` argument.
pub fn feedback_logdensity(
    unit: &UnitObs,
    feedback: &FeedbackModel,
    design: &EventDesign,
) -> Result<f64> {
    let k = design.covariates;
    let (c, _) = cholesky_jittered(&feedback.sigma_x)?;
    let mut m = vec![0.0; k];
    let mut total = 0.0;
    for t in 1..=design.periods {
        let active = unit.t0.active_effect(t, design.max_event_time);
        feedback.mean_into(unit.x_at(t - 1), unit.y_at(t - 1), active, &mut m);
        let x = DVector::from_column_slice(unit.x_at(t));
        total += gaussian_logpdf_chol(&x, &DVector::from_column_slice(&m), &c);
    }
    Ok(total)
}

/// Both log factors for one unit at a given `lambda`.
pub fn joint_logdensity(
    unit: &UnitObs,
    lambda: Lambda,
    theta: &StructuralParams,
    feedback: &FeedbackModel,
    design: &EventDesign,
) -> Result<JointLogDensity> {
    if unit.y.len() != design.periods || unit.x.len() != design.periods * design.covariates {
        return Err(Error::dim("unit record", design.periods, unit.y.len()));
    }
    Ok(JointLogDensity {
        outcome: outcome_logdensity(unit, lambda, theta, design)?,
        feedback: feedback_logdensity(unit, feedback, design)?,
    })
}
