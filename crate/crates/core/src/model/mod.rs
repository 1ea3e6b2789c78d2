//! Domain types for the dynamic event-study model and the closed-form
//! treatment-effect path.
//!
//! Outcomes follow
//! `Y_t = rho_y Y_{t-1} + alpha + X_t' beta + gamma_t + sum_j D_t^j delta_j + U_t`
//! with `delta_j = rho_delta delta_{j-1} + eps_j` in event time. Event times
//! are `0..=max_event_time`; the effect is zero outside that window.

mod loadings;
mod transform;

pub use loadings::{build_loadings, mean_offset, StructuralLoadings, UnitLoadings};
pub use transform::{normalize_time_effects, GammaMode, ParamLayout};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};

/// Treatment adoption date of a unit. `Never` is the sentinel for `t0 > T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Adoption {
    Period(usize),
    Never,
}

impl Adoption {
    /// On-disk code: the period, or 0 for never treated.
    pub fn code(self) -> usize {
        match self {
            Adoption::Period(p) => p,
            Adoption::Never => 0,
        }
    }

    pub fn from_code(code: usize) -> Self {
        if code == 0 {
            Adoption::Never
        } else {
            Adoption::Period(code)
        }
    }

    pub fn is_treated(self) -> bool {
        matches!(self, Adoption::Period(_))
    }

    /// Calendar period `t` (1-based) minus the adoption date.
    pub fn event_time(self, t: usize) -> Option<isize> {
        match self {
            Adoption::Period(p) => Some(t as isize - p as isize),
            Adoption::Never => None,
        }
    }

    /// Active event-time index `j` at calendar period `t`, if `0 <= j <= max_event_time`.
    #[inline]
    pub fn active_effect(self, t: usize, max_event_time: usize) -> Option<usize> {
        match self {
            Adoption::Period(p) if t >= p && t - p <= max_event_time => Some(t - p),
            _ => None,
        }
    }
}

impl std::fmt::Display for Adoption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Adoption::Period(p) => write!(f, "{p}"),
            Adoption::Never => f.write_str("never"),
        }
    }
}

/// Panel dimensions and the event-time window `{0, ..., max_event_time}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventDesign {
    pub periods: usize,
    pub covariates: usize,
    pub max_event_time: usize,
}

impl EventDesign {
    pub fn new(periods: usize, covariates: usize, max_event_time: usize) -> Result<Self> {
        if periods == 0 {
            return Err(Error::invalid("periods", "must be at least 1"));
        }
        if covariates == 0 {
            return Err(Error::invalid("covariates", "must be at least 1"));
        }
        Ok(Self {
            periods,
            covariates,
            max_event_time,
        })
    }

    /// Number of event-time indicators `|J|`.
    pub fn n_event_times(&self) -> usize {
        self.max_event_time + 1
    }

    pub fn validate_adoption(&self, t0: Adoption) -> Result<()> {
        match t0 {
            Adoption::Period(p) if p == 0 || p > self.periods => Err(Error::invalid(
                "t0",
                format!("adoption period {p} outside 1..={}", self.periods),
            )),
            _ => Ok(()),
        }
    }
}

/// Common structural parameters `(rho_y, rho_delta, beta, sigma2_u, sigma2_eps)`
/// and additive time effects.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralParams {
    pub rho_y: f64,
    pub rho_delta: f64,
    pub beta: Vec<f64>,
    pub sigma2_u: f64,
    pub sigma2_eps: f64,
    /// One entry per period; zeros when time effects are absent.
    pub gamma: Vec<f64>,
}

impl StructuralParams {
    pub fn new(
        rho_y: f64,
        rho_delta: f64,
        beta: Vec<f64>,
        sigma2_u: f64,
        sigma2_eps: f64,
        periods: usize,
    ) -> Self {
        Self {
            rho_y,
            rho_delta,
            beta,
            sigma2_u,
            sigma2_eps,
            gamma: vec![0.0; periods],
        }
    }

    pub fn with_gamma(mut self, gamma: Vec<f64>) -> Self {
        self.gamma = gamma;
        self
    }

    /// Checks dimensions and finiteness. Zero variances are allowed here
    /// (deterministic fixtures); the likelihood imposes `sigma2_u > 0`.
    pub fn validate(&self, design: &EventDesign) -> Result<()> {
        if self.beta.len() != design.covariates {
            return Err(Error::dim("beta", design.covariates, self.beta.len()));
        }
        if self.gamma.len() != design.periods {
            return Err(Error::dim("gamma", design.periods, self.gamma.len()));
        }
        let scalars = [self.rho_y, self.rho_delta, self.sigma2_u, self.sigma2_eps];
        if scalars
            .iter()
            .chain(&self.beta)
            .chain(&self.gamma)
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("theta", "non-finite entry"));
        }
        if self.sigma2_u < 0.0 {
            return Err(Error::invalid("sigma2_u", "must be non-negative"));
        }
        if self.sigma2_eps < 0.0 {
            return Err(Error::invalid("sigma2_eps", "must be non-negative"));
        }
        Ok(())
    }
}

/// Unit heterogeneity `lambda_i = (alpha_i, delta_i0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambda {
    pub alpha: f64,
    pub delta0: f64,
}

impl Lambda {
    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.alpha, self.delta0)
    }
}

/// Cohort dummy columns of the heterogeneity regressors. Units whose adoption
/// date is not listed belong to the baseline cohort.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CohortCoding {
    pub levels: Vec<Adoption>,
}

impl CohortCoding {
    pub fn new(levels: Vec<Adoption>) -> Self {
        Self { levels }
    }

    /// One dummy per observed adoption date except the earliest treated
    /// cohort, which is the baseline absorbed by the intercept.
    pub fn from_adoptions(adoptions: impl IntoIterator<Item = Adoption>) -> Result<Self> {
        let mut levels: Vec<Adoption> = adoptions.into_iter().collect();
        levels.sort();
        levels.dedup();
        let baseline = levels
            .iter()
            .position(|a| a.is_treated())
            .ok_or_else(|| Error::DegenerateDesign("no treated unit in the panel".into()))?;
        levels.remove(baseline);
        Ok(Self { levels })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn never_column(&self) -> Option<usize> {
        self.levels.iter().position(|a| *a == Adoption::Never)
    }
}

/// Gaussian correlated random effects: `lambda | I0 ~ N(M r(I0), Sigma_lambda)`
/// with regressors `r = [1, Y0, X0', cohort dummies]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneityModel {
    /// 2 x (2 + K + C); row 0 is alpha, row 1 is delta0.
    pub mean_coef: DMatrix<f64>,
    pub cov: Matrix2<f64>,
    pub cohorts: CohortCoding,
}

impl HeterogeneityModel {
    pub fn n_regressors(covariates: usize, cohorts: &CohortCoding) -> usize {
        2 + covariates + cohorts.len()
    }

    /// Mean depends on nothing but the intercepts.
    pub fn constant(alpha: f64, delta0: f64, cov: Matrix2<f64>, covariates: usize) -> Self {
        let mut mean_coef = DMatrix::zeros(2, 2 + covariates);
        mean_coef[(0, 0)] = alpha;
        mean_coef[(1, 0)] = delta0;
        Self {
            mean_coef,
            cov,
            cohorts: CohortCoding::default(),
        }
    }

    pub fn validate(&self, design: &EventDesign) -> Result<()> {
        let p = Self::n_regressors(design.covariates, &self.cohorts);
        if self.mean_coef.nrows() != 2 {
            return Err(Error::dim(
                "heterogeneity mean_coef rows",
                2,
                self.mean_coef.nrows(),
            ));
        }
        if self.mean_coef.ncols() != p {
            return Err(Error::dim(
                "heterogeneity mean_coef columns",
                p,
                self.mean_coef.ncols(),
            ));
        }
        if self.mean_coef.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "heterogeneity mean_coef",
                "non-finite entry",
            ));
        }
        for a in &self.cohorts.levels {
            design.validate_adoption(*a)?;
        }
        let cov = DMatrix::from_column_slice(2, 2, self.cov.as_slice());
        crate::linalg::psd_factor(&cov, "heterogeneity covariance")?;
        Ok(())
    }

    pub fn regressors(&self, y0: f64, x0: &[f64], t0: Adoption) -> DVector<f64> {
        let k = x0.len();
        let mut r = DVector::zeros(2 + k + self.cohorts.len());
        self.fill_regressors(y0, x0, t0, r.as_mut_slice());
        r
    }

    pub(crate) fn fill_regressors(&self, y0: f64, x0: &[f64], t0: Adoption, out: &mut [f64]) {
        let k = x0.len();
        out[0] = 1.0;
        out[1] = y0;
        out[2..2 + k].copy_from_slice(x0);
        for (c, level) in self.cohorts.levels.iter().enumerate() {
            out[2 + k + c] = if *level == t0 { 1.0 } else { 0.0 };
        }
    }

    /// Conditional mean `E[lambda | I0]`.
    pub fn mean(&self, y0: f64, x0: &[f64], t0: Adoption) -> Vector2<f64> {
        let m = &self.mean_coef * self.regressors(y0, x0, t0);
        Vector2::new(m[0], m[1])
    }
}

/// First-order linear-Gaussian covariate transition
/// `X_t = c + A X_{t-1} + a_y Y_{t-1} + a_d D_t + eta_t`, `eta_t ~ N(0, Sigma_X)`.
/// Heterogeneity never enters, so the feedback is homogeneous across units.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackModel {
    pub a_x: DMatrix<f64>,
    pub a_y: DVector<f64>,
    /// K x |J|, loadings on the current event-time indicators.
    pub a_d: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
}

impl FeedbackModel {
    /// Independent AR(1) covariates with no outcome or treatment feedback.
    pub fn exogenous(design: &EventDesign, persistence: f64, variance: f64) -> Self {
        let k = design.covariates;
        Self {
            a_x: DMatrix::identity(k, k) * persistence,
            a_y: DVector::zeros(k),
            a_d: DMatrix::zeros(k, design.n_event_times()),
            intercept: DVector::zeros(k),
            sigma_x: DMatrix::identity(k, k) * variance,
        }
    }

    pub fn validate(&self, design: &EventDesign) -> Result<()> {
        let k = design.covariates;
        let checks = [
            ("feedback a_x rows", k, self.a_x.nrows()),
            ("feedback a_x columns", k, self.a_x.ncols()),
            ("feedback a_y", k, self.a_y.len()),
            ("feedback a_d rows", k, self.a_d.nrows()),
            (
                "feedback a_d columns",
                design.n_event_times(),
                self.a_d.ncols(),
            ),
            ("feedback intercept", k, self.intercept.len()),
            ("feedback sigma_x rows", k, self.sigma_x.nrows()),
            ("feedback sigma_x columns", k, self.sigma_x.ncols()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::dim(what, expected, got));
            }
        }
        let all = self
            .a_x
            .iter()
            .chain(self.a_y.iter())
            .chain(self.a_d.iter())
            .chain(self.intercept.iter());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feedback", "non-finite coefficient"));
        }
        crate::linalg::psd_factor(&self.sigma_x, "feedback sigma_x")?;
        Ok(())
    }

    /// Conditional mean of `X_t` given the previous state and the active
    /// event-time index at `t`.
    pub fn mean_into(&self, x_prev: &[f64], y_prev: f64, effect: Option<usize>, out: &mut [f64]) {
        let k = out.len();
        for (a, o) in out.iter_mut().enumerate() {
            let mut m = self.intercept[a];
            for b in 0..k {
                m += self.a_x[(a, b)] * x_prev[b];
            }
            m += self.a_y[a] * y_prev;
            if let Some(j) = effect {
                m += self.a_d[(a, j)];
            }
            *o = m;
        }
    }

    /// Whether covariates respond to past outcomes or treatment at all.
    pub fn has_feedback(&self) -> bool {
        self.a_y.iter().any(|v| *v != 0.0) || self.a_d.iter().any(|v| *v != 0.0)
    }
}

/// Observed record of one unit: initial conditions, adoption date, paths.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitObs {
    pub y0: f64,
    pub x0: Vec<f64>,
    pub t0: Adoption,
    /// `Y_1..Y_T`.
    pub y: Vec<f64>,
    /// `X_1..X_T`, row-major `T x K`.
    pub x: Vec<f64>,
}

impl UnitObs {
    /// Covariates at calendar period `t` (1-based); `t = 0` gives `X0`.
    #[inline]
    pub fn x_at(&self, t: usize) -> &[f64] {
        let k = self.x0.len();
        if t == 0 {
            &self.x0
        } else {
            &self.x[(t - 1) * k..t * k]
        }
    }

    /// Outcome at calendar period `t` (1-based); `t = 0` gives `Y0`.
    #[inline]
    pub fn y_at(&self, t: usize) -> f64 {
        if t == 0 {
            self.y0
        } else {
            self.y[t - 1]
        }
    }
}

/// Rectangular panel, all units sharing `T` and `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    pub periods: usize,
    pub covariates: usize,
    pub units: Vec<UnitObs>,
}

impl PanelData {
    pub fn new(periods: usize, covariates: usize, units: Vec<UnitObs>) -> Result<Self> {
        let panel = Self {
            periods,
            covariates,
            units,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::InsufficientData("panel has no units".into()));
        }
        if self.periods == 0 || self.covariates == 0 {
            return Err(Error::invalid(
                "panel",
                "periods and covariates must be positive",
            ));
        }
        let (t, k) = (self.periods, self.covariates);
        for (i, u) in self.units.iter().enumerate() {
            if u.y.len() != t {
                return Err(Error::dim(format!("unit {i} outcome path"), t, u.y.len()));
            }
            if u.x.len() != t * k {
                return Err(Error::dim(
                    format!("unit {i} covariate path"),
                    t * k,
                    u.x.len(),
                ));
            }
            if u.x0.len() != k {
                return Err(Error::dim(
                    format!("unit {i} initial covariates"),
                    k,
                    u.x0.len(),
                ));
            }
            if let Adoption::Period(p) = u.t0 {
                if p == 0 || p > t {
                    return Err(Error::invalid(
                        format!("unit {i} t0"),
                        format!("{p} outside 1..={t}"),
                    ));
                }
            }
            let finite = std::iter::once(u.y0)
                .chain(u.x0.iter().copied())
                .chain(u.y.iter().copied())
                .chain(u.x.iter().copied())
                .all(f64::is_finite);
            if !finite {
                return Err(Error::invalid(format!("unit {i}"), "non-finite value"));
            }
        }
        Ok(())
    }

    pub fn check_design(&self, design: &EventDesign) -> Result<()> {
        if self.periods != design.periods {
            return Err(Error::dim("panel periods", design.periods, self.periods));
        }
        if self.covariates != design.covariates {
            return Err(Error::dim(
                "panel covariates",
                design.covariates,
                self.covariates,
            ));
        }
        Ok(())
    }

    pub fn has_treated(&self) -> bool {
        self.units.iter().any(|u| u.t0.is_treated())
    }
}

/// Everything needed to generate outcomes and covariates forward in time.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralModel {
    pub design: EventDesign,
    pub theta: StructuralParams,
    pub het: HeterogeneityModel,
    pub feedback: FeedbackModel,
}

impl StructuralModel {
    pub fn validate(&self) -> Result<()> {
        self.theta.validate(&self.design)?;
        self.het.validate(&self.design)?;
        self.feedback.validate(&self.design)
    }
}

/// Effect path `(delta_0, ..., delta_J)` from `delta_j = rho delta_{j-1} + eps_j`.
pub fn delta_path(delta0: f64, eps: &[f64], rho_delta: f64) -> Vec<f64> {
    let mut path = Vec::with_capacity(eps.len() + 1);
    path.push(delta0);
    let mut d = delta0;
    for e in eps {
        d = rho_delta * d + e;
        path.push(d);
    }
    path
}
