//! Run configuration (TOML). Unknown keys are rejected and model dimensions
//! are never defaulted: `[design]` states `T`, `K` and `J_max`, and every
//! vector or matrix must match them.

use std::path::Path;

use dynevent::counterfactual::{InitialCondition, LambdaSource};
use dynevent::estimation::{Estimator, FitOptions, TimeEffects};
use dynevent::optim::OptimOptions;
use dynevent::simulation::{CohortLaw, InitialLaw, SimConfig};
use dynevent::{
    Adoption, EventDesign, FeedbackModel, HeterogeneityModel, StructuralModel, StructuralParams,
};
use nalgebra::{DMatrix, DVector, Matrix2};
use serde::Deserialize;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub design: DesignSection,
    pub model: Option<ModelSection>,
    pub simulate: Option<SimulateSection>,
    pub estimate: Option<EstimateSection>,
    pub scenario: Option<ScenarioSection>,
    pub montecarlo: Option<MonteCarloSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub periods: usize,
    pub covariates: usize,
    pub max_event_time: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub rho_y: f64,
    pub rho_delta: f64,
    pub beta: Vec<f64>,
    pub sigma2_u: f64,
    pub sigma2_eps: f64,
    /// Time effects `gamma_1..gamma_T`; zero when absent.
    pub gamma: Option<Vec<f64>>,
    pub heterogeneity: HeterogeneitySection,
    pub feedback: FeedbackSection,
}

/// Conditional mean coefficients on `[1, Y0, X0']`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneitySection {
    pub mean_alpha: Vec<f64>,
    pub mean_delta0: Vec<f64>,
    pub cov: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSection {
    pub a_x: Vec<Vec<f64>>,
    pub a_y: Vec<f64>,
    /// `K` rows, one column per event time `0..=J_max`.
    pub a_d: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
    pub sigma_x: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n_units: usize,
    pub seed: u64,
    pub initial: InitialSection,
    pub cohorts: CohortSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialSection {
    Fixed { y0: f64, x0: Vec<f64> },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSection {
    /// Probabilities of adoption in periods `1..T`, then of never adopting.
    pub probs: Vec<f64>,
    #[serde(default)]
    pub y0_tilt: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    #[serde(default = "defaults::starts")]
    pub starts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::ftol")]
    pub ftol: f64,
    #[serde(default = "defaults::xtol")]
    pub xtol: f64,
    #[serde(default)]
    pub time_effects: TimeEffectsKey,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            starts: defaults::starts(),
            seed: 0,
            max_iter: defaults::max_iter(),
            ftol: defaults::ftol(),
            xtol: defaults::xtol(),
            time_effects: TimeEffectsKey::Free,
        }
    }
}

mod defaults {
    use dynevent::optim::OptimOptions;

    pub fn starts() -> usize {
        3
    }
    pub fn max_iter() -> usize {
        OptimOptions::default().max_iter
    }
    pub fn ftol() -> f64 {
        OptimOptions::default().ftol
    }
    pub fn xtol() -> f64 {
        OptimOptions::default().xtol
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeEffectsKey {
    #[default]
    Free,
    Zero,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// `"observed"`, `"never"`, or a period applied to every unit.
    pub adoption: AdoptionRule,
    /// Shift of every treated unit's observed adoption date (with `adoption = "observed"`).
    #[serde(default)]
    pub shift: i64,
    pub n_draws: usize,
    pub seed: u64,
    #[serde(default)]
    pub lambda_source: LambdaSourceKey,
    /// Initial conditions for every unit; replaces the observed ones.
    pub initial: Option<ScenarioInitial>,
    /// Number of units when no data file is given.
    pub n_units: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AdoptionRule {
    Named(String),
    Period(usize),
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaSourceKey {
    #[default]
    Prior,
    Posterior,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioInitial {
    pub y0: f64,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<String>,
    pub cells: Vec<CellSection>,
}

/// A grid cell: the `[model]` and `[simulate]` laws with overrides.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSection {
    pub name: String,
    pub n_units: usize,
    pub rho_y: Option<f64>,
    pub rho_delta: Option<f64>,
    pub beta: Option<Vec<f64>>,
    pub sigma2_u: Option<f64>,
    pub sigma2_eps: Option<f64>,
    /// Loading of every covariate on the lagged outcome.
    pub a_y: Option<f64>,
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check_len(field: &str, want: usize, got: usize) -> Result<(), CliError> {
    if want == got {
        Ok(())
    } else {
        Err(cfg_err(format!(
            "`{field}` has length {got}, expected {want}"
        )))
    }
}

fn matrix(field: &str, rows: usize, cols: usize, v: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    check_len(field, rows, v.len())?;
    for (r, row) in v.iter().enumerate() {
        check_len(&format!("{field}[{r}]"), cols, row.len())?;
    }
    Ok(DMatrix::from_fn(rows, cols, |r, c| v[r][c]))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| cfg_err(format!("config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(cfg_err(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                cfg.schema_version
            )));
        }
        cfg.design()?;
        if let Some(m) = &cfg.model {
            cfg.structural_model(m)?;
        }
        if let Some(s) = &cfg.simulate {
            cfg.initial_law(&s.initial)?;
            check_len(
                "simulate.cohorts.probs",
                cfg.design.periods + 1,
                s.cohorts.probs.len(),
            )?;
        }
        Ok(cfg)
    }

    pub fn design(&self) -> Result<EventDesign, CliError> {
        let d = &self.design;
        EventDesign::new(d.periods, d.covariates, d.max_event_time)
            .map_err(|e| cfg_err(format!("design: {e}")))
    }

    pub fn section<'a, T>(&self, value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| cfg_err(format!("missing section [{name}]")))
    }

    pub fn structural_model(&self, m: &ModelSection) -> Result<StructuralModel, CliError> {
        let design = self.design()?;
        let (t, k, nj) = (design.periods, design.covariates, design.n_event_times());
        check_len("model.beta", k, m.beta.len())?;
        let gamma = match &m.gamma {
            Some(g) => {
                check_len("model.gamma", t, g.len())?;
                g.clone()
            }
            None => vec![0.0; t],
        };
        let theta = StructuralParams::new(
            m.rho_y,
            m.rho_delta,
            m.beta.clone(),
            m.sigma2_u,
            m.sigma2_eps,
            t,
        )
        .with_gamma(gamma);
        let h = &m.heterogeneity;
        check_len("model.heterogeneity.mean_alpha", 2 + k, h.mean_alpha.len())?;
        check_len(
            "model.heterogeneity.mean_delta0",
            2 + k,
            h.mean_delta0.len(),
        )?;
        let mut mean_coef = DMatrix::zeros(2, 2 + k);
        for c in 0..2 + k {
            mean_coef[(0, c)] = h.mean_alpha[c];
            mean_coef[(1, c)] = h.mean_delta0[c];
        }
        let het = HeterogeneityModel {
            mean_coef,
            cov: Matrix2::new(h.cov[0][0], h.cov[0][1], h.cov[1][0], h.cov[1][1]),
            cohorts: Default::default(),
        };
        let f = &m.feedback;
        check_len("model.feedback.a_y", k, f.a_y.len())?;
        check_len("model.feedback.intercept", k, f.intercept.len())?;
        let feedback = FeedbackModel {
            a_x: matrix("model.feedback.a_x", k, k, &f.a_x)?,
            a_y: DVector::from_column_slice(&f.a_y),
            a_d: matrix("model.feedback.a_d", k, nj, &f.a_d)?,
            intercept: DVector::from_column_slice(&f.intercept),
            sigma_x: matrix("model.feedback.sigma_x", k, k, &f.sigma_x)?,
        };
        let model = StructuralModel {
            design,
            theta,
            het,
            feedback,
        };
        model
            .validate()
            .map_err(|e| cfg_err(format!("model: {e}")))?;
        Ok(model)
    }

    fn initial_law(&self, s: &InitialSection) -> Result<InitialLaw, CliError> {
        let k = self.design.covariates;
        Ok(match s {
            InitialSection::Fixed { y0, x0 } => {
                check_len("simulate.initial.x0", k, x0.len())?;
                InitialLaw::Fixed {
                    y0: *y0,
                    x0: x0.clone(),
                }
            }
            InitialSection::Gaussian { mean, cov } => {
                check_len("simulate.initial.mean", k + 1, mean.len())?;
                InitialLaw::Gaussian {
                    mean: mean.clone(),
                    cov: matrix("simulate.initial.cov", k + 1, k + 1, cov)?,
                }
            }
        })
    }

    /// Simulation configuration with the given number of units and seed.
    pub fn sim_config(&self, n_units: usize, seed: u64) -> Result<SimConfig, CliError> {
        let model = self.structural_model(self.section(&self.model, "model")?)?;
        let s = self.section(&self.simulate, "simulate")?;
        let cfg = SimConfig {
            n_units,
            model,
            initial: self.initial_law(&s.initial)?,
            cohorts: CohortLaw {
                probs: s.cohorts.probs.clone(),
                y0_tilt: s.cohorts.y0_tilt,
            },
            seed,
        };
        cfg.validate()
            .map_err(|e| cfg_err(format!("simulate: {e} (field `N` is simulate.n_units)")))?;
        Ok(cfg)
    }

    pub fn fit_options(&self, seed_override: Option<u64>) -> FitOptions {
        let e = self.estimate.clone().unwrap_or_default();
        FitOptions {
            start: None,
            starts: e.starts.max(1),
            seed: seed_override.unwrap_or(e.seed),
            time_effects: match e.time_effects {
                TimeEffectsKey::Free => TimeEffects::Free,
                TimeEffectsKey::Zero => TimeEffects::Zero,
            },
            optim: OptimOptions {
                max_iter: e.max_iter,
                ftol: e.ftol,
                xtol: e.xtol,
                ..OptimOptions::default()
            },
            ..FitOptions::default()
        }
    }
}

impl ScenarioSection {
    pub fn lambda_source(&self) -> LambdaSource {
        match self.lambda_source {
            LambdaSourceKey::Prior => LambdaSource::Prior,
            LambdaSourceKey::Posterior => LambdaSource::Posterior,
        }
    }

    /// Counterfactual adoption dates given the observed ones, if any.
    pub fn adoption(
        &self,
        design: &EventDesign,
        observed: Option<&[Adoption]>,
        n: usize,
    ) -> Result<Vec<Adoption>, CliError> {
        let rule = match &self.adoption {
            AdoptionRule::Named(s) => s.as_str(),
            AdoptionRule::Period(p) => {
                if *p == 0 || *p > design.periods {
                    return Err(cfg_err(format!(
                        "scenario.adoption: period {p} outside 1..={}",
                        design.periods
                    )));
                }
                if self.shift != 0 {
                    return Err(cfg_err(
                        "scenario.shift applies only to adoption = \"observed\"",
                    ));
                }
                return Ok(vec![Adoption::Period(*p); n]);
            }
        };
        match rule {
            "never" => {
                if self.shift != 0 {
                    return Err(cfg_err("scenario.shift applies only to adoption = \"observed\""));
                }
                Ok(vec![Adoption::Never; n])
            }
            "observed" => {
                let observed = observed.ok_or_else(|| cfg_err("scenario.adoption = \"observed\" needs --data"))?;
                observed
                    .iter()
                    .map(|a| match a {
                        Adoption::Never => Ok(Adoption::Never),
                        Adoption::Period(p) => {
                            let q = *p as i64 + self.shift;
                            if q < 1 || q > design.periods as i64 {
                                Err(cfg_err(format!("scenario.shift moves adoption {p} outside 1..={}", design.periods)))
                            } else {
                                Ok(Adoption::Period(q as usize))
                            }
                        }
                    })
                    .collect()
            }
            other => Err(cfg_err(format!(
                "scenario.adoption: unknown rule `{other}` (expected \"observed\", \"never\" or a period)"
            ))),
        }
    }

    pub fn initial(
        &self,
        design: &EventDesign,
        n: usize,
    ) -> Result<Option<Vec<InitialCondition>>, CliError> {
        match &self.initial {
            None => Ok(None),
            Some(s) => {
                check_len("scenario.initial.x0", design.covariates, s.x0.len())?;
                Ok(Some(vec![
                    InitialCondition {
                        y0: s.y0,
                        x0: s.x0.clone()
                    };
                    n
                ]))
            }
        }
    }
}

impl MonteCarloSection {
    pub fn estimators(&self) -> Result<Vec<Estimator>, CliError> {
        if self.estimators.is_empty() {
            return Err(cfg_err("montecarlo.estimators is empty"));
        }
        self.estimators
            .iter()
            .map(|e| match e.as_str() {
                "likelihood" => Ok(Estimator::Likelihood),
                "naive" => Ok(Estimator::Naive),
                other => Err(cfg_err(format!(
                    "montecarlo.estimators: unknown estimator `{other}` (expected \"likelihood\" or \"naive\")"
                ))),
            })
            .collect()
    }
}

impl CellSection {
    pub fn apply(&self, base: &SimConfig) -> Result<SimConfig, CliError> {
        let mut cfg = base.clone();
        cfg.n_units = self.n_units;
        let th = &mut cfg.model.theta;
        if let Some(v) = self.rho_y {
            th.rho_y = v;
        }
        if let Some(v) = self.rho_delta {
            th.rho_delta = v;
        }
        if let Some(v) = &self.beta {
            check_len(
                &format!("montecarlo.cells[{}].beta", self.name),
                th.beta.len(),
                v.len(),
            )?;
            th.beta = v.clone();
        }
        if let Some(v) = self.sigma2_u {
            th.sigma2_u = v;
        }
        if let Some(v) = self.sigma2_eps {
            th.sigma2_eps = v;
        }
        if let Some(v) = self.a_y {
            cfg.model.feedback.a_y.fill(v);
        }
        cfg.validate().map_err(|e| {
            cfg_err(format!(
                "montecarlo cell `{}`: {e} (field `N` is n_units)",
                self.name
            ))
        })?;
        Ok(cfg)
    }
}
