//! Counterfactual paths under alternative adoption dates or initial
//! conditions, and the direct/indirect decomposition of event-study
//! responses.
//!
//! Each `(unit, draw)` pair owns one random stream; every arm of a
//! decomposition replays that stream, so the arms share `lambda`, the effect
//! innovations, the outcome shocks and the covariate innovations.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihood::lambda_posterior;
use crate::model::{Adoption, EventDesign, PanelData, StructuralModel, UnitObs};
use crate::rng::{substream, Domain};
use crate::simulation::{
    draw_lambda, lambda_factor, roll_unit, CovariatePath, ShockScales, UnitShocks,
};

/// Where `lambda` is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaSource {
    /// The heterogeneity law given the counterfactual initial conditions.
    #[default]
    Prior,
    /// The unit's posterior given its observed path.
    Posterior,
}

/// Initial conditions `(Y0, X0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub y0: f64,
    pub x0: Vec<f64>,
}

/// Units a scenario starts from.
#[derive(Debug, Clone, Copy)]
pub enum Baseline<'a> {
    /// Observed panel: supplies initial conditions and, for posterior draws,
    /// the observed paths.
    Observed(&'a PanelData),
    /// Initial conditions only.
    Initial(&'a [InitialCondition]),
}

impl Baseline<'_> {
    fn n_units(&self) -> usize {
        match self {
            Baseline::Observed(p) => p.n_units(),
            Baseline::Initial(v) => v.len(),
        }
    }

    fn initial(&self, i: usize) -> (f64, &[f64]) {
        match self {
            Baseline::Observed(p) => (p.units[i].y0, &p.units[i].x0),
            Baseline::Initial(v) => (v[i].y0, &v[i].x0),
        }
    }

    fn observed(&self, i: usize) -> Option<&UnitObs> {
        match self {
            Baseline::Observed(p) => Some(&p.units[i]),
            Baseline::Initial(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Counterfactual adoption date per unit.
    pub t0_star: Vec<Adoption>,
    /// Optional per-unit replacement of the initial conditions.
    pub init_star: Option<Vec<InitialCondition>>,
    pub n_draws: usize,
    pub seed: u64,
    pub lambda_source: LambdaSource,
}

impl Scenario {
    /// Every unit keeps the given adoption dates, prior draws, no overrides.
    pub fn with_adoption(t0_star: Vec<Adoption>, n_draws: usize, seed: u64) -> Self {
        Self {
            t0_star,
            init_star: None,
            n_draws,
            seed,
            lambda_source: LambdaSource::Prior,
        }
    }

    fn validate(&self, design: &EventDesign, baseline: &Baseline<'_>) -> Result<()> {
        let n = baseline.n_units();
        if self.n_draws == 0 {
            return Err(Error::invalid("n_draws", "must be at least 1"));
        }
        if self.t0_star.len() != n {
            return Err(Error::dim("scenario t0_star", n, self.t0_star.len()));
        }
        for t0 in &self.t0_star {
            design.validate_adoption(*t0)?;
        }
        if let Some(init) = &self.init_star {
            if init.len() != n {
                return Err(Error::dim("scenario init_star", n, init.len()));
            }
            for c in init {
                if c.x0.len() != design.covariates {
                    return Err(Error::dim(
                        "scenario init_star x0",
                        design.covariates,
                        c.x0.len(),
                    ));
                }
            }
        }
        for i in 0..n {
            let x0 = baseline.initial(i).1;
            if x0.len() != design.covariates {
                return Err(Error::dim("baseline x0", design.covariates, x0.len()));
            }
        }
        if self.lambda_source == LambdaSource::Posterior {
            let Baseline::Observed(panel) = baseline else {
                return Err(Error::invalid(
                    "lambda_source",
                    "posterior draws need the observed panel",
                ));
            };
            panel.check_design(design)?;
        }
        Ok(())
    }

    fn initial<'a>(&'a self, baseline: &'a Baseline<'a>, i: usize) -> (f64, &'a [f64]) {
        match &self.init_star {
            Some(v) => (v[i].y0, &v[i].x0),
            None => baseline.initial(i),
        }
    }
}

/// Simulated paths, stored unit by unit and draw by draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPaths {
    pub n_units: usize,
    pub n_draws: usize,
    pub periods: usize,
    pub covariates: usize,
    /// `Y*_1..Y*_T` for each `(unit, draw)`.
    pub y: Vec<f64>,
    /// `X*_1..X*_T` (row-major `T x K`) for each `(unit, draw)`.
    pub x: Vec<f64>,
}

impl ScenarioPaths {
    pub fn y_path(&self, unit: usize, draw: usize) -> &[f64] {
        let o = (unit * self.n_draws + draw) * self.periods;
        &self.y[o..o + self.periods]
    }

    pub fn x_path(&self, unit: usize, draw: usize) -> &[f64] {
        let w = self.periods * self.covariates;
        let o = (unit * self.n_draws + draw) * w;
        &self.x[o..o + w]
    }

    /// Mean outcome per calendar period over all units and draws.
    pub fn mean_y(&self) -> Vec<f64> {
        let n = (self.n_units * self.n_draws) as f64;
        let mut m = vec![0.0; self.periods];
        for path in self.y.chunks_exact(self.periods) {
            for (a, v) in m.iter_mut().zip(path) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Mean covariates per calendar period (row-major `T x K`).
    pub fn mean_x(&self) -> Vec<f64> {
        let n = (self.n_units * self.n_draws) as f64;
        let w = self.periods * self.covariates;
        let mut m = vec![0.0; w];
        for path in self.x.chunks_exact(w.max(1)) {
            for (a, v) in m.iter_mut().zip(path) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// Law of `lambda` for one unit: mean and a square-root factor.
fn lambda_law(
    model: &StructuralModel,
    scales: &ShockScales,
    scenario: &Scenario,
    baseline: &Baseline<'_>,
    i: usize,
) -> Result<(Vector2<f64>, Matrix2<f64>)> {
    match scenario.lambda_source {
        LambdaSource::Prior => {
            let (y0, x0) = scenario.initial(baseline, i);
            Ok((model.het.mean(y0, x0, scenario.t0_star[i]), scales.lambda))
        }
        LambdaSource::Posterior => {
            let unit = baseline
                .observed(i)
                .expect("validated: posterior needs observations");
            let post = lambda_posterior(&model.theta, &model.het, &model.design, unit)?;
            let cov = nalgebra::DMatrix::from_column_slice(2, 2, post.cov.as_slice());
            Ok((post.mean, lambda_factor(&cov)?))
        }
    }
}

/// Scaled shocks of one `(unit, draw)` stream.
struct Draw {
    lambda: crate::model::Lambda,
    eps: Vec<f64>,
    u: Vec<f64>,
    eta: Vec<f64>,
}

fn draw(
    design: &EventDesign,
    scales: &ShockScales,
    law: &(Vector2<f64>, Matrix2<f64>),
    seed: u64,
    i: usize,
    d: usize,
) -> Draw {
    let mut rng = substream(seed, Domain::Counterfactual, &[i as u64, d as u64]);
    let shocks = UnitShocks::draw(design, &mut rng);
    Draw {
        lambda: draw_lambda(law.0, &law.1, shocks.lambda),
        eps: scales.eps(&shocks.eps),
        u: scales.u(&shocks.u),
        eta: scales.eta(&shocks.eta),
    }
}

fn check_model(model: &StructuralModel) -> Result<ShockScales> {
    model.validate()?;
    ShockScales::new(model)
}

/// Simulates counterfactual paths: set the initial conditions, draw
/// `lambda`, roll the effect path forward in event time, then for each
/// period draw the covariates from the feedback law before the outcome
/// shock and form the outcome.
pub fn simulate_scenario(
    model: &StructuralModel,
    baseline: Baseline<'_>,
    scenario: &Scenario,
) -> Result<ScenarioPaths> {
    let design = &model.design;
    let scales = check_model(model)?;
    scenario.validate(design, &baseline)?;
    let n = baseline.n_units();
    let per_unit: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>)> {
            let law = lambda_law(model, &scales, scenario, &baseline, i)?;
            let (y0, x0) = scenario.initial(&baseline, i);
            let mut ys = Vec::with_capacity(scenario.n_draws * design.periods);
            let mut xs = Vec::with_capacity(scenario.n_draws * design.periods * design.covariates);
            for d in 0..scenario.n_draws {
                let s = draw(design, &scales, &law, scenario.seed, i, d);
                let (y, x) = roll_unit(
                    design,
                    &model.theta,
                    &model.feedback,
                    y0,
                    x0,
                    scenario.t0_star[i],
                    s.lambda,
                    &s.eps,
                    &s.u,
                    CovariatePath::Feedback(&s.eta),
                );
                ys.extend_from_slice(&y);
                xs.extend_from_slice(&x);
            }
            Ok((ys, xs))
        })
        .collect::<Result<Vec<_>>>()?;
    let (y, x): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per_unit.into_iter().unzip();
    Ok(ScenarioPaths {
        n_units: n,
        n_draws: scenario.n_draws,
        periods: design.periods,
        covariates: design.covariates,
        y: y.concat(),
        x: x.concat(),
    })
}

/// Mean effects at one calendar period or event time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectRow {
    /// Calendar period `t` or event time `j`.
    pub index: isize,
    /// Number of `(unit, draw)` pairs averaged.
    pub n: usize,
    pub total: f64,
    pub direct: f64,
    pub indirect: f64,
    pub se_total: f64,
    pub se_direct: f64,
    pub se_indirect: f64,
}

/// Per-draw effects of one `(unit, draw)` pair over calendar time.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawLedger {
    pub unit: usize,
    pub draw: usize,
    pub total: Vec<f64>,
    pub direct: Vec<f64>,
    pub indirect: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub n_units: usize,
    pub n_draws: usize,
    pub seed: u64,
    /// Rows for `t = 1..T`.
    pub calendar: Vec<EffectRow>,
    /// Rows for every event time observed among treated units, ascending.
    pub event_time: Vec<EffectRow>,
    pub draws: Option<Vec<DrawLedger>>,
}

/// Arm definitions, recorded with exported results.
pub const ARM_DEFINITIONS: [(&str, &str); 3] = [
    (
        "A",
        "scenario adoption date, covariates drawn from the feedback law",
    ),
    ("B", "never treated, covariates drawn from the feedback law"),
    (
        "C",
        "scenario adoption date, covariates fixed at arm B's path",
    ),
];

/// Effect definitions: `direct = C - B`, `indirect = A - C`,
/// `total = direct + indirect` (equal to `A - B` up to rounding).
pub const EFFECT_DEFINITIONS: [(&str, &str); 3] = [
    ("direct", "Y(C) - Y(B)"),
    ("indirect", "Y(A) - Y(C)"),
    ("total", "direct + indirect = Y(A) - Y(B)"),
];

/// Running mean and sum of squared deviations, merged in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64;
        self.n = n;
    }

    fn se(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Triple {
    total: Moments,
    direct: Moments,
    indirect: Moments,
}

impl Triple {
    fn merge(&mut self, o: &Triple) {
        self.total.merge(&o.total);
        self.direct.merge(&o.direct);
        self.indirect.merge(&o.indirect);
    }

    fn row(&self, index: isize) -> EffectRow {
        EffectRow {
            index,
            n: self.total.n,
            total: self.total.mean,
            direct: self.direct.mean,
            indirect: self.indirect.mean,
            se_total: self.total.se(),
            se_direct: self.direct.se(),
            se_indirect: self.indirect.se(),
        }
    }
}

struct UnitSummary {
    calendar: Vec<Triple>,
    ledger: Vec<DrawLedger>,
}

/// Three-arm decomposition with common random numbers. Arms share the
/// `lambda` draw, taken from the heterogeneity law given the scenario's
/// initial conditions and adoption date (or from the posterior), so
/// effects before adoption are exactly zero.
pub fn decompose(
    model: &StructuralModel,
    baseline: Baseline<'_>,
    scenario: &Scenario,
    keep_draws: bool,
) -> Result<DecompositionResult> {
    let design = &model.design;
    let t_len = design.periods;
    let scales = check_model(model)?;
    scenario.validate(design, &baseline)?;
    let n = baseline.n_units();

    let summaries: Vec<UnitSummary> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<UnitSummary> {
            let law = lambda_law(model, &scales, scenario, &baseline, i)?;
            let (y0, x0) = scenario.initial(&baseline, i);
            let t0 = scenario.t0_star[i];
            let mut calendar = vec![Triple::default(); t_len];
            let mut ledger = Vec::new();
            for d in 0..scenario.n_draws {
                let s = draw(design, &scales, &law, scenario.seed, i, d);
                let roll = |t0: Adoption, cov: CovariatePath<'_>| {
                    roll_unit(
                        design,
                        &model.theta,
                        &model.feedback,
                        y0,
                        x0,
                        t0,
                        s.lambda,
                        &s.eps,
                        &s.u,
                        cov,
                    )
                };
                let (ya, _) = roll(t0, CovariatePath::Feedback(&s.eta));
                let (yb, xb) = roll(Adoption::Never, CovariatePath::Feedback(&s.eta));
                let (yc, _) = roll(t0, CovariatePath::Fixed(&xb));
                let direct: Vec<f64> = yc.iter().zip(&yb).map(|(c, b)| c - b).collect();
                let indirect: Vec<f64> = ya.iter().zip(&yc).map(|(a, c)| a - c).collect();
                let total: Vec<f64> = direct.iter().zip(&indirect).map(|(a, b)| a + b).collect();
                for t in 0..t_len {
                    calendar[t].total.push(total[t]);
                    calendar[t].direct.push(direct[t]);
                    calendar[t].indirect.push(indirect[t]);
                }
                if keep_draws {
                    ledger.push(DrawLedger {
                        unit: i,
                        draw: d,
                        total,
                        direct,
                        indirect,
                    });
                }
            }
            Ok(UnitSummary { calendar, ledger })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut calendar = vec![Triple::default(); t_len];
    let span = t_len as isize;
    // event times -(T-1)..=(T-1) indexed from zero
    let mut event = vec![Triple::default(); 2 * t_len - 1];
    for (i, s) in summaries.iter().enumerate() {
        for t in 0..t_len {
            calendar[t].merge(&s.calendar[t]);
        }
        if let Adoption::Period(p) = scenario.t0_star[i] {
            for t in 0..t_len {
                let j = (t + 1) as isize - p as isize;
                event[(j + span - 1) as usize].merge(&s.calendar[t]);
            }
        }
    }
    let event_time = event
        .iter()
        .enumerate()
        .filter(|(_, tr)| tr.total.n > 0)
        .map(|(e, tr)| tr.row(e as isize - span + 1))
        .collect();
    Ok(DecompositionResult {
        n_units: n,
        n_draws: scenario.n_draws,
        seed: scenario.seed,
        calendar: calendar
            .iter()
            .enumerate()
            .map(|(t, tr)| tr.row(t as isize + 1))
            .collect(),
        event_time,
        draws: keep_draws.then(|| summaries.into_iter().flat_map(|s| s.ledger).collect()),
    })
}
