//! Monte Carlo harness: repeated simulate-and-estimate over a grid of DGPs.

use rayon::prelude::*;

use super::{fit_naive, fit_outcome_model, standard_errors, FitOptions};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Domain};
use crate::simulation::{simulate_panel, SimConfig};

/// Normal quantile for two-sided 95% intervals.
const Z_95: f64 = 1.959_963_984_540_054;
/// A cell fails when more than this share of replications fails.
const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Integrated likelihood (first estimation step).
    Likelihood,
    /// Two-way fixed effects treating covariates as strictly exogenous.
    Naive,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Likelihood => "likelihood",
            Estimator::Naive => "naive",
        }
    }
}

/// One data-generating process. Its seed is replaced per replication.
#[derive(Debug, Clone)]
pub struct StudyCell {
    pub name: String,
    pub sim: SimConfig,
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub cells: Vec<StudyCell>,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    pub fit: FitOptions,
}

/// Structural estimates of one replication, aligned with the parameter
/// names of the cell. Entries an estimator does not produce are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub estimator: Estimator,
    pub outcome: std::result::Result<(Vec<f64>, Vec<f64>), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub estimator: Estimator,
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Sample standard deviation (zero with a single replication).
    pub sd: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Share of 95% intervals covering the truth.
    pub coverage: f64,
    pub n_ok: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub name: String,
    pub parameters: Vec<String>,
    pub truth: Vec<f64>,
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<ParamSummary>,
    /// Failed replications per estimator, in the order of `StudySpec::estimators`.
    pub failures: Vec<(Estimator, usize)>,
    pub failed: bool,
}

impl CellResult {
    /// Successful estimates of `estimator` as `(estimates, standard errors)`.
    pub fn successes(&self, estimator: Estimator) -> impl Iterator<Item = &(Vec<f64>, Vec<f64>)> {
        self.records
            .iter()
            .filter(move |r| r.estimator == estimator)
            .filter_map(|r| r.outcome.as_ref().ok())
    }
}

fn structural_names(k: usize) -> Vec<String> {
    let mut names = vec!["rho_y".to_string(), "rho_delta".to_string()];
    names.extend((1..=k).map(|i| format!("beta[{i}]")));
    names.push("sigma2_u".into());
    names.push("sigma2_eps".into());
    names
}

fn run_one(
    spec: &StudySpec,
    cfg: &SimConfig,
    estimator: Estimator,
) -> std::result::Result<(Vec<f64>, Vec<f64>), String> {
    let sim = simulate_panel(cfg).map_err(|e| e.to_string())?;
    let design = cfg.design();
    let k = design.covariates;
    match estimator {
        Estimator::Likelihood => {
            let fit =
                fit_outcome_model(&sim.panel, design, &spec.fit).map_err(|e| e.to_string())?;
            if !fit.converged {
                return Err(format!(
                    "optimizer did not converge (gradient norm {:e})",
                    fit.grad_norm
                ));
            }
            let se = standard_errors(&fit, &sim.panel).map_err(|e| e.to_string())?;
            let n = 4 + k;
            Ok((
                fit.natural().as_slice()[..n].to_vec(),
                se.natural.as_slice()[..n].to_vec(),
            ))
        }
        Estimator::Naive => {
            let fit = fit_naive(&sim.panel, design).map_err(|e| e.to_string())?;
            let mut est = vec![fit.rho_y, f64::NAN];
            est.extend_from_slice(&fit.beta);
            est.extend([f64::NAN, f64::NAN]);
            let mut se = vec![fit.se[0], f64::NAN];
            se.extend_from_slice(&fit.se[1..1 + k]);
            se.extend([f64::NAN, f64::NAN]);
            Ok((est, se))
        }
    }
}

fn summarize(
    estimator: Estimator,
    names: &[String],
    truth: &[f64],
    records: &[ReplicationRecord],
) -> Vec<ParamSummary> {
    let ok: Vec<&(Vec<f64>, Vec<f64>)> = records
        .iter()
        .filter(|r| r.estimator == estimator)
        .filter_map(|r| r.outcome.as_ref().ok())
        .collect();
    let mut out = Vec::new();
    for (p, name) in names.iter().enumerate() {
        let vals: Vec<(f64, f64)> = ok
            .iter()
            .map(|(e, s)| (e[p], s[p]))
            .filter(|(e, _)| e.is_finite())
            .collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().map(|v| v.0).sum::<f64>() / n;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let rmse = (vals.iter().map(|v| (v.0 - truth[p]).powi(2)).sum::<f64>() / n).sqrt();
        let mae = vals.iter().map(|v| (v.0 - truth[p]).abs()).sum::<f64>() / n;
        let covered = vals
            .iter()
            .filter(|(e, s)| s.is_finite() && (e - truth[p]).abs() <= Z_95 * s)
            .count();
        out.push(ParamSummary {
            estimator,
            parameter: name.clone(),
            truth: truth[p],
            mean,
            bias: mean - truth[p],
            sd,
            rmse,
            mae,
            coverage: covered as f64 / n,
            n_ok: vals.len(),
        });
    }
    out
}

/// Runs every cell of the study, calling `on_cell` as each completes so
/// partial results can be persisted. Replication `r` of cell `c` simulates
/// with a seed derived from `(seed, c, r)`, so results do not depend on the
/// thread count.
pub fn monte_carlo(
    spec: &StudySpec,
    mut on_cell: impl FnMut(&CellResult) -> Result<()>,
) -> Result<Vec<CellResult>> {
    if spec.cells.is_empty() {
        return Err(Error::invalid("cells", "the study grid is empty"));
    }
    if spec.replications == 0 {
        return Err(Error::invalid("replications", "must be at least 1"));
    }
    if spec.estimators.is_empty() {
        return Err(Error::invalid(
            "estimators",
            "at least one estimator is required",
        ));
    }
    for cell in &spec.cells {
        cell.sim.validate()?;
    }
    let mut results = Vec::with_capacity(spec.cells.len());
    for (c, cell) in spec.cells.iter().enumerate() {
        let design = cell.sim.design();
        let names = structural_names(design.covariates);
        let th = &cell.sim.model.theta;
        let mut truth = vec![th.rho_y, th.rho_delta];
        truth.extend_from_slice(&th.beta);
        truth.extend([th.sigma2_u, th.sigma2_eps]);

        let records: Vec<ReplicationRecord> = (0..spec.replications)
            .into_par_iter()
            .flat_map_iter(|r| {
                let mut cfg = cell.sim.clone();
                cfg.seed = derive_seed(spec.seed, Domain::Study, &[c as u64, r as u64]);
                spec.estimators
                    .iter()
                    .map(|&e| ReplicationRecord {
                        replication: r,
                        estimator: e,
                        outcome: run_one(spec, &cfg, e),
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let failures: Vec<(Estimator, usize)> = spec
            .estimators
            .iter()
            .map(|&e| {
                (
                    e,
                    records
                        .iter()
                        .filter(|r| r.estimator == e && r.outcome.is_err())
                        .count(),
                )
            })
            .collect();
        let failed = failures
            .iter()
            .any(|(_, f)| *f as f64 > MAX_FAILURE_SHARE * spec.replications as f64);
        for r in records.iter().filter(|r| r.outcome.is_err()) {
            log::warn!(
                "cell {} replication {} ({}): {}",
                cell.name,
                r.replication,
                r.estimator.name(),
                r.outcome.as_ref().unwrap_err()
            );
        }
        let summaries = spec
            .estimators
            .iter()
            .flat_map(|&e| summarize(e, &names, &truth, &records))
            .collect();
        let result = CellResult {
            name: cell.name.clone(),
            parameters: names,
            truth,
            records,
            summaries,
            failures,
            failed,
        };
        on_cell(&result)?;
        results.push(result);
    }
    Ok(results)
}
