use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dynevent::counterfactual::{
    self, Baseline, DecompositionResult, EffectRow, LambdaSource, Scenario,
};
use dynevent::estimation::{self, CellResult, StudyCell, StudySpec};
use dynevent::io::{format_f64, read_panel_file, write_latent, write_panel};
use dynevent::simulation::simulate_panel;
use dynevent::{Adoption, PanelData, StructuralModel};
use serde::Serialize;

use crate::config::{AdoptionRule, RunConfig, ScenarioSection};
use crate::error::CliError;
use crate::report::FitReport;

/// Paths and overrides shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub data: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    let io = |e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s.into_bytes()
}

fn load_panel(ctx: &Context) -> Result<Option<PanelData>, CliError> {
    ctx.data
        .as_deref()
        .map(read_panel_file)
        .transpose()
        .map_err(|e| {
            let path = ctx.data.as_ref().expect("data path present").display();
            match CliError::from(e) {
                CliError::Io(m) => CliError::Io(format!("{path}: {m}")),
                other => CliError::Data(format!("{path}: {other}")),
            }
        })
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let s = cfg.section(&cfg.simulate, "simulate")?;
    let sim_cfg = cfg.sim_config(s.n_units, ctx.seed.unwrap_or(s.seed))?;
    let sim = simulate_panel(&sim_cfg)?;
    create_dir(&ctx.out)?;
    let mut panel = Vec::new();
    write_panel(&mut panel, &sim.panel)?;
    write_atomic(&ctx.out.join("panel.csv"), &panel)?;
    let mut latent = Vec::new();
    write_latent(&mut latent, &sim.latent)?;
    write_atomic(&ctx.out.join("latent.csv"), &latent)?;

    let d = sim_cfg.design();
    println!(
        "N={} T={} K={} J_max={}",
        sim.panel.n_units(),
        d.periods,
        d.covariates,
        d.max_event_time
    );
    let mut counts: BTreeMap<Adoption, usize> = BTreeMap::new();
    for u in &sim.panel.units {
        *counts.entry(u.t0).or_default() += 1;
    }
    for (a, n) in counts {
        println!("cohort {a}: {n}");
    }
    Ok(())
}

pub fn estimate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let design = cfg.design()?;
    let panel = load_panel(ctx)?.ok_or_else(|| CliError::Config("estimate needs --data".into()))?;
    panel
        .check_design(&design)
        .map_err(|e| CliError::Data(format!("panel does not match [design]: {e}")))?;
    let options = cfg.fit_options(ctx.seed);
    let fit = estimation::estimate(&panel, &design, &options)?;
    create_dir(&ctx.out)?;
    let trace_rows: Vec<Vec<String>> = fit
        .outcome
        .trace
        .iter()
        .map(|(i, f)| vec![i.to_string(), format_f64(*f)])
        .collect();
    write_atomic(
        &ctx.out.join("trace.csv"),
        &csv_bytes(&["iteration".into(), "objective".into()], &trace_rows)?,
    )?;
    let report = FitReport::from_fit(&fit, &design, panel.n_units(), "trace.csv");
    write_atomic(&ctx.out.join("fit.json"), &json_bytes(&report))?;

    println!("{:<28} {:>14} {:>12}", "parameter", "estimate", "se");
    for p in report.parameters.iter().take(4 + design.covariates) {
        println!("{:<28} {:>14.6} {:>12.6}", p.name, p.estimate, p.se);
    }
    println!("loglik_y {:.6}", report.loglik_y);
    match report.loglik_x {
        Some(v) => println!("loglik_x {v:.6}"),
        None => println!("loglik_x undefined (singular covariate innovations)"),
    }
    if !report.converged {
        return Err(CliError::NotConverged(format!(
            "optimizer did not converge after {} iterations (gradient norm {:e}); report written",
            report.iterations, report.grad_norm
        )));
    }
    println!("converged in {} iterations", report.iterations);
    Ok(())
}

/// Parameters for scenario commands: the fit report if given, otherwise the
/// `[model]` section of the configuration.
fn scenario_model(ctx: &Context) -> Result<(StructuralModel, &'static str), CliError> {
    let cfg = &ctx.config;
    let design = cfg.design()?;
    match &ctx.fit {
        Some(path) => {
            let model = FitReport::load(path)?.model()?;
            if model.design != design {
                return Err(CliError::Config(format!(
                    "fit report design {:?} differs from [design] {:?}",
                    model.design, design
                )));
            }
            Ok((model, "fit"))
        }
        None => match &cfg.model {
            Some(m) => Ok((cfg.structural_model(m)?, "config")),
            None => Err(CliError::Config(
                "scenario commands need --fit or a [model] section".into(),
            )),
        },
    }
}

struct ScenarioSetup {
    model: StructuralModel,
    source: &'static str,
    panel: Option<PanelData>,
    initial: Vec<counterfactual::InitialCondition>,
    scenario: Scenario,
}

impl ScenarioSetup {
    fn baseline(&self) -> Baseline<'_> {
        match &self.panel {
            Some(p) => Baseline::Observed(p),
            None => Baseline::Initial(&self.initial),
        }
    }
}

fn scenario_setup(ctx: &Context) -> Result<ScenarioSetup, CliError> {
    let cfg = &ctx.config;
    let sc: &ScenarioSection = cfg.section(&cfg.scenario, "scenario")?;
    let (model, source) = scenario_model(ctx)?;
    let design = model.design;
    let panel = load_panel(ctx)?;
    if let Some(p) = &panel {
        p.check_design(&design)
            .map_err(|e| CliError::Data(format!("panel does not match [design]: {e}")))?;
    }
    let lambda_source = sc.lambda_source();
    if lambda_source == LambdaSource::Posterior && panel.is_none() {
        return Err(CliError::Config(
            "scenario.lambda_source = \"posterior\" needs --data".into(),
        ));
    }
    let (n, initial) = match &panel {
        Some(p) => {
            if sc.n_units.is_some() {
                return Err(CliError::Config(
                    "scenario.n_units is only allowed without --data".into(),
                ));
            }
            (p.n_units(), Vec::new())
        }
        None => {
            let n = sc.n_units.ok_or_else(|| {
                CliError::Config("without --data, scenario.n_units is required".into())
            })?;
            let init = sc.initial(&design, n)?.ok_or_else(|| {
                CliError::Config("without --data, [scenario.initial] is required".into())
            })?;
            (n, init)
        }
    };
    if sc.n_draws == 0 {
        return Err(CliError::Config(
            "scenario.n_draws must be at least 1".into(),
        ));
    }
    let observed: Option<Vec<Adoption>> = panel
        .as_ref()
        .map(|p| p.units.iter().map(|u| u.t0).collect());
    let t0_star = sc.adoption(&design, observed.as_deref(), n)?;
    let init_star = if panel.is_some() {
        sc.initial(&design, n)?
    } else {
        None
    };
    let scenario = Scenario {
        t0_star,
        init_star,
        n_draws: sc.n_draws,
        seed: ctx.seed.unwrap_or(sc.seed),
        lambda_source,
    };
    Ok(ScenarioSetup {
        model,
        source,
        panel,
        initial,
        scenario,
    })
}

fn adoption_rule(sc: &ScenarioSection) -> String {
    match &sc.adoption {
        AdoptionRule::Named(s) if sc.shift != 0 => format!("{s} shifted by {}", sc.shift),
        AdoptionRule::Named(s) => s.clone(),
        AdoptionRule::Period(p) => format!("period {p}"),
    }
}

#[derive(Serialize)]
struct ScenarioMetadata<'a> {
    command: &'a str,
    parameters: &'a str,
    seed: u64,
    n_units: usize,
    n_draws: usize,
    lambda_source: &'a str,
    adoption: String,
    initial_override: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    arms: Option<BTreeMap<&'a str, &'a str>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    effects: Option<BTreeMap<&'a str, &'a str>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ordering: Option<&'a str>,
}

fn metadata<'a>(
    command: &'a str,
    setup: &'a ScenarioSetup,
    sc: &ScenarioSection,
) -> ScenarioMetadata<'a> {
    ScenarioMetadata {
        command,
        parameters: setup.source,
        seed: setup.scenario.seed,
        n_units: setup.scenario.t0_star.len(),
        n_draws: setup.scenario.n_draws,
        lambda_source: match setup.scenario.lambda_source {
            LambdaSource::Prior => "prior",
            LambdaSource::Posterior => "posterior",
        },
        adoption: adoption_rule(sc),
        initial_override: sc.initial.is_some(),
        arms: None,
        effects: None,
        ordering: None,
    }
}

fn covariate_header(k: usize) -> impl Iterator<Item = String> {
    (1..=k).map(|c| format!("x{c}"))
}

pub fn counterfactual(ctx: &Context) -> Result<(), CliError> {
    let setup = scenario_setup(ctx)?;
    let paths = counterfactual::simulate_scenario(&setup.model, setup.baseline(), &setup.scenario)?;
    let (t_len, k) = (paths.periods, paths.covariates);
    create_dir(&ctx.out)?;

    let mut header = vec!["unit".to_string(), "draw".into(), "t".into(), "y".into()];
    header.extend(covariate_header(k));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for i in 0..paths.n_units {
        for d in 0..paths.n_draws {
            let (y, x) = (paths.y_path(i, d), paths.x_path(i, d));
            for t in 0..t_len {
                let mut row = vec![
                    i.to_string(),
                    d.to_string(),
                    (t + 1).to_string(),
                    format_f64(y[t]),
                ];
                row.extend(x[t * k..(t + 1) * k].iter().map(|v| format_f64(*v)));
                w.write_record(&row)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(&ctx.out.join("paths.csv"), &bytes)?;

    let (my, mx) = (paths.mean_y(), paths.mean_x());
    let mut header = vec!["t".to_string(), "y".into()];
    header.extend(covariate_header(k));
    let rows: Vec<Vec<String>> = (0..t_len)
        .map(|t| {
            let mut r = vec![(t + 1).to_string(), format_f64(my[t])];
            r.extend(mx[t * k..(t + 1) * k].iter().map(|v| format_f64(*v)));
            r
        })
        .collect();
    write_atomic(&ctx.out.join("mean_paths.csv"), &csv_bytes(&header, &rows)?)?;

    let sc = ctx.config.scenario.as_ref().expect("checked in setup");
    write_atomic(
        &ctx.out.join("metadata.json"),
        &json_bytes(&metadata("counterfactual", &setup, sc)),
    )?;
    println!(
        "simulated {} units x {} draws over {} periods",
        paths.n_units, paths.n_draws, t_len
    );
    Ok(())
}

fn effect_rows(rows: &[EffectRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                format_f64(r.total),
                format_f64(r.direct),
                format_f64(r.indirect),
                format_f64(r.se_total),
                format_f64(r.se_direct),
                format_f64(r.se_indirect),
            ]
        })
        .collect()
}

fn effect_header(index: &str) -> Vec<String> {
    [
        index,
        "total",
        "direct",
        "indirect",
        "se_total",
        "se_direct",
        "se_indirect",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub fn decompose(ctx: &Context) -> Result<(), CliError> {
    let setup = scenario_setup(ctx)?;
    let result: DecompositionResult =
        counterfactual::decompose(&setup.model, setup.baseline(), &setup.scenario, false)?;
    create_dir(&ctx.out)?;
    write_atomic(
        &ctx.out.join("event_time.csv"),
        &csv_bytes(&effect_header("j"), &effect_rows(&result.event_time))?,
    )?;
    write_atomic(
        &ctx.out.join("calendar_time.csv"),
        &csv_bytes(&effect_header("t"), &effect_rows(&result.calendar))?,
    )?;
    let sc = ctx.config.scenario.as_ref().expect("checked in setup");
    let mut meta = metadata("decompose", &setup, sc);
    meta.arms = Some(counterfactual::ARM_DEFINITIONS.into_iter().collect());
    meta.effects = Some(counterfactual::EFFECT_DEFINITIONS.into_iter().collect());
    meta.ordering = Some("indirect is taken first along A -> C -> B; no symmetric split");
    write_atomic(&ctx.out.join("metadata.json"), &json_bytes(&meta))?;
    println!(
        "{:>4} {:>12} {:>12} {:>12}",
        "j", "total", "direct", "indirect"
    );
    for r in &result.event_time {
        println!(
            "{:>4} {:>12.6} {:>12.6} {:>12.6}",
            r.index, r.total, r.direct, r.indirect
        );
    }
    Ok(())
}

const STUDY_HEADER: [&str; 13] = [
    "cell",
    "estimator",
    "parameter",
    "truth",
    "mean",
    "bias",
    "sd",
    "rmse",
    "mae",
    "coverage",
    "n_ok",
    "n_failed",
    "cell_failed",
];

fn study_rows(cell: &CellResult) -> Vec<Vec<String>> {
    cell.summaries
        .iter()
        .map(|s| {
            let failed = cell
                .failures
                .iter()
                .find(|(e, _)| *e == s.estimator)
                .map_or(0, |(_, n)| *n);
            vec![
                cell.name.clone(),
                s.estimator.name().to_string(),
                s.parameter.clone(),
                format_f64(s.truth),
                format_f64(s.mean),
                format_f64(s.bias),
                format_f64(s.sd),
                format_f64(s.rmse),
                format_f64(s.mae),
                format_f64(s.coverage),
                s.n_ok.to_string(),
                failed.to_string(),
                cell.failed.to_string(),
            ]
        })
        .collect()
}

pub fn montecarlo(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mc = cfg.section(&cfg.montecarlo, "montecarlo")?;
    if mc.cells.is_empty() {
        return Err(CliError::Config("montecarlo.cells is empty".into()));
    }
    if mc.replications == 0 {
        return Err(CliError::Config(
            "montecarlo.replications must be at least 1".into(),
        ));
    }
    let estimators = mc.estimators()?;
    let base = cfg.sim_config(1, 0)?;
    let cells = mc
        .cells
        .iter()
        .map(|c| {
            Ok(StudyCell {
                name: c.name.clone(),
                sim: c.apply(&base)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let spec = StudySpec {
        cells,
        replications: mc.replications,
        seed: ctx.seed.unwrap_or(mc.seed),
        estimators,
        fit: cfg.fit_options(None),
    };
    create_dir(&ctx.out)?;
    let path = ctx.out.join("study.csv");
    let header: Vec<String> = STUDY_HEADER.iter().map(|s| s.to_string()).collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut write_error: Option<CliError> = None;
    let mut any_failed = false;
    estimation::monte_carlo(&spec, |cell| {
        rows.extend(study_rows(cell));
        any_failed |= cell.failed;
        println!(
            "cell {} done{}",
            cell.name,
            if cell.failed { " (failed)" } else { "" }
        );
        let result = csv_bytes(&header, &rows).and_then(|b| write_atomic(&path, &b));
        match result {
            Ok(()) => Ok(()),
            Err(e) => {
                write_error = Some(e);
                Err(dynevent::Error::InvalidParameter {
                    name: "study output".into(),
                    reason: "write failed".into(),
                })
            }
        }
    })
    .map_err(|e| write_error.take().unwrap_or_else(|| e.into()))?;
    if any_failed {
        log::warn!("at least one cell had more than 20% failed replications");
    }
    Ok(())
}
