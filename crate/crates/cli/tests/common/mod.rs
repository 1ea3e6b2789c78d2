//! Fixtures shared by the command-line integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dynevent::simulation::{CohortLaw, InitialLaw, SimConfig};
use dynevent::{EventDesign, FeedbackModel, HeterogeneityModel, StructuralModel, StructuralParams};
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

/// Feedback with persistence `a_x`, outcome loading `a_y` and a treatment
/// response decaying by half per event time.
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

/// Adoption spread uniformly over periods `3..=T-2` with a never-treated share.
pub fn cohorts(periods: usize, never: f64) -> CohortLaw {
    let treated: Vec<usize> = (3..=periods.saturating_sub(2).max(3)).collect();
    let mut probs = vec![0.0; periods + 1];
    for &t in &treated {
        probs[t - 1] = (1.0 - never) / treated.len() as f64;
    }
    probs[periods] = never;
    CohortLaw::independent(probs)
}

/// `T = 8`, `K = 1`, `J_max = 4`, `(rho_y, rho_delta) = (0.6, 0.8)`,
/// `beta = 0.5`, `sigma2_u = 1`, `sigma2_eps = 0.25`, feedback `(0.4, 0.2, 0.5)`.
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

pub fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_dynevent"))
}

/// Runs the binary with the given arguments and no thread override from the
/// environment.
pub fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .env_remove("DYNEVENT_THREADS")
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A small configuration exercising every command: `T = 5`, `K = 1`,
/// `J_max = 2`, `n_units` simulated units.
pub fn small_config(n_units: usize, beta: f64) -> String {
    format!(
        r#"schema_version = 1

[design]
periods = 5
covariates = 1
max_event_time = 2

[model]
rho_y = 0.5
rho_delta = 0.7
beta = [{beta}]
sigma2_u = 1.0
sigma2_eps = 0.2

[model.heterogeneity]
mean_alpha = [0.5, 0.3, 0.2]
mean_delta0 = [1.0, 0.2, 0.0]
cov = [[0.5, 0.1], [0.1, 0.3]]

[model.feedback]
a_x = [[0.4]]
a_y = [0.2]
a_d = [[0.5, 0.25, 0.125]]
intercept = [0.0]
sigma_x = [[1.0]]

[simulate]
n_units = {n_units}
seed = 17

[simulate.initial]
law = "gaussian"
mean = [1.0, 0.0]
cov = [[1.0, 0.0], [0.0, 1.0]]

[simulate.cohorts]
probs = [0.0, 0.3, 0.3, 0.0, 0.0, 0.4]

[estimate]
starts = 2
seed = 3

[scenario]
adoption = "observed"
n_draws = 8
seed = 5

[montecarlo]
replications = 2
seed = 9
estimators = ["likelihood", "naive"]

[[montecarlo.cells]]
name = "smoke"
n_units = {n_units}
"#
    )
}

/// Reads a CSV file into its header and rows of fields.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).expect("csv opens");
    let header = r
        .headers()
        .expect("header")
        .iter()
        .map(str::to_string)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.expect("record").iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}
