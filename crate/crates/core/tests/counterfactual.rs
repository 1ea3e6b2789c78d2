mod common;

use dynevent::counterfactual::{
    decompose, simulate_scenario, Baseline, InitialCondition, LambdaSource, Scenario,
};
use dynevent::simulation::simulate_panel;
use dynevent::{marginal_of_unit, Adoption, Error, UnitObs};
use nalgebra::{DMatrix, Matrix2};

use common::recovery_config;

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
}

#[test]
fn factual_scenario_without_noise_reproduces_the_panel() {
    let mut cfg = recovery_config(100, 1);
    cfg.model.theta.sigma2_u = 0.0;
    cfg.model.theta.sigma2_eps = 0.0;
    cfg.model.het.cov = Matrix2::zeros();
    cfg.model.feedback.sigma_x = DMatrix::zeros(1, 1);
    let sim = simulate_panel(&cfg).unwrap();
    let t0: Vec<Adoption> = sim.panel.units.iter().map(|u| u.t0).collect();
    let paths = simulate_scenario(
        &cfg.model,
        Baseline::Observed(&sim.panel),
        &Scenario::with_adoption(t0, 2, 9),
    )
    .unwrap();
    for (i, unit) in sim.panel.units.iter().enumerate() {
        for d in 0..2 {
            assert_eq!(paths.y_path(i, d), unit.y.as_slice());
            assert_eq!(paths.x_path(i, d), unit.x.as_slice());
        }
    }
}

#[test]
fn never_treated_paths_ignore_effect_parameters() {
    let cfg = recovery_config(50, 2);
    let sim = simulate_panel(&cfg).unwrap();
    let scenario = Scenario::with_adoption(vec![Adoption::Never; 50], 10, 3);
    let mut other = cfg.model.clone();
    other.theta.rho_delta = -0.3;
    other.theta.sigma2_eps = 4.0;
    let a = simulate_scenario(&cfg.model, Baseline::Observed(&sim.panel), &scenario).unwrap();
    let b = simulate_scenario(&other, Baseline::Observed(&sim.panel), &scenario).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mean_path_matches_marginal_with_deterministic_covariates() {
    let mut cfg = recovery_config(1, 3);
    cfg.model.feedback.sigma_x = DMatrix::zeros(1, 1);
    cfg.model.feedback.a_y.fill(0.0);
    let design = cfg.model.design;
    let init = [InitialCondition {
        y0: 0.8,
        x0: vec![0.3],
    }];
    let scenario = Scenario::with_adoption(vec![Adoption::Period(3)], 100_000, 4);
    let paths = simulate_scenario(&cfg.model, Baseline::Initial(&init), &scenario).unwrap();
    let x = paths.x_path(0, 0).to_vec();
    assert!((0..paths.n_draws).all(|d| paths.x_path(0, d) == x.as_slice()));
    let unit = UnitObs {
        y0: 0.8,
        x0: vec![0.3],
        t0: Adoption::Period(3),
        y: vec![0.0; design.periods],
        x,
    };
    let m = marginal_of_unit(&cfg.model.theta, &cfg.model.het, &design, &unit).unwrap();
    for (t, (sim_mean, exact)) in paths.mean_y().iter().zip(m.mean.iter()).enumerate() {
        let rel = (sim_mean - exact).abs() / exact.abs().max(1.0);
        assert!(rel < 0.005, "t = {}: {sim_mean} vs {exact}", t + 1);
    }
}

#[test]
fn decomposition_is_identical_across_thread_counts() {
    let cfg = recovery_config(200, 5);
    let sim = simulate_panel(&cfg).unwrap();
    let scenario = Scenario::with_adoption(vec![Adoption::Period(4); 200], 15, 6);
    let run = |threads| {
        pool(threads).install(|| {
            decompose(&cfg.model, Baseline::Observed(&sim.panel), &scenario, true).unwrap()
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn standard_errors_shrink_with_draws() {
    let cfg = recovery_config(20, 7);
    let sim = simulate_panel(&cfg).unwrap();
    let run = |draws| {
        let scenario = Scenario::with_adoption(vec![Adoption::Period(3); 20], draws, 8);
        decompose(&cfg.model, Baseline::Observed(&sim.panel), &scenario, false).unwrap()
    };
    let (few, many) = (run(1000), run(4000));
    for (a, b) in few
        .calendar
        .iter()
        .zip(&many.calendar)
        .filter(|(a, _)| a.index >= 3)
    {
        for (sa, sb) in [
            (a.se_total, b.se_total),
            (a.se_direct, b.se_direct),
            (a.se_indirect, b.se_indirect),
        ] {
            let ratio = sa / sb;
            assert!(
                (ratio / 2.0 - 1.0).abs() <= 0.2,
                "t = {}: ratio {ratio}",
                a.index
            );
        }
    }
}

#[test]
fn posterior_draws_need_observed_outcomes() {
    let cfg = recovery_config(3, 9);
    let init = vec![
        InitialCondition {
            y0: 0.0,
            x0: vec![0.0]
        };
        3
    ];
    let scenario = Scenario {
        lambda_source: LambdaSource::Posterior,
        ..Scenario::with_adoption(vec![Adoption::Period(2); 3], 5, 1)
    };
    assert!(matches!(
        simulate_scenario(&cfg.model, Baseline::Initial(&init), &scenario),
        Err(Error::InvalidParameter { .. })
    ));
}

#[test]
fn posterior_draws_concentrate_with_observed_outcomes() {
    let cfg = recovery_config(100, 10);
    let sim = simulate_panel(&cfg).unwrap();
    let t0: Vec<Adoption> = sim.panel.units.iter().map(|u| u.t0).collect();
    let base = Baseline::Observed(&sim.panel);
    let prior = simulate_scenario(
        &cfg.model,
        base,
        &Scenario::with_adoption(t0.clone(), 50, 11),
    )
    .unwrap();
    let posterior = simulate_scenario(
        &cfg.model,
        base,
        &Scenario {
            lambda_source: LambdaSource::Posterior,
            ..Scenario::with_adoption(t0, 50, 11)
        },
    )
    .unwrap();
    let mse = |p: &dynevent::ScenarioPaths| -> f64 {
        let mut s = 0.0;
        for (i, unit) in sim.panel.units.iter().enumerate() {
            for d in 0..p.n_draws {
                s += p
                    .y_path(i, d)
                    .iter()
                    .zip(&unit.y)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>();
            }
        }
        s
    };
    assert!(mse(&posterior) < mse(&prior));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let cfg = recovery_config(4, 12);
    let sim = simulate_panel(&cfg).unwrap();
    let base = Baseline::Observed(&sim.panel);
    assert!(simulate_scenario(
        &cfg.model,
        base,
        &Scenario::with_adoption(vec![Adoption::Period(2); 4], 0, 1)
    )
    .is_err());
    assert!(simulate_scenario(
        &cfg.model,
        base,
        &Scenario::with_adoption(vec![Adoption::Period(2); 3], 1, 1)
    )
    .is_err());
    assert!(simulate_scenario(
        &cfg.model,
        base,
        &Scenario::with_adoption(vec![Adoption::Period(9); 4], 1, 1)
    )
    .is_err());
}
