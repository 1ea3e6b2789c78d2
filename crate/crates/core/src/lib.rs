//! Dynamic panel event studies with endogenous covariate feedback.
//!
//! The crate simulates, estimates and decomposes the model
//!
//! ```text
//! Y_it = rho_y Y_i,t-1 + alpha_i + X_it' beta + gamma_t + sum_j D_it^j delta_ij + U_it
//! delta_ij = rho_delta delta_i,j-1 + eps_ij
//! X_it ~ f(X_it | history)      (homogeneous feedback, free of lambda_i)
//! ```
//!
//! with `lambda_i = (alpha_i, delta_i0)` drawn from a Gaussian correlated
//! random-effects law given `(Y_i0, X_i0, t_0i)`.
//!
//! * [`model`]: domain types, stacked loadings and the parameter transform.
//! * [`simulation`]: data generation and the factorized joint density.
//! * [`likelihood`]: integrated outcome likelihood, `lambda` posteriors, demeaning.
//! * [`estimation`]: two-step estimator, standard errors, Monte Carlo harness.
//! * [`counterfactual`]: counterfactual paths and the direct/indirect decomposition.
//! * [`io`]: long-format panel CSV.

pub mod counterfactual;
pub mod error;
pub mod estimation;
pub mod io;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod simulation;

pub use counterfactual::{
    decompose, simulate_scenario, Baseline, DecompositionResult, InitialCondition, LambdaSource,
    Scenario, ScenarioPaths,
};
pub use error::{Error, Result};
pub use estimation::{
    estimate, fit_feedback, fit_outcome_model, monte_carlo, standard_errors, FitOptions, FitResult,
};
pub use likelihood::{
    demean_panel, lambda_posterior, loglik, marginal_of_unit, LambdaPosterior, MarginalGaussian,
    OutcomeObjective,
};
pub use model::{
    build_loadings, delta_path, Adoption, CohortCoding, EventDesign, FeedbackModel, GammaMode,
    HeterogeneityModel, Lambda, PanelData, ParamLayout, StructuralModel, StructuralParams,
    UnitLoadings, UnitObs,
};
pub use simulation::{
    joint_logdensity, simulate_panel, CohortLaw, InitialLaw, SimConfig, SimOutput, UnitLatent,
};
