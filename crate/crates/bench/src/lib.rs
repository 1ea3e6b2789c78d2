//! Fixtures shared by the benchmarks.

use dynevent::simulation::{CohortLaw, InitialLaw, SimConfig};
use dynevent::{EventDesign, FeedbackModel, HeterogeneityModel, StructuralModel, StructuralParams};
use nalgebra::{DMatrix, DVector, Matrix2};

/// `T = 8`, `K = 1`, `J_max = 4` with outcome and treatment feedback.
pub fn config(n_units: usize, seed: u64) -> SimConfig {
    let design = EventDesign::new(8, 1, 4).expect("valid design");
    let mut het = HeterogeneityModel::constant(0.5, 1.0, Matrix2::new(0.5, 0.1, 0.1, 0.3), 1);
    het.mean_coef[(0, 1)] = 0.3;
    let mut a_d = DMatrix::zeros(1, 5);
    a_d[(0, 0)] = 0.5;
    a_d[(0, 1)] = 0.25;
    let mut probs = vec![0.0; 9];
    for p in &mut probs[2..6] {
        *p = 0.15;
    }
    probs[8] = 0.4;
    SimConfig {
        n_units,
        model: StructuralModel {
            design,
            theta: StructuralParams::new(0.6, 0.8, vec![0.5], 1.0, 0.25, 8),
            het,
            feedback: FeedbackModel {
                a_x: DMatrix::from_element(1, 1, 0.4),
                a_y: DVector::from_element(1, 0.2),
                a_d,
                intercept: DVector::zeros(1),
                sigma_x: DMatrix::identity(1, 1),
            },
        },
        initial: InitialLaw::Gaussian {
            mean: vec![1.0, 0.0],
            cov: DMatrix::identity(2, 2),
        },
        cohorts: CohortLaw::independent(probs),
        seed,
    }
}
