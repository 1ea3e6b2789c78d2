//! Bijection between admissible `(theta, H)` and an unconstrained vector.
//!
//! Layout: `[atanh rho_y, atanh rho_delta, beta (K), ln sigma2_u, ln sigma2_eps,
//! gamma_2..gamma_T (free mode only), free mean coefficients (row major),
//! ln l11, l21, ln l22]` where `Sigma_lambda = L L'`.

use nalgebra::{DMatrix, DVector, Matrix2};

use super::{CohortCoding, EventDesign, HeterogeneityModel, StructuralParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum GammaMode {
    /// Time effects held at the given values.
    Fixed(Vec<f64>),
    /// Estimated, with `gamma_1 = 0` fixing the level against the intercept of alpha.
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    design: EventDesign,
    cohorts: CohortCoding,
    gamma: GammaMode,
    free_mean: Vec<(usize, usize)>,
}

impl ParamLayout {
    /// The delta0 loading on a never-treated dummy is pinned at zero: delta0
    /// never enters those units' outcomes, so the coefficient is unidentified.
    pub fn new(design: EventDesign, cohorts: CohortCoding, gamma: GammaMode) -> Result<Self> {
        if let GammaMode::Fixed(g) = &gamma {
            if g.len() != design.periods {
                return Err(Error::dim("fixed gamma", design.periods, g.len()));
            }
        }
        let p = HeterogeneityModel::n_regressors(design.covariates, &cohorts);
        let pinned = cohorts
            .never_column()
            .map(|c| (1, 2 + design.covariates + c));
        let free_mean = (0..2)
            .flat_map(|r| (0..p).map(move |c| (r, c)))
            .filter(|rc| Some(*rc) != pinned)
            .collect();
        Ok(Self {
            design,
            cohorts,
            gamma,
            free_mean,
        })
    }

    pub fn design(&self) -> &EventDesign {
        &self.design
    }

    pub fn cohorts(&self) -> &CohortCoding {
        &self.cohorts
    }

    pub fn gamma_mode(&self) -> &GammaMode {
        &self.gamma
    }

    pub fn n_regressors(&self) -> usize {
        HeterogeneityModel::n_regressors(self.design.covariates, &self.cohorts)
    }

    fn n_gamma(&self) -> usize {
        match self.gamma {
            GammaMode::Free => self.design.periods - 1,
            GammaMode::Fixed(_) => 0,
        }
    }

    /// Number of structural components `(rho_y, rho_delta, beta, sigma2_u, sigma2_eps)`.
    pub fn n_theta(&self) -> usize {
        4 + self.design.covariates
    }

    fn gamma_start(&self) -> usize {
        self.n_theta()
    }

    fn mean_start(&self) -> usize {
        self.gamma_start() + self.n_gamma()
    }

    fn chol_start(&self) -> usize {
        self.mean_start() + self.free_mean.len()
    }

    pub fn n_params(&self) -> usize {
        self.chol_start() + 3
    }

    /// Free mean-coefficient entries `(row, column)` in packed order.
    pub fn free_mean_entries(&self) -> &[(usize, usize)] {
        &self.free_mean
    }

    /// Names of the natural-scale parameters, aligned with [`Self::natural`].
    pub fn names(&self) -> Vec<String> {
        let k = self.design.covariates;
        let mut names = vec!["rho_y".to_string(), "rho_delta".to_string()];
        names.extend((1..=k).map(|i| format!("beta[{i}]")));
        names.push("sigma2_u".into());
        names.push("sigma2_eps".into());
        names.extend(
            (2..=self.design.periods)
                .take(self.n_gamma())
                .map(|t| format!("gamma[{t}]")),
        );
        let regressor = |c: usize| -> String {
            match c {
                0 => "const".into(),
                1 => "y0".into(),
                c if c < 2 + k => format!("x0[{}]", c - 1),
                c => format!("cohort[{}]", self.cohorts.levels[c - 2 - k]),
            }
        };
        for &(r, c) in &self.free_mean {
            let lhs = if r == 0 { "alpha" } else { "delta0" };
            names.push(format!("mu_{lhs}[{}]", regressor(c)));
        }
        names.push("sigma_lambda[1,1]".into());
        names.push("sigma_lambda[2,1]".into());
        names.push("sigma_lambda[2,2]".into());
        names
    }

    pub fn pack(&self, theta: &StructuralParams, het: &HeterogeneityModel) -> Result<DVector<f64>> {
        theta.validate(&self.design)?;
        het.validate(&self.design)?;
        if het.cohorts != self.cohorts {
            return Err(Error::invalid(
                "heterogeneity",
                "cohort coding differs from the parameter layout",
            ));
        }
        if theta.rho_y.abs() >= 1.0 {
            return Err(Error::invalid(
                "rho_y",
                "must lie in (-1, 1) for estimation",
            ));
        }
        if theta.rho_delta.abs() >= 1.0 {
            return Err(Error::invalid(
                "rho_delta",
                "must lie in (-1, 1) for estimation",
            ));
        }
        if theta.sigma2_u <= 0.0 {
            return Err(Error::invalid("sigma2_u", "must be positive"));
        }
        if theta.sigma2_eps <= 0.0 {
            return Err(Error::invalid("sigma2_eps", "must be positive"));
        }
        match &self.gamma {
            GammaMode::Free if theta.gamma[0] != 0.0 => {
                return Err(Error::invalid(
                    "gamma",
                    "gamma_1 must be 0 when time effects are free",
                ))
            }
            GammaMode::Fixed(g) if *g != theta.gamma => {
                return Err(Error::invalid(
                    "gamma",
                    "differs from the fixed time effects",
                ))
            }
            _ => {}
        }
        let p = self.n_regressors();
        for r in 0..2 {
            for c in 0..p {
                if het.mean_coef[(r, c)] != 0.0 && !self.free_mean.contains(&(r, c)) {
                    return Err(Error::invalid(
                        "heterogeneity mean_coef",
                        format!("pinned entry ({r}, {c}) must be 0"),
                    ));
                }
            }
        }
        let s = &het.cov;
        if s[(0, 0)] <= 0.0 {
            return Err(Error::invalid("sigma_lambda", "must be positive definite"));
        }
        let l11 = s[(0, 0)].sqrt();
        let l21 = s[(1, 0)] / l11;
        let d22 = s[(1, 1)] - l21 * l21;
        if d22 <= 0.0 || (s[(0, 1)] - s[(1, 0)]).abs() > 1e-12 * s.amax() {
            return Err(Error::invalid(
                "sigma_lambda",
                "must be symmetric positive definite",
            ));
        }

        let mut v = Vec::with_capacity(self.n_params());
        v.push(theta.rho_y.atanh());
        v.push(theta.rho_delta.atanh());
        v.extend_from_slice(&theta.beta);
        v.push(theta.sigma2_u.ln());
        v.push(theta.sigma2_eps.ln());
        if let GammaMode::Free = self.gamma {
            v.extend_from_slice(&theta.gamma[1..]);
        }
        v.extend(self.free_mean.iter().map(|&rc| het.mean_coef[rc]));
        v.push(l11.ln());
        v.push(l21);
        v.push(0.5 * d22.ln());
        Ok(DVector::from_vec(v))
    }

    pub fn unpack(&self, v: &DVector<f64>) -> Result<(StructuralParams, HeterogeneityModel)> {
        if v.len() != self.n_params() {
            return Err(Error::dim(
                "packed parameter vector",
                self.n_params(),
                v.len(),
            ));
        }
        let k = self.design.covariates;
        let gamma = match &self.gamma {
            GammaMode::Fixed(g) => g.clone(),
            GammaMode::Free => {
                let mut g = vec![0.0];
                g.extend_from_slice(&v.as_slice()[self.gamma_start()..self.mean_start()]);
                g
            }
        };
        let theta = StructuralParams {
            rho_y: v[0].tanh(),
            rho_delta: v[1].tanh(),
            beta: v.as_slice()[2..2 + k].to_vec(),
            sigma2_u: v[2 + k].exp(),
            sigma2_eps: v[3 + k].exp(),
            gamma,
        };
        let mut mean_coef = DMatrix::zeros(2, self.n_regressors());
        for (i, &rc) in self.free_mean.iter().enumerate() {
            mean_coef[rc] = v[self.mean_start() + i];
        }
        let c = self.chol_start();
        let (l11, l21, l22) = (v[c].exp(), v[c + 1], v[c + 2].exp());
        let cov = Matrix2::new(l11 * l11, l11 * l21, l11 * l21, l21 * l21 + l22 * l22);
        Ok((
            theta,
            HeterogeneityModel {
                mean_coef,
                cov,
                cohorts: self.cohorts.clone(),
            },
        ))
    }

    /// Natural-scale parameters in the order of [`Self::names`].
    pub fn natural(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (theta, het) = self.unpack(v)?;
        let mut out = vec![theta.rho_y, theta.rho_delta];
        out.extend_from_slice(&theta.beta);
        out.push(theta.sigma2_u);
        out.push(theta.sigma2_eps);
        if let GammaMode::Free = self.gamma {
            out.extend_from_slice(&theta.gamma[1..]);
        }
        out.extend(self.free_mean.iter().map(|&rc| het.mean_coef[rc]));
        out.push(het.cov[(0, 0)]);
        out.push(het.cov[(1, 0)]);
        out.push(het.cov[(1, 1)]);
        Ok(DVector::from_vec(out))
    }

    /// Jacobian of [`Self::natural`] with respect to the packed vector.
    pub fn natural_jacobian(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.n_params();
        if v.len() != n {
            return Err(Error::dim("packed parameter vector", n, v.len()));
        }
        let k = self.design.covariates;
        let mut j = DMatrix::identity(n, n);
        j[(0, 0)] = 1.0 - v[0].tanh().powi(2);
        j[(1, 1)] = 1.0 - v[1].tanh().powi(2);
        j[(2 + k, 2 + k)] = v[2 + k].exp();
        j[(3 + k, 3 + k)] = v[3 + k].exp();
        let c = self.chol_start();
        let (a, b, d) = (v[c], v[c + 1], v[c + 2]);
        let (ea, ed) = (a.exp(), d.exp());
        // s11 = e^{2a}; s21 = b e^a; s22 = b^2 + e^{2d}
        j[(c, c)] = 2.0 * ea * ea;
        j[(c + 1, c)] = b * ea;
        j[(c + 1, c + 1)] = ea;
        j[(c + 2, c + 1)] = 2.0 * b;
        j[(c + 2, c + 2)] = 2.0 * ed * ed;
        Ok(j)
    }
}

/// Shift the time effects so `gamma_1 = 0`, moving the level into the
/// intercept of alpha's conditional mean. The outcome law is unchanged.
pub fn normalize_time_effects(theta: &mut StructuralParams, het: &mut HeterogeneityModel) {
    let c = theta.gamma[0];
    theta.gamma.iter_mut().for_each(|g| *g -= c);
    het.mean_coef[(0, 0)] += c;
}
