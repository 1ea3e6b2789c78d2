//! Derivative-free-friendly minimizers: BFGS on finite-difference gradients
//! with Armijo backtracking, followed by a Nelder-Mead polish.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Relative objective change that, together with `xtol`, stops BFGS.
    pub ftol: f64,
    /// Largest packed-scale step that, together with `ftol`, stops BFGS.
    pub xtol: f64,
    /// Gradient sup-norm at which BFGS stops immediately.
    pub gtol: f64,
    /// Gradient sup-norm required to report convergence.
    pub stationarity_tol: f64,
    /// Relative step for central differences.
    pub fd_step: f64,
    /// Seed the inverse Hessian from a finite-difference Hessian.
    pub hessian_init: bool,
    /// Function evaluations allowed for the Nelder-Mead polish (0 disables it).
    pub polish_evals: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-9,
            xtol: 1e-7,
            gtol: 1e-6,
            stationarity_tol: 1e-4,
            fd_step: 1e-5,
            hessian_init: true,
            polish_evals: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub converged: bool,
    /// BFGS iterations (gradient steps) taken.
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    /// `(iteration, objective)` after each accepted step.
    pub trace: Vec<(usize, f64)>,
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&DVector<f64>) -> f64> Counted<F> {
    fn call(&mut self, x: &DVector<f64>) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

fn step_for(x: f64, h: f64) -> f64 {
    h * x.abs().max(1.0)
}

/// Central-difference gradient.
pub fn fd_gradient(
    mut f: impl FnMut(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let hi = step_for(x[i], h);
        xp[i] = x[i] + hi;
        let up = f(&xp);
        xp[i] = x[i] - hi;
        let dn = f(&xp);
        xp[i] = x[i];
        g[i] = (up - dn) / (2.0 * hi);
    }
    g
}

/// Central-difference Hessian, symmetrized.
pub fn fd_hessian(
    mut f: impl FnMut(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let f0 = f(x);
    let steps: Vec<f64> = (0..n).map(|i| step_for(x[i], h)).collect();
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for i in 0..n {
        xp[i] = x[i] + steps[i];
        let up = f(&xp);
        xp[i] = x[i] - steps[i];
        let dn = f(&xp);
        xp[i] = x[i];
        hess[(i, i)] = (up - 2.0 * f0 + dn) / (steps[i] * steps[i]);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                xp[i] = x[i] + si * steps[i];
                xp[j] = x[j] + sj * steps[j];
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                / (4.0 * steps[i] * steps[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

fn inverse_if_pd(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    nalgebra::Cholesky::new(h.clone()).map(|c| c.inverse())
}

/// Quasi-Newton minimization followed by an optional Nelder-Mead polish.
pub fn minimize(
    f: impl FnMut(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    opts: &OptimOptions,
) -> OptimResult {
    let mut obj = Counted { f, evals: 0 };
    let n = x0.len();
    let mut x = x0.clone();
    let mut fx = obj.call(&x);
    let mut trace = vec![(0, fx)];
    if !fx.is_finite() {
        return OptimResult {
            x,
            f: fx,
            converged: false,
            iterations: 0,
            evaluations: obj.evals,
            grad_norm: f64::INFINITY,
            trace,
        };
    }

    let h = opts.fd_step;
    let fresh_inverse = |obj: &mut Counted<_>, x: &DVector<f64>| -> Option<DMatrix<f64>> {
        if opts.hessian_init {
            inverse_if_pd(&fd_hessian(|z| obj.call(z), x, 1e-4))
        } else {
            None
        }
    };
    let mut g = fd_gradient(|z| obj.call(z), &x, h);
    let mut hinv = fresh_inverse(&mut obj, &x);
    let mut scaled = hinv.is_some();
    let mut hinv_m = hinv.take().unwrap_or_else(|| DMatrix::identity(n, n));
    let mut restarted_here = false;
    let mut iterations = 0;
    let mut stopped = g.amax() <= opts.gtol;

    while !stopped && iterations < opts.max_iter {
        let mut d = -(&hinv_m * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            hinv_m = DMatrix::identity(n, n);
            scaled = false;
            d = -g.clone();
            slope = g.dot(&d);
        }
        // Armijo backtracking
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * alpha;
            let fnew = obj.call(&xn);
            if fnew <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if restarted_here {
                break;
            }
            // Line search failed: rebuild curvature information once.
            restarted_here = true;
            match fresh_inverse(&mut obj, &x) {
                Some(m) => {
                    hinv_m = m;
                    scaled = true;
                }
                None => {
                    hinv_m = DMatrix::identity(n, n) * (1.0 / g.amax().max(1.0));
                    scaled = true;
                }
            }
            continue;
        };
        restarted_here = false;
        iterations += 1;
        let gn = fd_gradient(|z| obj.call(z), &xn, h);
        let s = &xn - &x;
        let y = &gn - &g;
        let rel_df = (fx - fnew).abs() / fx.abs().max(1.0);
        let step = s.amax();
        x = xn;
        fx = fnew;
        g = gn;
        trace.push((iterations, fx));

        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                hinv_m = DMatrix::identity(n, n) * (sy / y.norm_squared());
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &hinv_m * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 yhy + rho) s s'
            hinv_m -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            hinv_m += &s * s.transpose() * (rho * rho * yhy + rho);
        }
        if g.amax() <= opts.gtol || (rel_df < opts.ftol && step < opts.xtol) {
            stopped = true;
        }
    }

    if opts.polish_evals > 0 {
        let (xp, fp, evals) = nelder_mead(|z| obj.call(z), &x, fx, opts.polish_evals, 1e-3);
        let _ = evals;
        if fp < fx {
            x = xp;
            fx = fp;
            g = fd_gradient(|z| obj.call(z), &x, h);
            trace.push((iterations + 1, fx));
        }
    }

    let grad_norm = g.amax();
    OptimResult {
        x,
        f: fx,
        converged: stopped && grad_norm <= opts.stationarity_tol,
        iterations,
        evaluations: obj.evals,
        grad_norm,
        trace,
    }
}

/// Adaptive Nelder-Mead (dimension-dependent coefficients). Returns the best
/// vertex, its value and the evaluations used.
pub fn nelder_mead(
    mut f: impl FnMut(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    f0: f64,
    max_evals: usize,
    rel_step: f64,
) -> (DVector<f64>, f64, usize) {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let mut simplex: Vec<(DVector<f64>, f64)> = vec![(x0.clone(), f0)];
    let mut evals = 0;
    for i in 0..n {
        let mut v = x0.clone();
        v[i] += rel_step * x0[i].abs().max(1.0);
        let fv = f(&v);
        evals += 1;
        simplex.push((v, fv));
    }
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= 1e-15 * best.abs().max(1.0) {
            break;
        }
        let centroid = simplex[..n]
            .iter()
            .fold(DVector::zeros(n), |acc, (v, _)| acc + v)
            / nf;
        let xr = &centroid + (&centroid - &simplex[n].0) * alpha;
        let fr = f(&xr);
        evals += 1;
        if fr < best {
            let xe = &centroid + (&xr - &centroid) * gamma;
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let xc = &centroid + (&xr - &centroid) * rho;
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = &centroid + (&simplex[n].0 - &centroid) * rho;
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < worst.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for (v, fv) in simplex.iter_mut().skip(1) {
                    *v = &x_best + (&*v - &x_best) * sigma;
                    *fv = f(v);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, evals)
}
