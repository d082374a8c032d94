//! Quasi-Newton maximization in log coordinates and Fisher standard errors.

use super::MleProblem;
use crate::error::{Error, Result};
use crate::model::PointProcessSpec;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaximizeOptions {
    pub max_iter: usize,
    /// Convergence threshold on the ∞-norm of the log-coordinate gradient.
    pub grad_tol: f64,
    /// Largest move of any `ln θ` in one line search.
    pub max_step: f64,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
}

impl Default for MaximizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            max_step: 1.0,
            armijo: 1e-4,
        }
    }
}

/// Result of [`maximize`]. A fit that stops early is returned with
/// `converged = false` rather than as an error.
#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub spec: PointProcessSpec,
    pub theta: Vec<f64>,
    pub ln_l: f64,
    pub init_ln_l: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf_norm: f64,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS on `u = ln θ` with a backtracking Armijo line search. Steps that
/// lower `ln L` are never accepted, so the returned value is never below
/// the starting one. The fit converges when the gradient is below
/// `grad_tol` or when the predicted gain drops below the rounding of `ln L`.
pub fn maximize(
    problem: &MleProblem,
    init: &PointProcessSpec,
    opts: &MaximizeOptions,
) -> Result<MleFit> {
    let theta0 = problem.theta_of(init);
    if theta0.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidInput(
            "initial parameters must be positive and finite".into(),
        ));
    }
    let p = theta0.len();
    let eval = |u: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let theta: Vec<f64> = u.iter().map(|v| v.exp()).collect();
        match problem.loglik_and_grad(&theta) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|x| x.is_finite()) => {
                Some((f, DVector::from_vec(g)))
            }
            _ => None,
        }
    };
    let mut u = DVector::from_iterator(p, theta0.iter().map(|t| t.ln()));
    let mut theta = theta0.clone();
    let (mut f, mut g) = problem
        .loglik_and_grad(&theta0)
        .map(|(f, g)| (f, DVector::from_vec(g)))?;
    if !f.is_finite() {
        return Err(Error::InvalidInput(
            "log-likelihood is not finite at the initial point".into(),
        ));
    }
    let init_ln_l = f;
    let mut hinv = DMatrix::<f64>::identity(p, p);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = inf_norm(&g) < opts.grad_tol;
    while !converged && iterations < opts.max_iter {
        let mut d = &hinv * &g;
        let mut slope = d.dot(&g);
        if !(slope > 0.0) {
            hinv = DMatrix::identity(p, p);
            fresh = true;
            d = g.clone();
            slope = d.dot(&g);
        }
        let mut alpha = (opts.max_step / inf_norm(&d)).min(1.0);
        let mut accepted = None;
        while alpha * inf_norm(&d) > 1e-14 {
            let trial = &u + alpha * &d;
            if let Some((ft, gt)) = eval(&trial) {
                // Near the optimum the gain drops below the rounding of ln L,
                // so a non-decreasing step that shrinks the gradient also counts.
                if ft > f + opts.armijo * alpha * slope || (ft >= f && inf_norm(&gt) < inf_norm(&g))
                {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((u_new, f_new, g_new)) = accepted else {
            // When the quadratic model promises less than the rounding of
            // ln L, no line search can see progress: the optimum is reached.
            if !fresh && 0.5 * slope < 1e3 * f64::EPSILON * f.abs().max(1.0) {
                converged = true;
                break;
            }
            if fresh {
                break;
            }
            hinv = DMatrix::identity(p, p);
            fresh = true;
            continue;
        };
        iterations += 1;
        let s = &u_new - &u;
        // Gradient change of −ln L.
        let y = &g - &g_new;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                hinv *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (rho * rho * yhy + rho) * &s * s.transpose()
                - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
        theta = u_new.iter().map(|v| v.exp()).collect();
        u = u_new;
        f = f_new;
        g = g_new;
        converged = inf_norm(&g) < opts.grad_tol;
    }
    if !converged {
        log::warn!(
            "likelihood maximization stopped after {iterations} iterations with gradient {:.3e}",
            inf_norm(&g)
        );
    }
    Ok(MleFit {
        spec: problem.spec_of(&theta),
        theta,
        ln_l: f,
        init_ln_l,
        iterations,
        converged,
        grad_inf_norm: inf_norm(&g),
    })
}

/// Standard errors of `θ` from the observed information. The Hessian in
/// log coordinates is a central difference of the analytic gradient and is
/// mapped back by the delta method. Returns `NaN` entries when the
/// information is not positive definite.
pub fn fisher_standard_errors(problem: &MleProblem, theta: &[f64]) -> Result<Vec<f64>> {
    let p = theta.len();
    let h = 1e-4;
    let grad_at = |k: usize, sign: f64| -> Result<Vec<f64>> {
        let t: Vec<f64> = theta
            .iter()
            .enumerate()
            .map(|(m, v)| if m == k { v * (sign * h).exp() } else { *v })
            .collect();
        Ok(problem.loglik_and_grad(&t)?.1)
    };
    let mut hess = DMatrix::<f64>::zeros(p, p);
    for k in 0..p {
        let (gp, gm) = (grad_at(k, 1.0)?, grad_at(k, -1.0)?);
        for m in 0..p {
            hess[(m, k)] = (gp[m] - gm[m]) / (2.0 * h);
        }
    }
    let info = -0.5 * (&hess + hess.transpose());
    match info.cholesky() {
        Some(ch) => {
            let cov = ch.inverse();
            Ok((0..p).map(|k| theta[k] * cov[(k, k)].sqrt()).collect())
        }
        None => {
            log::warn!("observed information is not positive definite");
            Ok(vec![f64::NAN; p])
        }
    }
}
