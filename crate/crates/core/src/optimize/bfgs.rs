//! Dense BFGS minimizer with a backtracking (Armijo) line search.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub struct BfgsOutcome {
    pub x: DVector<f64>,
    pub f: f64,
    pub iterations: usize,
    /// Gradient norm fell below tolerance.
    pub converged: bool,
    /// Line search could not find a decreasing step; best point returned.
    pub line_search_failed: bool,
}

const C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Minimize `f` from `x0`; stops on gradient norm < `grad_tol` or after
/// `max_iters` iterations. With `check_gradient`, the analytic gradient is
/// compared against central finite differences at `x0` before the first step.
pub fn bfgs_minimize<F>(
    mut f: F,
    x0: &DVector<f64>,
    max_iters: usize,
    grad_tol: f64,
    check_gradient: bool,
) -> Result<BfgsOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let dim = x0.len();
    let mut x = x0.clone();
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite("BFGS objective at initial point"));
    }

    if check_gradient {
        let h = 1e-5;
        for i in 0..dim {
            let mut up = x.clone();
            up[i] += h;
            let mut dn = x.clone();
            dn[i] -= h;
            let fd = (f(&up)?.0 - f(&dn)?.0) / (2.0 * h);
            let scale = fd.abs().max(g[i].abs()).max(1.0);
            if (fd - g[i]).abs() > 1e-4 * scale {
                return Err(Error::Other(format!(
                    "gradient check failed at coordinate {i}: analytic {} vs finite difference {fd}",
                    g[i]
                )));
            }
        }
    }

    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut first_update = true;
    let mut line_search_failed = false;
    let mut iterations = 0;

    for _ in 0..max_iters {
        if g.norm() < grad_tol {
            return Ok(BfgsOutcome {
                x,
                f: fx,
                iterations,
                converged: true,
                line_search_failed,
            });
        }
        let p = -(&h_inv * &g);
        let slope = g.dot(&p);
        if !slope.is_finite() {
            line_search_failed = true;
            break;
        }
        if slope >= 0.0 {
            // Direction lost descent property; reset the approximation.
            h_inv = DMatrix::<f64>::identity(dim, dim);
            continue;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = &x + &p * t;
            let (fc, gc) = f(&cand)?;
            if fc.is_finite() && fc <= fx + C1 * t * slope {
                accepted = Some((cand, fc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            line_search_failed = true;
            break;
        };
        iterations += 1;

        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if first_update {
                // Scale the initial inverse Hessian (Nocedal & Wright 6.20).
                let scale = sy / yv.dot(&yv);
                h_inv *= scale;
                first_update = false;
            }
            let rho = 1.0 / sy;
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let hy = &h_inv * &yv;
            let yhy = yv.dot(&hy);
            // Expanded form to avoid building dim x dim temporaries twice.
            let sy_outer = &s * hy.transpose();
            h_inv -= &(&sy_outer * rho);
            h_inv -= &(sy_outer.transpose() * rho);
            h_inv += &(&s * s.transpose() * (rho * rho * yhy + rho));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }

    Ok(BfgsOutcome {
        x,
        f: fx,
        iterations,
        converged: g.norm() < grad_tol,
        line_search_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_converges_immediately() {
        let f = |x: &DVector<f64>| Ok((0.5 * x.dot(x), x.clone()));
        let x0 = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        let out = bfgs_minimize(f, &x0, 2000, 1e-6, false).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= x0.len() + 1, "iterations = {}", out.iterations);
        assert!(out.f < 1e-8);
    }

    #[test]
    fn rosenbrock_reaches_optimum() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (1.0, 100.0);
            let v = (a - x[0]).powi(2) + b * (x[1] - x[0] * x[0]).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (a - x[0]) - 4.0 * b * (x[1] - x[0] * x[0]) * x[0],
                2.0 * b * (x[1] - x[0] * x[0]),
            ]);
            Ok((v, g))
        };
        let x0 = DVector::from_vec(vec![-1.2, 1.0]);
        let out = bfgs_minimize(f, &x0, 2000, 1e-6, true).unwrap();
        assert!(out.f < 1e-6, "final value {}", out.f);
        assert!((out.x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn gradient_check_catches_wrong_gradient() {
        let f = |x: &DVector<f64>| Ok((0.5 * x.dot(x), x.clone() * 2.0));
        let x0 = DVector::from_vec(vec![1.0, 2.0]);
        assert!(bfgs_minimize(f, &x0, 10, 1e-6, true).is_err());
    }

    #[test]
    fn line_search_failure_returns_best_point() {
        // Non-finite away from start: every trial step fails.
        let f = |x: &DVector<f64>| {
            if x[0] == 1.0 {
                Ok((1.0, DVector::from_vec(vec![1000.0])))
            } else {
                Ok((f64::INFINITY, DVector::from_vec(vec![0.0])))
            }
        };
        let x0 = DVector::from_vec(vec![1.0]);
        let out = bfgs_minimize(f, &x0, 10, 1e-6, false).unwrap();
        assert!(out.line_search_failed);
        assert_eq!(out.x[0], 1.0);
    }
}
