//! Adam minimizer over flat parameter vectors.

use nalgebra::DVector;

use crate::error::Result;

/// Stop when the moving average of the objective over `window` epochs
/// improves by less than `tol` relative to the previous window.
#[derive(Debug, Clone, Copy)]
pub struct Plateau {
    pub window: usize,
    pub tol: f64,
}

pub struct AdamOutcome {
    pub best_x: DVector<f64>,
    pub best_f: f64,
    pub iterations: usize,
    /// Objective value at every epoch, for diagnostics.
    pub trace: Vec<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Minimize `f` starting from `x0`. The closure returns (value, gradient).
pub fn adam_minimize<F>(
    mut f: F,
    x0: &DVector<f64>,
    lr: f64,
    max_epochs: usize,
    plateau: Option<Plateau>,
) -> Result<AdamOutcome>
where
    F: FnMut(usize, &DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let dim = x0.len();
    let mut x = x0.clone();
    let mut m = DVector::<f64>::zeros(dim);
    let mut v = DVector::<f64>::zeros(dim);
    let mut best_x = x.clone();
    let mut best_f = f64::INFINITY;
    let mut trace = Vec::with_capacity(max_epochs.min(1 << 16));
    let mut iterations = 0;
    let mut lr_mult: f64 = 1.0;

    for t in 0..max_epochs {
        let (fx, g) = f(t, &x)?;
        trace.push(fx);
        let bad = !fx.is_finite() || g.iter().any(|gi| !gi.is_finite());
        if bad {
            // Stepped into a numerically invalid region: rewind to the best
            // point seen, reset the moments, and shrink the step.
            iterations = t + 1;
            if best_f.is_finite() {
                x.copy_from(&best_x);
                m.fill(0.0);
                v.fill(0.0);
                lr_mult = (lr_mult * 0.5).max(1e-6);
            }
            continue;
        }
        if fx < best_f {
            best_f = fx;
            best_x = x.clone();
        }
        iterations = t + 1;

        let step_scale = lr * lr_mult * (1.0 - BETA2.powi(t as i32 + 1)).sqrt()
            / (1.0 - BETA1.powi(t as i32 + 1));
        for i in 0..dim {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            x[i] -= step_scale * m[i] / (v[i].sqrt() + EPS);
        }

        if let Some(p) = plateau {
            if trace.len() >= 2 * p.window {
                let last = &trace[trace.len() - p.window..];
                let prev = &trace[trace.len() - 2 * p.window..trace.len() - p.window];
                let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
                if mean(prev) - mean(last) < p.tol {
                    break;
                }
            }
        }
    }

    Ok(AdamOutcome {
        best_x,
        best_f,
        iterations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let f = |_t: usize, x: &DVector<f64>| {
            let v = 0.5 * x.dot(x);
            Ok((v, x.clone()))
        };
        let x0 = DVector::from_vec(vec![3.0, -2.0, 1.0]);
        let out = adam_minimize(f, &x0, 0.1, 2000, None).unwrap();
        assert!(out.best_f < 1e-6, "best_f = {}", out.best_f);
    }

    #[test]
    fn plateau_stops_early() {
        let f = |_t: usize, x: &DVector<f64>| Ok((0.5 * x.dot(x), x.clone()));
        let x0 = DVector::from_vec(vec![1.0]);
        let out = adam_minimize(
            f,
            &x0,
            0.05,
            100_000,
            Some(Plateau {
                window: 50,
                tol: 1e-3,
            }),
        )
        .unwrap();
        assert!(out.iterations < 100_000);
    }
}
