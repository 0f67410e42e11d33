//! Closed-form expectation of a unit-lengthscale RBF kernel under a bivariate
//! Gaussian: the anti-causal kernel expectation used to show that the reverse
//! factorisation of a GPLVM couples its latent functions.

use crate::error::{Error, Result};

/// E[k(y_n, y_m)] for (y_n, y_m) ~ N(0, [[k11, k12], [k12, k22]]) and
/// k(y, y') = exp(-(y - y')^2 / 2).
///
/// The 2x2 block must be positive definite.
pub fn psi_anticausal_element(k11: f64, k12: f64, k22: f64) -> Result<f64> {
    let det = k11 * k22 - k12 * k12;
    if !(k11 > 0.0 && k22 > 0.0) || det <= 1e-10 * k11.abs().max(k22.abs()).max(1.0) {
        return Err(Error::InvalidParameter {
            name: "k block".into(),
            reason: format!("2x2 block not positive definite (det = {det:e})"),
        });
    }
    let mu = k12 / k22;
    let sigma = det / k22; // conditional variance of y_n given y_m
    let eta = 1.0 / (1.0 / sigma + 1.0);
    let rho = eta * (mu - 1.0) * (mu - 1.0) / sigma;
    Ok(eta.sqrt() / (det.sqrt() * (1.0 / k22 + rho).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Monte-Carlo oracle for the expectation.
    fn mc_oracle(k11: f64, k12: f64, k22: f64, samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = crate::seeds::rng_from(seed);
        // Cholesky of the 2x2 block.
        let l11 = k11.sqrt();
        let l21 = k12 / l11;
        let l22 = (k22 - l21 * l21).sqrt();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..samples {
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let yn = l11 * e1;
            let ym = l21 * e1 + l22 * e2;
            let k = (-(yn - ym) * (yn - ym) / 2.0).exp();
            sum += k;
            sum_sq += k * k;
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean) / n;
        (mean, var.sqrt())
    }

    #[test]
    fn independent_unit_block_matches_monte_carlo() {
        // k12 = 0, k11 = k22 = 1: analytic value is 1/sqrt(3).
        let value = psi_anticausal_element(1.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(value, 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        let (mc, se) = mc_oracle(1.0, 0.0, 1.0, 1_000_000, 99);
        assert!(
            (value - mc).abs() <= 3.0 * se,
            "closed form {value} vs MC {mc} +- {se}"
        );
    }

    #[test]
    fn random_blocks_match_monte_carlo() {
        let mut rng = crate::seeds::rng_from(5);
        for rep in 0..5 {
            let k11: f64 = rng.random_range(0.5..2.0);
            let k22: f64 = rng.random_range(0.5..2.0);
            let corr: f64 = rng.random_range(-0.8..0.8);
            let k12 = corr * (k11 * k22).sqrt();
            let value = psi_anticausal_element(k11, k12, k22).unwrap();
            let (mc, se) = mc_oracle(k11, k12, k22, 1_000_000, 100 + rep);
            assert!(
                (value - mc).abs() <= 3.0 * se,
                "closed form {value} vs MC {mc} +- {se}"
            );
        }
    }

    #[test]
    fn depends_on_first_diagonal_entry() {
        let a = psi_anticausal_element(1.0, 0.3, 1.0).unwrap();
        let b = psi_anticausal_element(2.0, 0.3, 1.0).unwrap();
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn near_singular_block_is_rejected() {
        assert!(psi_anticausal_element(1.0, 1.0, 1.0).is_err());
        assert!(psi_anticausal_element(1.0, 0.999_999_999_999, 1.0).is_err());
        assert!(psi_anticausal_element(-1.0, 0.0, 1.0).is_err());
    }
}
