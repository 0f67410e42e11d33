//! Normal-Wishart sampling test of prior separability.
//!
//! Under a normal-Wishart prior on the joint Gaussian, the cause-marginal
//! parameter mu_1 is exactly independent of the anti-causal construct
//! mu_2 + W_21 W_22^{-1} mu_1; a non-conjugate control prior breaks the
//! independence and the test must detect that.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::Serialize;

use super::dcor::permutation_pvalue;
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone)]
pub enum BgePrior {
    /// W ~ Wishart(dof, scale I), mu | W ~ N(eta, (gamma W)^{-1}).
    NormalWishart {
        dof: f64,
        scale: f64,
        gamma: f64,
        eta: [f64; 2],
    },
    /// Degenerate diagonal case: both Wishart blocks collapse to 1-D gammas
    /// and the off-diagonal is zero; independence still holds.
    DiagonalNormalGamma { shape: f64, rate: f64, gamma: f64 },
    /// Deliberately non-conjugate control: independent gammas on the W
    /// diagonal, a random off-diagonal coupling, and mu independent of W.
    Control { shape: f64, rate: f64 },
}

impl BgePrior {
    pub fn normal_wishart() -> Self {
        BgePrior::NormalWishart {
            dof: 4.0,
            scale: 1.0,
            gamma: 1.0,
            eta: [0.0, 0.0],
        }
    }

    pub fn control() -> Self {
        BgePrior::Control {
            shape: 2.0,
            rate: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BgeReport {
    pub samples: usize,
    pub corr: f64,
    pub corr_threshold: f64,
    pub dcor: f64,
    pub p_value: f64,
    /// Independence rejected at alpha = 0.01.
    pub rejected: bool,
}

/// Bartlett draw of a 2x2 Wishart(dof, scale * I).
fn sample_wishart_2x2<R: Rng>(rng: &mut R, dof: f64, scale: f64) -> [[f64; 2]; 2] {
    let c1 = ChiSquared::new(dof).unwrap();
    let c2 = ChiSquared::new(dof - 1.0).unwrap();
    let a11 = c1.sample(rng).sqrt();
    let a22 = c2.sample(rng).sqrt();
    let a21: f64 = StandardNormal.sample(rng);
    // W = s * A A^T with A = [[a11, 0], [a21, a22]].
    let w11 = scale * a11 * a11;
    let w21 = scale * a21 * a11;
    let w22 = scale * (a21 * a21 + a22 * a22);
    [[w11, w21], [w21, w22]]
}

/// Sample the statistic pair (mu_1, mu_2 + W_21 W_22^{-1} mu_1) and report
/// correlation plus a distance-correlation permutation test.
pub fn bge_separability_test(prior: &BgePrior, s: usize, seed: u64) -> Result<BgeReport> {
    if s < 1000 {
        return Err(Error::InvalidParameter {
            name: "s".into(),
            reason: "need at least 1000 samples".into(),
        });
    }
    let mut rng = seeds::rng_from(seed);
    let mut u = Vec::with_capacity(s);
    let mut v = Vec::with_capacity(s);
    for _ in 0..s {
        let (mu1, mu2, w21_over_w22) = match prior {
            BgePrior::NormalWishart {
                dof,
                scale,
                gamma,
                eta,
            } => {
                let w = sample_wishart_2x2(&mut rng, *dof, *scale);
                // mu = eta + gamma^{-1/2} L^{-T} zeta for W = L L^T.
                let l11 = w[0][0].sqrt();
                let l21 = w[1][0] / l11;
                let l22 = (w[1][1] - l21 * l21).sqrt();
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                // Solve L^T m = z.
                let m2 = z2 / l22;
                let m1 = (z1 - l21 * m2) / l11;
                let g = gamma.sqrt();
                (eta[0] + m1 / g, eta[1] + m2 / g, w[1][0] / w[1][1])
            }
            BgePrior::DiagonalNormalGamma { shape, rate, gamma } => {
                let gdist = Gamma::new(*shape, 1.0 / rate).unwrap();
                let w11: f64 = gdist.sample(&mut rng);
                let w22: f64 = gdist.sample(&mut rng);
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                (
                    z1 / (gamma * w11).sqrt(),
                    z2 / (gamma * w22).sqrt(),
                    0.0,
                )
            }
            BgePrior::Control { shape, rate } => {
                let gdist = Gamma::new(*shape, 1.0 / rate).unwrap();
                let w11: f64 = gdist.sample(&mut rng);
                let w22: f64 = gdist.sample(&mut rng);
                let mag: f64 = rng.random_range(0.6..0.95);
                let t = if rng.random_range(0.0..1.0) < 0.5 { mag } else { -mag };
                let w21 = t * (w11 * w22).sqrt();
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                (z1, z2, w21 / w22)
            }
        };
        u.push(mu1);
        v.push(mu2 + w21_over_w22 * mu1);
    }

    // Pearson correlation over all samples.
    let n = s as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vu = 0.0;
    let mut vv = 0.0;
    for (a, b) in u.iter().zip(&v) {
        cov += (a - mu) * (b - mv);
        vu += (a - mu) * (a - mu);
        vv += (b - mv) * (b - mv);
    }
    let corr = cov / (vu.sqrt() * vv.sqrt());

    // Distance correlation on a subsample, permutation-calibrated.
    let n_sub = s.min(2000);
    let (dcor, p_value) = permutation_pvalue(
        &u[..n_sub],
        &v[..n_sub],
        499,
        seeds::derive(seed, "dcor-perm", 0),
    );
    Ok(BgeReport {
        samples: s,
        corr,
        corr_threshold: 3.0 / n.sqrt(),
        dcor,
        p_value,
        rejected: p_value <= 0.01,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_wishart_statistics_are_independent() {
        let report = bge_separability_test(&BgePrior::normal_wishart(), 100_000, 31).unwrap();
        assert!(report.corr.abs() < 0.01, "corr = {}", report.corr);
        assert!(!report.rejected, "p = {}", report.p_value);
    }

    #[test]
    fn control_prior_is_rejected() {
        let report = bge_separability_test(&BgePrior::control(), 100_000, 32).unwrap();
        assert!(report.rejected, "p = {}", report.p_value);
    }

    #[test]
    fn degenerate_diagonal_case_stays_independent() {
        let prior = BgePrior::DiagonalNormalGamma {
            shape: 2.0,
            rate: 2.0,
            gamma: 1.0,
        };
        let report = bge_separability_test(&prior, 20_000, 33).unwrap();
        assert!(report.corr.abs() < 0.03, "corr = {}", report.corr);
        assert!(!report.rejected, "p = {}", report.p_value);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(bge_separability_test(&BgePrior::normal_wishart(), 10, 1).is_err());
    }
}
