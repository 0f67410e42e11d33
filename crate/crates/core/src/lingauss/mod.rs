//! Closed-form linear-Gaussian Bayesian causal models: causal/anti-causal
//! parameter translation, the normalization transform, marginal-likelihood
//! computation under conjugate priors, and the normal-Wishart separability
//! sampling test.

mod bge;
mod dcor;

pub use bge::{bge_separability_test, BgePrior, BgeReport};
pub use dcor::{distance_correlation, permutation_pvalue};

use serde::{Deserialize, Serialize};

use crate::data::Direction;
use crate::error::{Error, Result};
use crate::linalg::ln_gamma;
use crate::quadrature::gauss_legendre;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Parameters of the causal factorisation X ~ N(a0, sigma0^2),
/// Y|X ~ N(a1 X, sigma1^2).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinGaussParams {
    pub a0: f64,
    pub sigma0: f64,
    pub a1: f64,
    pub sigma1: f64,
}

impl LinGaussParams {
    pub fn new(a0: f64, sigma0: f64, a1: f64, sigma1: f64) -> Result<Self> {
        if sigma0 <= 0.0 || sigma1 <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma".into(),
                reason: "scales must be strictly positive".into(),
            });
        }
        Ok(Self {
            a0,
            sigma0,
            a1,
            sigma1,
        })
    }

    /// Mean vector and covariance of the implied joint (X, Y).
    pub fn joint_moments(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let v0 = self.sigma0 * self.sigma0;
        let v1 = self.sigma1 * self.sigma1;
        let mean = [self.a0, self.a1 * self.a0];
        let cov = [
            [v0, self.a1 * v0],
            [self.a1 * v0, v1 + self.a1 * self.a1 * v0],
        ];
        (mean, cov)
    }
}

/// Parameters of the anti-causal factorisation of the same joint:
/// Y ~ N(marg_mean, marg_var), X|Y ~ N(cond_gain Y + cond_offset, cond_var).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AntiCausalParams {
    pub marg_mean: f64,
    pub marg_var: f64,
    pub cond_gain: f64,
    pub cond_offset: f64,
    pub cond_var: f64,
}

/// Exact closed-form translation to the anti-causal factorisation.
pub fn anti_causal(p: &LinGaussParams) -> AntiCausalParams {
    let v0 = p.sigma0 * p.sigma0;
    let v1 = p.sigma1 * p.sigma1;
    let marg_var = v1 + p.a1 * p.a1 * v0;
    let cond_var = v0 * v1 / marg_var;
    AntiCausalParams {
        marg_mean: p.a1 * p.a0,
        marg_var,
        cond_gain: cond_var * (p.a1 / v1),
        cond_offset: cond_var * (p.a0 / v0),
        cond_var,
    }
}

impl AntiCausalParams {
    /// Joint (X, Y) moments reconstructed from the anti-causal direction.
    pub fn joint_moments(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let mean_x = self.cond_gain * self.marg_mean + self.cond_offset;
        let var_x = self.cond_gain * self.cond_gain * self.marg_var + self.cond_var;
        let cov_xy = self.cond_gain * self.marg_var;
        (
            [mean_x, self.marg_mean],
            [[var_x, cov_xy], [cov_xy, self.marg_var]],
        )
    }
}

fn ln_normal(v: f64, mean: f64, var: f64) -> f64 {
    let d = v - mean;
    -0.5 * (LN_2PI + var.ln()) - 0.5 * d * d / var
}

/// Log joint density via the causal factorisation.
pub fn log_density_causal(p: &LinGaussParams, x: f64, y: f64) -> f64 {
    ln_normal(x, p.a0, p.sigma0 * p.sigma0) + ln_normal(y, p.a1 * x, p.sigma1 * p.sigma1)
}

/// Log joint density via the anti-causal factorisation.
pub fn log_density_anticausal(a: &AntiCausalParams, x: f64, y: f64) -> f64 {
    ln_normal(y, a.marg_mean, a.marg_var)
        + ln_normal(x, a.cond_gain * y + a.cond_offset, a.cond_var)
}

/// Conditional of the normalized model: both normalized marginals are
/// standard normal and the forward and backward conditionals coincide.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormalizedConditional {
    pub gain: f64,
    pub variance: f64,
}

pub fn normalize_model(p: &LinGaussParams) -> NormalizedConditional {
    let v0 = p.sigma0 * p.sigma0;
    let v1 = p.sigma1 * p.sigma1;
    let denom = v1 + v0 * p.a1 * p.a1;
    NormalizedConditional {
        gain: p.sigma0 * p.a1 / denom.sqrt(),
        variance: v1 / denom,
    }
}

/// Prior specification for the analytic evidence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum EvidencePrior {
    /// Normalized model family: the cause marginal is exactly N(0,1) and the
    /// conditional is N(c * cause, 1 - c^2) with a uniform prior on
    /// c in (-1, 1). The integral over c uses fixed Gauss-Legendre
    /// quadrature.
    Normalized { quadrature_nodes: usize },
    /// Unnormalized conjugate family with zero means: cause precision
    /// ~ Gamma(cause_shape, cause_rate); conditional slope | noise
    /// ~ N(0, slope_scale * noise_variance) and noise precision
    /// ~ Gamma(noise_shape, noise_rate).
    Conjugate {
        slope_scale: f64,
        noise_shape: f64,
        noise_rate: f64,
        cause_shape: f64,
        cause_rate: f64,
    },
}

impl Default for EvidencePrior {
    fn default() -> Self {
        EvidencePrior::Conjugate {
            slope_scale: 1.0,
            noise_shape: 2.0,
            noise_rate: 2.0,
            cause_shape: 2.0,
            cause_rate: 2.0,
        }
    }
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + vals.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Log marginal likelihood of the dataset under the chosen direction with
/// the same prior applied to mirrored roles in both directions.
pub fn evidence(x: &[f64], y: &[f64], direction: Direction, prior: &EvidencePrior) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "evidence data",
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n == 0 {
        // Empty product: evidence 1.
        return Ok(0.0);
    }
    let (cause, effect) = match direction {
        Direction::XtoY => (x, y),
        Direction::YtoX => (y, x),
    };
    if n >= 2 {
        for (col, name) in [(cause, "cause"), (effect, "effect")] {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            if var <= f64::EPSILON * (mean * mean + 1.0) {
                return Err(Error::ZeroVariance {
                    column: if name == "cause" { "cause" } else { "effect" },
                });
            }
        }
    }
    match prior {
        EvidencePrior::Normalized { quadrature_nodes } => {
            let nodes = (*quadrature_nodes).max(16);
            let (cs, ws) = gauss_legendre(nodes);
            let log_marg: f64 = cause.iter().map(|&v| ln_normal(v, 0.0, 1.0)).sum();
            let mut terms = Vec::with_capacity(nodes);
            for (c, w) in cs.iter().zip(&ws) {
                let var = 1.0 - c * c;
                let ll: f64 = cause
                    .iter()
                    .zip(effect)
                    .map(|(&cv, &ev)| ln_normal(ev, c * cv, var))
                    .sum();
                // Uniform prior density 1/2 on (-1, 1).
                terms.push(ll + (w / 2.0).ln());
            }
            Ok(log_marg + log_sum_exp(&terms))
        }
        EvidencePrior::Conjugate {
            slope_scale,
            noise_shape,
            noise_rate,
            cause_shape,
            cause_rate,
        } => {
            let nf = n as f64;
            // Cause marginal: zero-mean Gaussian scale mixture.
            let ss_cause: f64 = cause.iter().map(|v| v * v).sum();
            let log_marg = -0.5 * nf * LN_2PI + cause_shape * cause_rate.ln()
                - ln_gamma(*cause_shape)
                + ln_gamma(cause_shape + 0.5 * nf)
                - (cause_shape + 0.5 * nf) * (cause_rate + 0.5 * ss_cause).ln();
            // Conditional: Bayesian linear regression through the origin.
            let sxx: f64 = cause.iter().map(|v| v * v).sum();
            let sxy: f64 = cause.iter().zip(effect).map(|(a, b)| a * b).sum();
            let syy: f64 = effect.iter().map(|v| v * v).sum();
            let lam0 = 1.0 / slope_scale;
            let lam_n = lam0 + sxx;
            let mu_n = sxy / lam_n;
            let a_n = noise_shape + 0.5 * nf;
            let b_n = noise_rate + 0.5 * (syy - mu_n * mu_n * lam_n);
            let log_cond = -0.5 * nf * LN_2PI + 0.5 * (lam0.ln() - lam_n.ln())
                + noise_shape * noise_rate.ln()
                - ln_gamma(*noise_shape)
                + ln_gamma(a_n)
                - a_n * b_n.ln();
            Ok(log_marg + log_cond)
        }
    }
}

/// One joint-covariance record for external contour plotting.
#[derive(Debug, Clone, Serialize)]
pub struct ContourRow {
    pub draw: usize,
    pub direction: String,
    pub mean_x: f64,
    pub mean_y: f64,
    pub cov_xx: f64,
    pub cov_xy: f64,
    pub cov_yy: f64,
}

/// Sample parameter draws (zero means, inverse-gamma scales, Gaussian slope)
/// and emit the joint covariance implied by each causal direction for the
/// same draw. With `normalized`, the joints are standardized first.
pub fn sample_contours(draws: usize, normalized: bool, seed: u64) -> Vec<ContourRow> {
    use rand_distr::{Distribution, Gamma, StandardNormal};
    let mut rng = crate::seeds::rng_from(seed);
    let gamma = Gamma::new(2.0, 0.5).unwrap(); // shape 2, rate 2
    let mut rows = Vec::with_capacity(draws * 2);
    for d in 0..draws {
        let tau0: f64 = gamma.sample(&mut rng);
        let tau1: f64 = gamma.sample(&mut rng);
        let a1: f64 = StandardNormal.sample(&mut rng);
        let p = LinGaussParams::new(0.0, (1.0 / tau0).sqrt(), a1, (1.0 / tau1).sqrt()).unwrap();
        if normalized {
            let nc = normalize_model(&p);
            for dir in ["XtoY", "YtoX"] {
                rows.push(ContourRow {
                    draw: d,
                    direction: dir.to_string(),
                    mean_x: 0.0,
                    mean_y: 0.0,
                    cov_xx: 1.0,
                    cov_xy: nc.gain,
                    cov_yy: 1.0,
                });
            }
        } else {
            let (m, c) = p.joint_moments();
            rows.push(ContourRow {
                draw: d,
                direction: "XtoY".to_string(),
                mean_x: m[0],
                mean_y: m[1],
                cov_xx: c[0][0],
                cov_xy: c[0][1],
                cov_yy: c[1][1],
            });
            // Same parameters under the mirrored causal model.
            rows.push(ContourRow {
                draw: d,
                direction: "YtoX".to_string(),
                mean_x: m[1],
                mean_y: m[0],
                cov_xx: c[1][1],
                cov_xy: c[0][1],
                cov_yy: c[0][0],
            });
        }
    }
    rows
}

pub fn write_contours_csv(rows: &[ContourRow], path: &std::path::Path) -> Result<()> {
    let mut out = String::from("draw,direction,mean_x,mean_y,cov_xx,cov_xy,cov_yy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.draw, r.direction, r.mean_x, r.mean_y, r.cov_xx, r.cov_xy, r.cov_yy
        ));
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
