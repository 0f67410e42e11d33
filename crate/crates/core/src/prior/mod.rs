//! Sampling synthetic datasets from a Bayesian causal model's prior and the
//! statistical test of asymmetry: Monte-Carlo estimation of the probability
//! of error with its variance bound, plus total-variation identities on
//! discrete distributions.

mod dip;

pub use dip::{dip_pvalue, dip_statistic};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Direction};
use crate::decision::Verdict;
use crate::error::{Error, Result};
use crate::gp::Hyperparams;
use crate::kernels::{eval_gram, KernelSpec};
use crate::linalg::robust_cholesky;
use crate::optimize::sample_init_hyper;
use crate::seeds;

/// Configuration for prior-predictive sampling and the probability-of-error
/// test. The hyperparameter prior is the restart initialization sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorSampleConfig {
    pub direction: Direction,
    /// Samples per dataset.
    pub n: usize,
    /// Number of datasets.
    pub t: usize,
    pub seed: u64,
}

/// Draw one function realization f ~ GP(0, K) at the given inputs and add
/// likelihood noise.
fn gp_draw<R: Rng>(
    rng: &mut R,
    spec: &KernelSpec,
    hyper: &Hyperparams,
    inputs: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let n = inputs.nrows();
    let k = eval_gram(spec, &hyper.kernel, inputs, inputs)?;
    let (chol, _) = robust_cholesky(&k)?;
    let eps = DVector::from_fn(n, |_, _| {
        let e: f64 = StandardNormal.sample(rng);
        e
    });
    let f = chol.l() * eps;
    let noise_sd = hyper.noise_variance().sqrt();
    Ok((0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(rng);
            f[i] + noise_sd * e
        })
        .collect())
}

/// Ancestral sample from the GPLVM causal model with explicit
/// hyperparameters: cause = g(v) + noise with v ~ N(0, I), effect =
/// f(cause, w) + noise with w ~ N(0, I).
pub fn sample_gplvm_dataset_with_hyper(
    direction: Direction,
    n: usize,
    hyper_marg: &Hyperparams,
    hyper_cond: &Hyperparams,
    seed: u64,
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidParameter {
            name: "n".into(),
            reason: "need at least 2 samples per dataset".into(),
        });
    }
    let mut rng = seeds::rng_from(seed);
    let marg_spec = KernelSpec::rbf_linear(1);
    let cond_spec = KernelSpec::rbf_linear(2);

    let v = DMatrix::from_fn(n, 1, |_, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        e
    });
    let cause = gp_draw(&mut rng, &marg_spec, hyper_marg, &v)?;

    let mut aug = DMatrix::<f64>::zeros(n, 2);
    for i in 0..n {
        aug[(i, 0)] = cause[i];
        let w: f64 = StandardNormal.sample(&mut rng);
        aug[(i, 1)] = w;
    }
    let effect = gp_draw(&mut rng, &cond_spec, hyper_cond, &aug)?;

    let (x, y) = match direction {
        Direction::XtoY => (cause, effect),
        Direction::YtoX => (effect, cause),
    };
    Dataset::new(format!("gplvm-prior-{seed}"), x, y).map(|d| d.with_label(direction))
}

/// Ancestral sample with hyperparameters drawn from the restart prior.
pub fn sample_gplvm_dataset(direction: Direction, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = seeds::rng_from(seeds::derive(seed, "hyper-prior", 0));
    let hyper_marg = sample_init_hyper(&mut rng, &KernelSpec::rbf_linear(1));
    let hyper_cond = sample_init_hyper(&mut rng, &KernelSpec::rbf_linear(2));
    sample_gplvm_dataset_with_hyper(direction, n, &hyper_marg, &hyper_cond, seed)
}

/// Sample from the linear-Gaussian causal model: cause ~ N(a0, sigma0^2),
/// effect | cause ~ N(a1 * cause, sigma1^2).
pub fn sample_linear_gaussian_dataset(
    direction: Direction,
    a0: f64,
    a1: f64,
    sigma0: f64,
    sigma1: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if sigma0 <= 0.0 || sigma1 <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma".into(),
            reason: "scales must be positive".into(),
        });
    }
    let mut rng = seeds::rng_from(seed);
    let mut cause = Vec::with_capacity(n);
    let mut effect = Vec::with_capacity(n);
    for _ in 0..n {
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        let c = a0 + sigma0 * e1;
        cause.push(c);
        effect.push(a1 * c + sigma1 * e2);
    }
    let (x, y) = match direction {
        Direction::XtoY => (cause, effect),
        Direction::YtoX => (effect, cause),
    };
    Dataset::new(format!("lingauss-{seed}"), x, y).map(|d| d.with_label(direction))
}

/// Outcome of classifying one prior-sampled dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerDatasetOutcome {
    pub index: usize,
    pub log_margin: f64,
    pub predicted: Verdict,
    pub correct: bool,
}

/// Monte-Carlo estimate of the probability of error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorEstimate {
    /// Fraction of classified datasets decided incorrectly (undecided counts
    /// as incorrect).
    pub p_hat: f64,
    /// 1 / (2 sqrt(T)); the Bernoulli variance bound gives Var <= 1/(4T).
    pub std_bound: f64,
    /// Datasets actually classified.
    pub t_effective: usize,
    /// Scoring failures (excluded from the denominator only when
    /// `drop_failures` was set).
    pub failures: usize,
    pub per_dataset: Vec<PerDatasetOutcome>,
}

/// Classifier plugged into the test; the production pipeline normalizes and
/// scores with the GPLVM models, tests may inject oracles.
pub type Scorer = dyn Fn(&Dataset) -> Result<crate::decision::Decision> + Sync;

/// How the T datasets are generated.
#[derive(Debug, Clone)]
pub enum PriorFamily {
    Gplvm,
    LinearGaussian {
        a0: f64,
        a1: f64,
        sigma0: f64,
        sigma1: f64,
    },
}

/// Draw T datasets from the configured BCM prior, classify each with the
/// scorer, and return the fraction misclassified with its variance bound.
pub fn estimate_prob_error(
    cfg: &PriorSampleConfig,
    family: &PriorFamily,
    scorer: &Scorer,
    drop_failures: bool,
    parallel: bool,
) -> Result<ErrorEstimate> {
    if cfg.t == 0 {
        return Err(Error::InvalidParameter {
            name: "t".into(),
            reason: "need at least one dataset".into(),
        });
    }
    let run = |t: usize| -> Result<PerDatasetOutcome> {
        let ds_seed = seeds::derive(cfg.seed, "poe-dataset", t as u64);
        let ds = match family {
            PriorFamily::Gplvm => sample_gplvm_dataset(cfg.direction, cfg.n, ds_seed)?,
            PriorFamily::LinearGaussian {
                a0,
                a1,
                sigma0,
                sigma1,
            } => sample_linear_gaussian_dataset(
                cfg.direction,
                *a0,
                *a1,
                *sigma0,
                *sigma1,
                cfg.n,
                ds_seed,
            )?,
        };
        let decision = scorer(&ds)?;
        let correct = match (decision.predicted, cfg.direction) {
            (Verdict::XtoY, Direction::XtoY) | (Verdict::YtoX, Direction::YtoX) => true,
            _ => false,
        };
        Ok(PerDatasetOutcome {
            index: t,
            log_margin: decision.log_margin,
            predicted: decision.predicted,
            correct,
        })
    };
    let outcomes: Vec<Result<PerDatasetOutcome>> = if parallel {
        (0..cfg.t).into_par_iter().map(run).collect()
    } else {
        (0..cfg.t).map(run).collect()
    };
    let mut per_dataset = Vec::with_capacity(cfg.t);
    let mut failures = 0usize;
    for o in outcomes {
        match o {
            Ok(p) => per_dataset.push(p),
            Err(e) => {
                if drop_failures {
                    failures += 1;
                } else {
                    return Err(e);
                }
            }
        }
    }
    let t_eff = per_dataset.len();
    if t_eff == 0 {
        return Err(Error::Other("all datasets failed to score".into()));
    }
    let wrong = per_dataset.iter().filter(|p| !p.correct).count();
    Ok(ErrorEstimate {
        p_hat: wrong as f64 / t_eff as f64,
        std_bound: 0.5 / (t_eff as f64).sqrt(),
        t_effective: t_eff,
        failures,
        per_dataset,
    })
}

fn check_distribution(p: &[f64], name: &'static str) -> Result<()> {
    if p.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter {
            name: name.into(),
            reason: "probabilities must be nonnegative".into(),
        });
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter {
            name: name.into(),
            reason: format!("must sum to 1 (got {s})"),
        });
    }
    Ok(())
}

/// Total variation distance between two finite distributions on the same
/// outcome space.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            context: "total variation",
            expected: p.len(),
            got: q.len(),
        });
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// (TV, probability of error) for the symmetric two-model decision problem:
/// P(E) = (1 - TV) / 2.
pub fn discrete_error_identities(p: &[f64], q: &[f64]) -> Result<(f64, f64)> {
    let tv = total_variation(p, q)?;
    Ok((tv, 0.5 * (1.0 - tv)))
}

/// Both sides of the misspecification bound
/// 2 |Q(E) - P(E)| <= TV(Q1, P1) + TV(Q2, P2),
/// where P(E) is computed from the model pair (p1, p2) and Q(E) from the
/// true pair (q1, q2).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MisspecBound {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn misspecification_bound(
    p1: &[f64],
    p2: &[f64],
    q1: &[f64],
    q2: &[f64],
) -> Result<MisspecBound> {
    let tv_model = total_variation(p1, p2)?;
    let tv_true = total_variation(q1, q2)?;
    let lhs = (tv_model - tv_true).abs();
    let rhs = total_variation(q1, p1)? + total_variation(q2, p2)?;
    Ok(MisspecBound { lhs, rhs })
}

/// Fraction of narrow conditional slices whose opposite-variable values are
/// multimodal by the dip test; operationalizes the visual qualitative claim
/// about prior samples.
#[derive(Debug, Clone, Serialize)]
pub struct MultimodalityReport {
    pub slices: usize,
    pub significant: usize,
    pub per_slice_p: Vec<f64>,
}

/// Slice the data into `n_slices` equal-count bins of `y` and dip-test the
/// `x` values within each bin.
pub fn conditional_multimodality(
    data: &Dataset,
    n_slices: usize,
    n_boot: usize,
    seed: u64,
) -> MultimodalityReport {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.y[a].partial_cmp(&data.y[b]).unwrap());
    let mut per_slice_p = Vec::with_capacity(n_slices);
    let mut significant = 0;
    for s in 0..n_slices {
        let a = s * n / n_slices;
        let b = ((s + 1) * n / n_slices).min(n);
        if b - a < 20 {
            continue;
        }
        let xs: Vec<f64> = order[a..b].iter().map(|&i| data.x[i]).collect();
        let (_, p) = dip_pvalue(&xs, n_boot, seeds::derive(seed, "slice", s as u64));
        if p < 0.05 {
            significant += 1;
        }
        per_slice_p.push(p);
    }
    MultimodalityReport {
        slices: per_slice_p.len(),
        significant,
        per_slice_p,
    }
}
