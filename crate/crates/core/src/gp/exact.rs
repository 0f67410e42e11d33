//! Exact GP regression log marginal likelihood (the ANM case).

use nalgebra::{DMatrix, DVector};

use super::Hyperparams;
use crate::error::{Error, Result};
use crate::kernels::{eval_gram, gram_vjp, KernelSpec};
use crate::linalg::robust_cholesky;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn noisy_gram(
    x: &DVector<f64>,
    spec: &KernelSpec,
    hyper: &Hyperparams,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = x.len();
    let xm = DMatrix::from_column_slice(n, 1, x.as_slice());
    let k = eval_gram(spec, &hyper.kernel, &xm, &xm)?;
    let mut ky = k.clone();
    let s2 = hyper.noise_variance();
    for i in 0..n {
        ky[(i, i)] += s2;
    }
    Ok((k, ky))
}

/// log N(y; 0, K_ff + sigma^2 I).
pub fn exact_gp_log_marginal(
    x: &DVector<f64>,
    y: &DVector<f64>,
    spec: &KernelSpec,
    hyper: &Hyperparams,
) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "exact GP data",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::InvalidParameter {
            name: "x".into(),
            reason: "need at least one observation".into(),
        });
    }
    let n = x.len();
    let (_, ky) = noisy_gram(x, spec, hyper)?;
    let (chol, _) = robust_cholesky(&ky)?;
    let alpha = chol.solve(y);
    let half_log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    Ok(-0.5 * y.dot(&alpha) - half_log_det - 0.5 * n as f64 * LN_2PI)
}

/// Log marginal likelihood and its gradient w.r.t. the packed kernel
/// log-hyperparameters and the log noise variance.
pub fn exact_gp_log_marginal_with_grad(
    x: &DVector<f64>,
    y: &DVector<f64>,
    spec: &KernelSpec,
    hyper: &Hyperparams,
) -> Result<(f64, Vec<f64>, f64)> {
    let n = x.len();
    let (_, ky) = noisy_gram(x, spec, hyper)?;
    let (chol, _) = robust_cholesky(&ky)?;
    let alpha = chol.solve(y);
    let half_log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let value = -0.5 * y.dot(&alpha) - half_log_det - 0.5 * n as f64 * LN_2PI;

    // dF/dK_y = 0.5 (alpha alpha^T - K_y^{-1})
    let ky_inv = chol.inverse();
    let mut kbar = &alpha * alpha.transpose();
    kbar -= &ky_inv;
    kbar *= 0.5;

    let xm = DMatrix::from_column_slice(n, 1, x.as_slice());
    let vjp = gram_vjp(spec, &hyper.kernel, &xm, &xm, &kbar)?;
    let s2 = hyper.noise_variance();
    let log_noise_grad = kbar.diagonal().sum() * s2;
    Ok((value, vjp.hyper, log_noise_grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelHyper;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn default_hyper(spec: &KernelSpec) -> Hyperparams {
        Hyperparams {
            kernel: KernelHyper::unit(spec),
            log_noise_variance: 0.0,
        }
    }

    #[test]
    fn single_point_closed_form() {
        // k(x,x) = 1 (RBF only), sigma^2 = 1, y = 0: log N(0; 0, 2).
        let spec = KernelSpec::new(
            1,
            vec![crate::kernels::KernelTerm {
                family: crate::kernels::KernelFamily::RbfArd,
                active_dims: vec![0],
            }],
        )
        .unwrap();
        let hyper = default_hyper(&spec);
        let x = DVector::from_vec(vec![0.0]);
        let y = DVector::from_vec(vec![0.0]);
        let value = exact_gp_log_marginal(&x, &y, &spec, &hyper).unwrap();
        let expect = -0.5 * (4.0 * std::f64::consts::PI).ln();
        // Jitter shifts the variance by 1e-6.
        assert_relative_eq!(value, expect, epsilon = 1e-6);
    }

    /// Independently coded multivariate normal log density (dense inverse).
    fn mvn_logpdf_oracle(y: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let n = y.len();
        let inv = cov.clone().try_inverse().unwrap();
        let det = cov.determinant();
        -0.5 * (y.transpose() * inv * y)[(0, 0)] - 0.5 * det.ln() - 0.5 * n as f64 * LN_2PI
    }

    #[test]
    fn matches_dense_mvn_oracle() {
        let mut rng = crate::seeds::rng_from(3);
        let spec = KernelSpec::rbf_linear(1);
        let mut hyper = default_hyper(&spec);
        hyper.log_noise_variance = -1.0;
        let n = 8;
        let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let value = exact_gp_log_marginal(&x, &y, &spec, &hyper).unwrap();
        let xm = DMatrix::from_column_slice(n, 1, x.as_slice());
        let mut cov = eval_gram(&spec, &hyper.kernel, &xm, &xm).unwrap();
        for i in 0..n {
            cov[(i, i)] += hyper.noise_variance() + crate::linalg::BASE_JITTER;
        }
        assert_relative_eq!(value, mvn_logpdf_oracle(&y, &cov), max_relative = 1e-9);
    }

    #[test]
    fn shifting_outputs_reduces_evidence() {
        let mut rng = crate::seeds::rng_from(4);
        let spec = KernelSpec::rbf_linear(1);
        let hyper = default_hyper(&spec);
        let n = 10;
        let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let shifted = y.map(|v| v + 100.0);
        let base = exact_gp_log_marginal(&x, &y, &spec, &hyper).unwrap();
        let far = exact_gp_log_marginal(&x, &shifted, &spec, &hyper).unwrap();
        assert!(far < base);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = crate::seeds::rng_from(6);
        let spec = KernelSpec::rbf_linear(1);
        let mut hyper = default_hyper(&spec);
        hyper.kernel.terms[0].log_lengthscales[0] = 0.3;
        hyper.log_noise_variance = -0.7;
        let n = 7;
        let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
        let (_, kg, ng) = exact_gp_log_marginal_with_grad(&x, &y, &spec, &hyper).unwrap();
        let h = 1e-6;
        let mut packed = Vec::new();
        hyper.kernel.pack(&mut packed);
        for p in 0..packed.len() {
            let mut up = packed.clone();
            up[p] += h;
            let mut dn = packed.clone();
            dn[p] -= h;
            let fu = exact_gp_log_marginal(
                &x,
                &y,
                &spec,
                &Hyperparams {
                    kernel: KernelHyper::unpack(&spec, &up),
                    log_noise_variance: hyper.log_noise_variance,
                },
            )
            .unwrap();
            let fd_val = exact_gp_log_marginal(
                &x,
                &y,
                &spec,
                &Hyperparams {
                    kernel: KernelHyper::unpack(&spec, &dn),
                    log_noise_variance: hyper.log_noise_variance,
                },
            )
            .unwrap();
            let fd = (fu - fd_val) / (2.0 * h);
            assert_relative_eq!(kg[p], fd, max_relative = 1e-4, epsilon = 1e-8);
        }
        let mut hu = hyper.clone();
        hu.log_noise_variance += h;
        let mut hd = hyper.clone();
        hd.log_noise_variance -= h;
        let fd = (exact_gp_log_marginal(&x, &y, &spec, &hu).unwrap()
            - exact_gp_log_marginal(&x, &y, &spec, &hd).unwrap())
            / (2.0 * h);
        assert_relative_eq!(ng, fd, max_relative = 1e-4, epsilon = 1e-8);
    }
}
