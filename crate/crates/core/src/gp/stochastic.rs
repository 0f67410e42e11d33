//! Doubly-stochastic evidence lower bound: latent inputs are sampled by
//! reparameterization, the inducing-output posterior is kept explicit, and
//! both KL terms stay analytic.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{build_inputs, ElboGrad, Hyperparams, ModelKind, VariationalState};
use crate::error::{Error, Result};
use crate::kernels::{eval_gram, gram_diag, gram_diag_vjp, gram_vjp, KernelHyper, KernelSpec};
use crate::linalg::{robust_cholesky, solve_lower_transpose_mat};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn compute(
    kind: ModelKind,
    inputs: Option<&DVector<f64>>,
    outputs: &DVector<f64>,
    spec: &KernelSpec,
    hyper: &Hyperparams,
    state: &VariationalState,
    samples: usize,
    seed: u64,
    want_grad: bool,
) -> Result<(f64, Option<ElboGrad>)> {
    if !kind.has_latent() {
        return Err(Error::InvalidParameter {
            name: "kind".into(),
            reason: "stochastic bound requires a latent-input model".into(),
        });
    }
    if samples == 0 {
        return Err(Error::InvalidParameter {
            name: "samples".into(),
            reason: "need at least one sample".into(),
        });
    }
    let qu = state.q_u.as_ref().ok_or(Error::InvalidParameter {
        name: "q_u".into(),
        reason: "stochastic bound requires an explicit inducing-output posterior".into(),
    })?;
    let n = outputs.len();
    let m = state.z.nrows();
    if qu.mean.len() != m || qu.tril.nrows() != m || qu.tril.ncols() != m {
        return Err(Error::DimensionMismatch {
            context: "q_u",
            expected: m,
            got: qu.mean.len(),
        });
    }
    if qu.tril.diagonal().iter().any(|&d| d <= 0.0) {
        return Err(Error::InvalidParameter {
            name: "q_u.tril".into(),
            reason: "covariance factor must have positive diagonal".into(),
        });
    }
    let (q_means, q_vars) = build_inputs(kind, inputs, n, state)?;
    let latent_col = kind.input_dim() - 1;
    let beta = 1.0 / hyper.noise_variance();

    let kuu = eval_gram(spec, &hyper.kernel, &state.z, &state.z)?;
    let (chol_k, _) = robust_cholesky(&kuu)?;
    let lk = chol_k.l();
    let k_inv = chol_k.inverse();

    let (kl_u, ki_m, ki_s) = super::kl::kl_full_gaussian_to_prior(&qu.mean, &qu.tril, &lk);
    let kl_w = state
        .q_w_mean
        .iter()
        .zip(state.q_w_log_var.iter())
        .map(|(&mu, &lv)| 0.5 * (lv.exp() + mu * mu - 1.0 - lv))
        .sum::<f64>();
    let s_mat = &qu.tril * qu.tril.transpose();

    let mut rng = crate::seeds::rng_from(seed);
    let mut data_sum = 0.0;
    let nf = n as f64;

    let n_kernel = KernelHyper::n_params(spec);
    let mut g_kernel = vec![0.0; n_kernel];
    let mut g_log_noise = 0.0;
    let mut g_z = DMatrix::<f64>::zeros(m, spec.input_dim);
    let mut g_qw_mean = DVector::<f64>::zeros(n);
    let mut g_qw_log_var = DVector::<f64>::zeros(n);
    let mut g_qu_mean = DVector::<f64>::zeros(m);
    let mut g_qu_tril = DMatrix::<f64>::zeros(m, m);
    let mut g_kuu = DMatrix::<f64>::zeros(m, m);

    for _ in 0..samples {
        // Reparameterized latent draw.
        let mut w_aug = q_means.clone();
        let mut eps = DVector::<f64>::zeros(n);
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            eps[i] = e;
            w_aug[(i, latent_col)] =
                state.q_w_mean[i] + q_vars[(i, latent_col)].sqrt() * e;
        }
        let kuf = eval_gram(spec, &hyper.kernel, &state.z, &w_aug)?;
        let kdiag = gram_diag(spec, &hyper.kernel, &w_aug)?;
        let p = chol_k.solve(&kuf);
        let pm = p.transpose() * &qu.mean;
        let r = outputs - &pm;
        let q = qu.tril.transpose() * &p;
        let mut quad = 0.0;
        for i in 0..n {
            let v2: f64 = q.column(i).iter().map(|x| x * x).sum();
            let d: f64 = kdiag[i]
                - kuf
                    .column(i)
                    .iter()
                    .zip(p.column(i).iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            quad += r[i] * r[i] + v2 + d;
        }
        data_sum += -0.5 * nf * (LN_2PI - beta.ln()) - 0.5 * beta * quad;

        if want_grad {
            // dF/dP, dF/dK_uf, dF/dK_uu for this sample.
            let mut p_bar = &qu.mean * r.transpose();
            p_bar -= &(&s_mat * &p);
            let mut half_kuf = kuf.clone();
            half_kuf *= 0.5;
            p_bar += &half_kuf;
            p_bar *= beta;

            let mut kuf_bar = chol_k.solve(&p_bar);
            let mut half_beta_p = p.clone();
            half_beta_p *= 0.5 * beta;
            kuf_bar += &half_beta_p;

            let kuu_bar_s = -(&k_inv * &p_bar) * p.transpose();
            g_kuu += &kuu_bar_s;

            g_qu_mean += &(&p * &r * beta);
            let ppt = &p * p.transpose();
            g_qu_tril -= &((&ppt * &qu.tril) * beta);

            g_log_noise += -0.5 * nf + 0.5 * beta * quad;

            let kdiag_bar = DVector::from_element(n, -0.5 * beta);
            let gv = gram_vjp(spec, &hyper.kernel, &state.z, &w_aug, &kuf_bar)?;
            let dv = gram_diag_vjp(spec, &hyper.kernel, &w_aug, &kdiag_bar)?;
            for (slot, (a, b)) in gv.hyper.iter().zip(&dv.hyper).enumerate() {
                g_kernel[slot] += a + b;
            }
            g_z += &gv.a_bar;
            let mut w_bar = gv.b_bar;
            w_bar += &dv.a_bar;
            for i in 0..n {
                let wb = w_bar[(i, latent_col)];
                g_qw_mean[i] += wb;
                g_qw_log_var[i] += wb * 0.5 * q_vars[(i, latent_col)].sqrt() * eps[i];
            }
        }
    }

    let sf = samples as f64;
    let value = data_sum / sf - kl_u - kl_w;
    if !want_grad {
        return Ok((value, None));
    }

    g_kernel.iter_mut().for_each(|g| *g /= sf);
    g_log_noise /= sf;
    g_z /= sf;
    g_qw_mean /= sf;
    g_qw_log_var /= sf;
    g_qu_mean /= sf;
    g_qu_tril /= sf;
    g_kuu /= sf;

    // KL gradients (exact, added once).
    for i in 0..n {
        let v = state.q_w_log_var[i].exp();
        g_qw_mean[i] -= state.q_w_mean[i];
        g_qw_log_var[i] -= 0.5 * (v - 1.0);
    }
    g_qu_mean -= &ki_m;
    // dKL/dL = (K^{-1} L)|lower - diag(1/L_ii).
    let kil = &k_inv * &qu.tril;
    for i in 0..m {
        for j in 0..=i {
            g_qu_tril[(i, j)] -= kil[(i, j)];
        }
        g_qu_tril[(i, i)] += 1.0 / qu.tril[(i, i)];
    }
    // Zero out the upper triangle: those entries are not parameters.
    for i in 0..m {
        for j in (i + 1)..m {
            g_qu_tril[(i, j)] = 0.0;
        }
    }
    // dKL/dK_uu = 0.5 (K^{-1} - K^{-1} S K^{-1} - K^{-1} m m^T K^{-1}).
    let mut kl_kuu = k_inv.clone();
    kl_kuu -= &(&ki_s * &k_inv);
    kl_kuu -= &(&ki_m * ki_m.transpose());
    kl_kuu *= 0.5;
    g_kuu -= &kl_kuu;

    let gv = gram_vjp(spec, &hyper.kernel, &state.z, &state.z, &g_kuu)?;
    for (slot, h) in gv.hyper.iter().enumerate() {
        g_kernel[slot] += h;
    }
    g_z += &gv.a_bar;
    g_z += &gv.b_bar;

    Ok((
        value,
        Some(ElboGrad {
            kernel: g_kernel,
            log_noise: g_log_noise,
            z: g_z,
            q_w_mean: g_qw_mean,
            q_w_log_var: g_qw_log_var,
            q_u_mean: Some(g_qu_mean),
            q_u_tril: Some(g_qu_tril),
        }),
    ))
}

/// Monte-Carlo estimate of the uncollapsed bound; deterministic given `seed`.
pub fn elbo_stochastic(
    kind: ModelKind,
    inputs: Option<&DVector<f64>>,
    outputs: &DVector<f64>,
    spec: &KernelSpec,
    hyper: &Hyperparams,
    state: &VariationalState,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    compute(
        kind, inputs, outputs, spec, hyper, state, samples, seed, false,
    )
    .map(|(v, _)| v)
}

/// Stochastic bound estimate plus reparameterized gradients.
pub fn elbo_stochastic_with_grad(
    kind: ModelKind,
    inputs: Option<&DVector<f64>>,
    outputs: &DVector<f64>,
    spec: &KernelSpec,
    hyper: &Hyperparams,
    state: &VariationalState,
    samples: usize,
    seed: u64,
) -> Result<(f64, ElboGrad)> {
    compute(kind, inputs, outputs, spec, hyper, state, samples, seed, true)
        .map(|(v, g)| (v, g.unwrap()))
}

/// L^{-T} helper for tests.
#[allow(dead_code)]
fn lower_inverse_transpose(l: &DMatrix<f64>) -> DMatrix<f64> {
    let m = l.nrows();
    solve_lower_transpose_mat(l, &DMatrix::<f64>::identity(m, m))
}
