//! Closed-form psi statistics: expectations of kernel evaluations under
//! per-point Gaussian input distributions.
//!
//! Supported for sums of at most one RBF-ARD and at most one Linear term.
//! Observed input dimensions are passed with zero variance, which collapses
//! the expectation to a plain kernel evaluation in that dimension.

use nalgebra::DMatrix;

use super::{KernelFamily, KernelHyper, KernelSpec, TermHyper};
use crate::error::{Error, Result};

/// psi0 = sum_n E[k(w_n, w_n)], psi1[n,m] = E[k(w_n, z_m)],
/// psi2 = sum_n E[k(Z, w_n) k(w_n, Z)].
#[derive(Debug, Clone)]
pub struct PsiStats {
    pub psi0: f64,
    pub psi1: DMatrix<f64>,
    pub psi2: DMatrix<f64>,
}

/// Upstream gradients for [`psi_vjp`].
pub struct PsiAdjoints<'a> {
    pub psi0: f64,
    pub psi1: &'a DMatrix<f64>,
    pub psi2: &'a DMatrix<f64>,
}

/// Parameter adjoints returned by [`psi_vjp`].
pub struct PsiVjp {
    /// Gradient w.r.t. packed log-hyperparameters.
    pub hyper: Vec<f64>,
    /// Gradient w.r.t. the q means (N x D).
    pub means: DMatrix<f64>,
    /// Gradient w.r.t. the raw q variances (N x D).
    pub vars: DMatrix<f64>,
    /// Gradient w.r.t. the inducing inputs (M x D).
    pub z: DMatrix<f64>,
}

struct PsiLayout {
    rbf: Option<usize>,
    lin: Option<usize>,
    /// Offset of each term's block in the packed hyperparameter vector.
    offsets: Vec<usize>,
}

fn layout(spec: &KernelSpec) -> Result<PsiLayout> {
    if !spec.psi_compatible() {
        return Err(Error::PsiUnsupported(
            "requires a sum of at most one RBF-ARD and at most one Linear term".into(),
        ));
    }
    let mut rbf = None;
    let mut lin = None;
    let mut offsets = Vec::with_capacity(spec.terms.len());
    let mut off = 0;
    for (i, t) in spec.terms.iter().enumerate() {
        offsets.push(off);
        match t.family {
            KernelFamily::RbfArd => {
                rbf = Some(i);
                off += 1 + t.active_dims.len();
            }
            KernelFamily::Linear => {
                lin = Some(i);
                off += 1;
            }
            _ => unreachable!(),
        }
    }
    Ok(PsiLayout { rbf, lin, offsets })
}

fn check_shapes(
    spec: &KernelSpec,
    hyper: &KernelHyper,
    q_means: &DMatrix<f64>,
    q_vars: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<()> {
    hyper.validate(spec)?;
    for (mat, ctx) in [(q_means, "q means"), (q_vars, "q variances"), (z, "inducing inputs")] {
        if mat.ncols() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: ctx,
                expected: spec.input_dim,
                got: mat.ncols(),
            });
        }
    }
    if q_vars.nrows() != q_means.nrows() {
        return Err(Error::DimensionMismatch {
            context: "q variances rows",
            expected: q_means.nrows(),
            got: q_vars.nrows(),
        });
    }
    if q_vars.iter().any(|&s| s < 0.0) {
        return Err(Error::InvalidParameter {
            name: "q_vars".into(),
            reason: "variances must be nonnegative".into(),
        });
    }
    Ok(())
}

/// E[k_rbf(w_n, z_m)] for one (n, m) pair; `exact` computes the zero-variance
/// dimensions with the same operation order as `eval_gram` so the collapse to
/// a plain kernel evaluation is exact.
fn rbf_psi1_entry(
    term_dims: &[usize],
    th: &TermHyper,
    q_means: &DMatrix<f64>,
    q_vars: &DMatrix<f64>,
    z: &DMatrix<f64>,
    n: usize,
    m: usize,
) -> f64 {
    let mut expo = 0.0;
    let mut pref = 1.0;
    for (k, &d) in term_dims.iter().enumerate() {
        let ell = th.log_lengthscales[k].exp();
        let s = q_vars[(n, d)];
        let delta = q_means[(n, d)] - z[(m, d)];
        if s == 0.0 {
            let t = delta / ell;
            expo += t * t;
        } else {
            let ell2 = ell * ell;
            let alpha = ell2 + s;
            expo += delta * delta / alpha;
            pref *= (ell2 / alpha).sqrt();
        }
    }
    th.variance() * pref * (-0.5 * expo).exp()
}

/// Per-dimension tilted mean of the RBF factor: E[w_d * g_d] / E[g_d].
fn rbf_tilted_mean(ell2: f64, s: f64, mu: f64, zv: f64) -> f64 {
    (ell2 * mu + s * zv) / (ell2 + s)
}

pub fn psi_statistics(
    spec: &KernelSpec,
    hyper: &KernelHyper,
    q_means: &DMatrix<f64>,
    q_vars: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<PsiStats> {
    check_shapes(spec, hyper, q_means, q_vars, z)?;
    let lay = layout(spec)?;
    let n = q_means.nrows();
    let m = z.nrows();
    let mut psi0 = 0.0;
    let mut psi1 = DMatrix::<f64>::zeros(n, m);
    let mut psi2 = DMatrix::<f64>::zeros(m, m);

    if let Some(ri) = lay.rbf {
        let term = &spec.terms[ri];
        let th = &hyper.terms[ri];
        let v = th.variance();
        psi0 += n as f64 * v;
        for i in 0..n {
            for j in 0..m {
                psi1[(i, j)] += rbf_psi1_entry(&term.active_dims, th, q_means, q_vars, z, i, j);
            }
        }
        // psi2: sum_n prod_d h(n, m, m', d), symmetric in (m, m').
        for i in 0..n {
            for a in 0..m {
                for b in a..m {
                    let mut h = v * v;
                    for (k, &d) in term.active_dims.iter().enumerate() {
                        let ell = th.log_lengthscales[k].exp();
                        let ell2 = ell * ell;
                        let s = q_vars[(i, d)];
                        let gamma = ell2 + 2.0 * s;
                        let dz = z[(a, d)] - z[(b, d)];
                        let e = q_means[(i, d)] - 0.5 * (z[(a, d)] + z[(b, d)]);
                        h *= (ell2 / gamma).sqrt()
                            * (-0.25 * dz * dz / ell2 - e * e / gamma).exp();
                    }
                    psi2[(a, b)] += h;
                    if a != b {
                        psi2[(b, a)] += h;
                    }
                }
            }
        }
    }

    if let Some(li) = lay.lin {
        let term = &spec.terms[li];
        let th = &hyper.terms[li];
        let v = th.variance();
        for i in 0..n {
            for &d in &term.active_dims {
                psi0 += v * (q_means[(i, d)] * q_means[(i, d)] + q_vars[(i, d)]);
            }
        }
        for i in 0..n {
            for j in 0..m {
                let mut s = 0.0;
                for &d in &term.active_dims {
                    s += q_means[(i, d)] * z[(j, d)];
                }
                psi1[(i, j)] += v * s;
            }
        }
        // psi2 = v^2 Z C Z^T with C = sum_n (mu_n mu_n^T + diag s_n).
        let dim = term.active_dims.len();
        let mut c = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            for (p, &dp) in term.active_dims.iter().enumerate() {
                for (q, &dq) in term.active_dims.iter().enumerate() {
                    c[(p, q)] += q_means[(i, dp)] * q_means[(i, dq)];
                }
                c[(p, p)] += q_vars[(i, dp)];
            }
        }
        for a in 0..m {
            for b in 0..m {
                let mut s = 0.0;
                for (p, &dp) in term.active_dims.iter().enumerate() {
                    for (q, &dq) in term.active_dims.iter().enumerate() {
                        s += z[(a, dp)] * c[(p, q)] * z[(b, dq)];
                    }
                }
                psi2[(a, b)] += v * v * s;
            }
        }
    }

    // Cross terms between the RBF and Linear parts of psi2.
    if let (Some(ri), Some(li)) = (lay.rbf, lay.lin) {
        let rterm = &spec.terms[ri];
        let rth = &hyper.terms[ri];
        let lterm = &spec.terms[li];
        let vl = hyper.terms[li].variance();
        let rbf_slot: Vec<Option<usize>> = {
            let mut v = vec![None; spec.input_dim];
            for (k, &d) in rterm.active_dims.iter().enumerate() {
                v[d] = Some(k);
            }
            v
        };
        for i in 0..n {
            for a in 0..m {
                let r = rbf_psi1_entry(&rterm.active_dims, rth, q_means, q_vars, z, i, a);
                for b in 0..m {
                    // E[k_rbf(w, z_a) k_lin(w, z_b)]
                    let mut dot = 0.0;
                    for &d in &lterm.active_dims {
                        let tilt = match rbf_slot[d] {
                            Some(k) => {
                                let ell = rth.log_lengthscales[k].exp();
                                rbf_tilted_mean(
                                    ell * ell,
                                    q_vars[(i, d)],
                                    q_means[(i, d)],
                                    z[(a, d)],
                                )
                            }
                            None => q_means[(i, d)],
                        };
                        dot += tilt * z[(b, d)];
                    }
                    let x = r * vl * dot;
                    psi2[(a, b)] += x;
                    psi2[(b, a)] += x;
                }
            }
        }
    }

    Ok(PsiStats { psi0, psi1, psi2 })
}

/// Accumulate adjoints of `psi0_bar * psi0 + <psi1_bar, psi1> + <psi2_bar, psi2>`
/// w.r.t. log-hyperparameters, q means, raw q variances, and inducing inputs.
pub fn psi_vjp(
    spec: &KernelSpec,
    hyper: &KernelHyper,
    q_means: &DMatrix<f64>,
    q_vars: &DMatrix<f64>,
    z: &DMatrix<f64>,
    adj: PsiAdjoints<'_>,
) -> Result<PsiVjp> {
    check_shapes(spec, hyper, q_means, q_vars, z)?;
    let lay = layout(spec)?;
    let n = q_means.nrows();
    let m = z.nrows();
    let mut hg = vec![0.0; KernelHyper::n_params(spec)];
    let mut means = DMatrix::<f64>::zeros(n, spec.input_dim);
    let mut vars = DMatrix::<f64>::zeros(n, spec.input_dim);
    let mut zbar = DMatrix::<f64>::zeros(m, spec.input_dim);

    if let Some(ri) = lay.rbf {
        let term = &spec.terms[ri];
        let th = &hyper.terms[ri];
        let v = th.variance();
        let var_slot = lay.offsets[ri];
        let ell_slot = var_slot + 1;
        let ells = th.lengthscales();

        // psi0 contribution.
        hg[var_slot] += adj.psi0 * n as f64 * v;

        // psi1 contributions.
        for i in 0..n {
            for j in 0..m {
                let w = adj.psi1[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let p = rbf_psi1_entry(&term.active_dims, th, q_means, q_vars, z, i, j);
                hg[var_slot] += w * p;
                for (k, &d) in term.active_dims.iter().enumerate() {
                    let ell2 = ells[k] * ells[k];
                    let s = q_vars[(i, d)];
                    let alpha = ell2 + s;
                    let delta = q_means[(i, d)] - z[(j, d)];
                    means[(i, d)] += w * p * (-delta / alpha);
                    zbar[(j, d)] += w * p * (delta / alpha);
                    vars[(i, d)] += w * p * 0.5 * (delta * delta / (alpha * alpha) - 1.0 / alpha);
                    hg[ell_slot + k] +=
                        w * p * (1.0 - ell2 / alpha + ell2 * delta * delta / (alpha * alpha));
                }
            }
        }

        // psi2 (RBF x RBF) contributions.
        for i in 0..n {
            for a in 0..m {
                for b in 0..m {
                    let w = adj.psi2[(a, b)];
                    if w == 0.0 {
                        continue;
                    }
                    let mut t = v * v;
                    for (k, &d) in term.active_dims.iter().enumerate() {
                        let ell2 = ells[k] * ells[k];
                        let s = q_vars[(i, d)];
                        let gamma = ell2 + 2.0 * s;
                        let dz = z[(a, d)] - z[(b, d)];
                        let e = q_means[(i, d)] - 0.5 * (z[(a, d)] + z[(b, d)]);
                        t *= (ell2 / gamma).sqrt()
                            * (-0.25 * dz * dz / ell2 - e * e / gamma).exp();
                    }
                    hg[var_slot] += w * 2.0 * t;
                    for (k, &d) in term.active_dims.iter().enumerate() {
                        let ell2 = ells[k] * ells[k];
                        let s = q_vars[(i, d)];
                        let gamma = ell2 + 2.0 * s;
                        let dz = z[(a, d)] - z[(b, d)];
                        let e = q_means[(i, d)] - 0.5 * (z[(a, d)] + z[(b, d)]);
                        means[(i, d)] += w * t * (-2.0 * e / gamma);
                        vars[(i, d)] += w * t * (2.0 * e * e / (gamma * gamma) - 1.0 / gamma);
                        zbar[(a, d)] += w * t * (-dz / (2.0 * ell2) + e / gamma);
                        zbar[(b, d)] += w * t * (dz / (2.0 * ell2) + e / gamma);
                        hg[ell_slot + k] += w
                            * t
                            * (1.0 - ell2 / gamma
                                + dz * dz / (2.0 * ell2)
                                + 2.0 * ell2 * e * e / (gamma * gamma));
                    }
                }
            }
        }
    }

    if let Some(li) = lay.lin {
        let term = &spec.terms[li];
        let th = &hyper.terms[li];
        let v = th.variance();
        let var_slot = lay.offsets[li];

        // psi0.
        for i in 0..n {
            for &d in &term.active_dims {
                hg[var_slot] +=
                    adj.psi0 * v * (q_means[(i, d)] * q_means[(i, d)] + q_vars[(i, d)]);
                means[(i, d)] += adj.psi0 * 2.0 * v * q_means[(i, d)];
                vars[(i, d)] += adj.psi0 * v;
            }
        }

        // psi1.
        for i in 0..n {
            for j in 0..m {
                let w = adj.psi1[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for &d in &term.active_dims {
                    s += q_means[(i, d)] * z[(j, d)];
                    means[(i, d)] += w * v * z[(j, d)];
                    zbar[(j, d)] += w * v * q_means[(i, d)];
                }
                hg[var_slot] += w * v * s;
            }
        }

        // psi2 (Linear x Linear): v^2 Z C Z^T.
        let dim = term.active_dims.len();
        let mut c = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            for (p, &dp) in term.active_dims.iter().enumerate() {
                for (q, &dq) in term.active_dims.iter().enumerate() {
                    c[(p, q)] += q_means[(i, dp)] * q_means[(i, dq)];
                }
                c[(p, p)] += q_vars[(i, dp)];
            }
        }
        // Value contribution to the variance slot and C/Z adjoints.
        let mut cbar = DMatrix::<f64>::zeros(dim, dim);
        for a in 0..m {
            for b in 0..m {
                let w = adj.psi2[(a, b)];
                let mut s = 0.0;
                for (p, &dp) in term.active_dims.iter().enumerate() {
                    for (q, &dq) in term.active_dims.iter().enumerate() {
                        s += z[(a, dp)] * c[(p, q)] * z[(b, dq)];
                        cbar[(p, q)] += w * v * v * z[(a, dp)] * z[(b, dq)];
                        zbar[(a, dp)] += w * v * v * c[(p, q)] * z[(b, dq)];
                        zbar[(b, dq)] += w * v * v * z[(a, dp)] * c[(p, q)];
                    }
                }
                hg[var_slot] += w * 2.0 * v * v * s;
            }
        }
        for i in 0..n {
            for (p, &dp) in term.active_dims.iter().enumerate() {
                for (q, &dq) in term.active_dims.iter().enumerate() {
                    means[(i, dp)] += (cbar[(p, q)] + cbar[(q, p)]) * q_means[(i, dq)];
                }
                vars[(i, dp)] += cbar[(p, p)];
            }
        }
    }

    // Cross terms (RBF x Linear) of psi2.
    if let (Some(ri), Some(li)) = (lay.rbf, lay.lin) {
        let rterm = &spec.terms[ri];
        let rth = &hyper.terms[ri];
        let lterm = &spec.terms[li];
        let vl = hyper.terms[li].variance();
        let r_var_slot = lay.offsets[ri];
        let r_ell_slot = r_var_slot + 1;
        let l_var_slot = lay.offsets[li];
        let ells = rth.lengthscales();
        let rbf_slot: Vec<Option<usize>> = {
            let mut v = vec![None; spec.input_dim];
            for (k, &d) in rterm.active_dims.iter().enumerate() {
                v[d] = Some(k);
            }
            v
        };
        // W[a,b] = psi2_bar[a,b] + psi2_bar[b,a]; SwZ[a,d] = sum_b W[a,b] z[b,d].
        let mut swz = DMatrix::<f64>::zeros(m, spec.input_dim);
        for a in 0..m {
            for b in 0..m {
                let w = adj.psi2[(a, b)] + adj.psi2[(b, a)];
                for &d in &lterm.active_dims {
                    swz[(a, d)] += w * z[(b, d)];
                }
            }
        }
        // U[a,d] = sum_n r_na * tilt(n,a,d), for the Z adjoint through SwZ.
        let mut u = DMatrix::<f64>::zeros(m, spec.input_dim);
        for i in 0..n {
            for a in 0..m {
                let r = rbf_psi1_entry(&rterm.active_dims, rth, q_means, q_vars, z, i, a);
                // dot = sum_d tilt * SwZ[a,d]; c_na = vl * r * dot.
                let mut dot = 0.0;
                for &d in &lterm.active_dims {
                    let tilt = match rbf_slot[d] {
                        Some(k) => {
                            let ell2 = ells[k] * ells[k];
                            rbf_tilted_mean(ell2, q_vars[(i, d)], q_means[(i, d)], z[(a, d)])
                        }
                        None => q_means[(i, d)],
                    };
                    dot += tilt * swz[(a, d)];
                    u[(a, d)] += r * tilt;
                }
                let c_na = vl * r * dot;
                hg[l_var_slot] += c_na;
                hg[r_var_slot] += c_na;
                // Chain through the RBF factor r and the tilted means.
                for (k, &d) in rterm.active_dims.iter().enumerate() {
                    let ell2 = ells[k] * ells[k];
                    let s = q_vars[(i, d)];
                    let alpha = ell2 + s;
                    let delta = q_means[(i, d)] - z[(a, d)];
                    means[(i, d)] += c_na * (-delta / alpha);
                    vars[(i, d)] += c_na * 0.5 * (delta * delta / (alpha * alpha) - 1.0 / alpha);
                    zbar[(a, d)] += c_na * (delta / alpha);
                    hg[r_ell_slot + k] +=
                        c_na * (1.0 - ell2 / alpha + ell2 * delta * delta / (alpha * alpha));
                }
                for &d in &lterm.active_dims {
                    let w_side = vl * r * swz[(a, d)];
                    match rbf_slot[d] {
                        Some(k) => {
                            let ell2 = ells[k] * ells[k];
                            let s = q_vars[(i, d)];
                            let alpha = ell2 + s;
                            let delta = q_means[(i, d)] - z[(a, d)];
                            means[(i, d)] += w_side * ell2 / alpha;
                            vars[(i, d)] += w_side * (-ell2 * delta / (alpha * alpha));
                            zbar[(a, d)] += w_side * s / alpha;
                            hg[r_ell_slot + k] +=
                                w_side * 2.0 * ell2 * s * delta / (alpha * alpha);
                        }
                        None => {
                            means[(i, d)] += w_side;
                        }
                    }
                }
            }
        }
        // Z adjoint through SwZ: zbar[b,d] += vl * sum_a W[a,b] U[a,d].
        for a in 0..m {
            for b in 0..m {
                let w = adj.psi2[(a, b)] + adj.psi2[(b, a)];
                for &d in &lterm.active_dims {
                    zbar[(b, d)] += vl * w * u[(a, d)];
                }
            }
        }
    }

    Ok(PsiVjp {
        hyper: hg,
        means,
        vars,
        z: zbar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::eval_gram;
    use crate::quadrature::gauss_hermite;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// Gauss-Hermite oracle over a single latent dimension `latent`.
    /// All other dimensions are observed (zero variance).
    fn quad_psi(
        spec: &KernelSpec,
        hyper: &KernelHyper,
        q_means: &DMatrix<f64>,
        q_vars: &DMatrix<f64>,
        z: &DMatrix<f64>,
        latent: usize,
        nodes: usize,
    ) -> PsiStats {
        let (t, w) = gauss_hermite(nodes);
        let n = q_means.nrows();
        let m = z.nrows();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut psi0 = 0.0;
        let mut psi1 = DMatrix::<f64>::zeros(n, m);
        let mut psi2 = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            let mu = q_means[(i, latent)];
            let s = q_vars[(i, latent)];
            let mut row = q_means.row(i).clone_owned();
            for k in 0..nodes {
                let wval = mu + (2.0 * s).sqrt() * t[k];
                row[latent] = wval;
                let point = DMatrix::from_row_slice(1, spec.input_dim, row.as_slice());
                let kww = eval_gram(spec, hyper, &point, &point).unwrap()[(0, 0)];
                let kwz = eval_gram(spec, hyper, &point, z).unwrap();
                let weight = w[k] / sqrt_pi;
                psi0 += weight * kww;
                for a in 0..m {
                    psi1[(i, a)] += weight * kwz[(0, a)];
                    for b in 0..m {
                        psi2[(a, b)] += weight * kwz[(0, a)] * kwz[(0, b)];
                    }
                }
            }
        }
        PsiStats { psi0, psi1, psi2 }
    }

    #[test]
    fn zero_variance_collapses_to_gram() {
        let spec = KernelSpec::rbf_linear(2);
        let mut hyper = KernelHyper::unit(&spec);
        hyper.terms[0].log_lengthscales = vec![-0.3, 0.4];
        hyper.terms[0].log_variance = 0.2;
        let q_means = DMatrix::from_row_slice(3, 2, &[0.1, -0.5, 1.2, 0.3, -0.7, 0.9]);
        let q_vars = DMatrix::<f64>::zeros(3, 2);
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, -1.0]);
        let stats = psi_statistics(&spec, &hyper, &q_means, &q_vars, &z).unwrap();
        let gram = eval_gram(&spec, &hyper, &q_means, &z).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let (a, b) = (stats.psi1[(i, j)], gram[(i, j)]);
                assert!(
                    (a - b).abs() <= f64::EPSILON * a.abs().max(1.0),
                    "psi1[{i},{j}] = {a} vs gram {b}"
                );
            }
        }
    }

    #[test]
    fn linear_psi1_is_variance_mu_z() {
        let spec = KernelSpec::new(
            1,
            vec![super::super::KernelTerm {
                family: KernelFamily::Linear,
                active_dims: vec![0],
            }],
        )
        .unwrap();
        let mut hyper = KernelHyper::unit(&spec);
        hyper.terms[0].log_variance = 0.7;
        let (mu, s, zv) = (0.8, 0.5, -1.3);
        let q_means = DMatrix::from_row_slice(1, 1, &[mu]);
        let q_vars = DMatrix::from_row_slice(1, 1, &[s]);
        let z = DMatrix::from_row_slice(1, 1, &[zv]);
        let stats = psi_statistics(&spec, &hyper, &q_means, &q_vars, &z).unwrap();
        assert_relative_eq!(stats.psi1[(0, 0)], 0.7f64.exp() * mu * zv, epsilon = 1e-14);
        // Cross-check against quadrature too.
        let q = quad_psi(&spec, &hyper, &q_means, &q_vars, &z, 0, 64);
        assert_relative_eq!(stats.psi1[(0, 0)], q.psi1[(0, 0)], max_relative = 1e-10);
        assert_relative_eq!(stats.psi0, q.psi0, max_relative = 1e-10);
        assert_relative_eq!(stats.psi2[(0, 0)], q.psi2[(0, 0)], max_relative = 1e-10);
    }

    #[test]
    fn psi_matches_gauss_hermite_for_random_configs() {
        let mut rng = crate::seeds::rng_from(23);
        for rep in 0..20 {
            // Alternate between the marginal shape (1-D, all latent) and the
            // conditional shape (2-D, first dim observed).
            let (dim, latent) = if rep % 2 == 0 { (1, 0) } else { (2, 1) };
            let spec = KernelSpec::rbf_linear(dim);
            let mut hyper = KernelHyper::unit(&spec);
            hyper.terms[0].log_variance = rng.random_range(-0.5..0.5);
            for l in &mut hyper.terms[0].log_lengthscales {
                *l = rng.random_range(-0.8..0.5);
            }
            hyper.terms[1].log_variance = rng.random_range(-1.0..0.0);
            let n = 4;
            let m = 3;
            let mut q_means = DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.5..1.5));
            let mut q_vars = DMatrix::<f64>::zeros(n, dim);
            for i in 0..n {
                q_vars[(i, latent)] = rng.random_range(0.01..1.0);
            }
            let _ = &mut q_means;
            let z = DMatrix::from_fn(m, dim, |_, _| rng.random_range(-1.5..1.5));
            let stats = psi_statistics(&spec, &hyper, &q_means, &q_vars, &z).unwrap();
            let oracle = quad_psi(&spec, &hyper, &q_means, &q_vars, &z, latent, 64);
            assert_relative_eq!(stats.psi0, oracle.psi0, max_relative = 1e-6);
            for i in 0..n {
                for j in 0..m {
                    assert_relative_eq!(
                        stats.psi1[(i, j)],
                        oracle.psi1[(i, j)],
                        max_relative = 1e-6,
                        epsilon = 1e-12
                    );
                }
            }
            for a in 0..m {
                for b in 0..m {
                    assert_relative_eq!(
                        stats.psi2[(a, b)],
                        oracle.psi2[(a, b)],
                        max_relative = 1e-6,
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn psi_vjp_matches_finite_differences() {
        let mut rng = crate::seeds::rng_from(37);
        let spec = KernelSpec::rbf_linear(2);
        let mut hyper = KernelHyper::unit(&spec);
        hyper.terms[0].log_variance = 0.2;
        hyper.terms[0].log_lengthscales = vec![-0.1, 0.3];
        hyper.terms[1].log_variance = -0.4;
        let n = 3;
        let m = 3;
        let q_means = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let q_vars = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.05..0.8));
        let z = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-1.0..1.0));
        let p0bar: f64 = rng.random_range(-1.0..1.0);
        let p1bar = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let p2bar = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let obj = |hy: &KernelHyper, qm: &DMatrix<f64>, qv: &DMatrix<f64>, zz: &DMatrix<f64>| {
            let s = psi_statistics(&spec, hy, qm, qv, zz).unwrap();
            p0bar * s.psi0
                + s.psi1.zip_fold(&p1bar, 0.0, |acc, x, w| acc + x * w)
                + s.psi2.zip_fold(&p2bar, 0.0, |acc, x, w| acc + x * w)
        };
        let vjp = psi_vjp(
            &spec,
            &hyper,
            &q_means,
            &q_vars,
            &z,
            PsiAdjoints {
                psi0: p0bar,
                psi1: &p1bar,
                psi2: &p2bar,
            },
        )
        .unwrap();
        let h = 1e-6;
        let mut packed = Vec::new();
        hyper.pack(&mut packed);
        for p in 0..packed.len() {
            let mut up = packed.clone();
            up[p] += h;
            let mut dn = packed.clone();
            dn[p] -= h;
            let fd = (obj(&KernelHyper::unpack(&spec, &up), &q_means, &q_vars, &z)
                - obj(&KernelHyper::unpack(&spec, &dn), &q_means, &q_vars, &z))
                / (2.0 * h);
            assert_relative_eq!(vjp.hyper[p], fd, max_relative = 1e-4, epsilon = 1e-7);
        }
        for i in 0..n {
            for d in 0..2 {
                let mut up = q_means.clone();
                up[(i, d)] += h;
                let mut dn = q_means.clone();
                dn[(i, d)] -= h;
                let fd = (obj(&hyper, &up, &q_vars, &z) - obj(&hyper, &dn, &q_vars, &z)) / (2.0 * h);
                assert_relative_eq!(vjp.means[(i, d)], fd, max_relative = 1e-4, epsilon = 1e-7);

                let mut up = q_vars.clone();
                up[(i, d)] += h;
                let mut dn = q_vars.clone();
                dn[(i, d)] -= h;
                let fd = (obj(&hyper, &q_means, &up, &z) - obj(&hyper, &q_means, &dn, &z)) / (2.0 * h);
                assert_relative_eq!(vjp.vars[(i, d)], fd, max_relative = 1e-4, epsilon = 1e-7);
            }
        }
        for a in 0..m {
            for d in 0..2 {
                let mut up = z.clone();
                up[(a, d)] += h;
                let mut dn = z.clone();
                dn[(a, d)] -= h;
                let fd = (obj(&hyper, &q_means, &q_vars, &up) - obj(&hyper, &q_means, &q_vars, &dn))
                    / (2.0 * h);
                assert_relative_eq!(vjp.z[(a, d)], fd, max_relative = 1e-4, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn psi_rejects_matern_specs() {
        let spec = KernelSpec::stochastic_preset(1);
        let hyper = KernelHyper::unit(&spec);
        let q_means = DMatrix::<f64>::zeros(2, 1);
        let q_vars = DMatrix::<f64>::zeros(2, 1);
        let z = DMatrix::<f64>::zeros(2, 1);
        assert!(matches!(
            psi_statistics(&spec, &hyper, &q_means, &q_vars, &z),
            Err(Error::PsiUnsupported(_))
        ));
    }
}
