//! Kernel functions, their gradients, and the closed-form Gaussian
//! expectations (psi statistics) needed by the collapsed GPLVM bound.
//!
//! Kernels are sums of terms; each term applies to a subset of the input
//! dimensions. All positive hyperparameters are stored in log-space.

mod anticausal;
mod psi;

pub use anticausal::psi_anticausal_element;
pub use psi::{psi_statistics, psi_vjp, PsiAdjoints, PsiStats, PsiVjp};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    RbfArd,
    Linear,
    Matern32,
    RationalQuadratic,
}

/// One additive kernel term acting on a subset of input dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelTerm {
    pub family: KernelFamily,
    pub active_dims: Vec<usize>,
}

/// A sum-of-terms kernel over `input_dim` dimensional inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSpec {
    pub input_dim: usize,
    pub terms: Vec<KernelTerm>,
}

impl KernelSpec {
    pub fn new(input_dim: usize, terms: Vec<KernelTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParameter {
                name: "terms".into(),
                reason: "kernel must have at least one term".into(),
            });
        }
        for t in &terms {
            if t.active_dims.is_empty() {
                return Err(Error::InvalidParameter {
                    name: "active_dims".into(),
                    reason: "term must act on at least one dimension".into(),
                });
            }
            for &d in &t.active_dims {
                if d >= input_dim {
                    return Err(Error::InvalidParameter {
                        name: "active_dims".into(),
                        reason: format!("dimension {d} out of range for input_dim {input_dim}"),
                    });
                }
            }
        }
        Ok(Self { input_dim, terms })
    }

    fn all_dims(input_dim: usize) -> Vec<usize> {
        (0..input_dim).collect()
    }

    /// RBF + Linear over all dimensions; admits closed-form psi statistics.
    pub fn rbf_linear(input_dim: usize) -> Self {
        Self {
            input_dim,
            terms: vec![
                KernelTerm {
                    family: KernelFamily::RbfArd,
                    active_dims: Self::all_dims(input_dim),
                },
                KernelTerm {
                    family: KernelFamily::Linear,
                    active_dims: Self::all_dims(input_dim),
                },
            ],
        }
    }

    /// RBF + Linear + Matern32 + RationalQuadratic over all dimensions,
    /// for the sampled (stochastic) bound.
    pub fn stochastic_preset(input_dim: usize) -> Self {
        Self {
            input_dim,
            terms: vec![
                KernelTerm {
                    family: KernelFamily::RbfArd,
                    active_dims: Self::all_dims(input_dim),
                },
                KernelTerm {
                    family: KernelFamily::Linear,
                    active_dims: Self::all_dims(input_dim),
                },
                KernelTerm {
                    family: KernelFamily::Matern32,
                    active_dims: Self::all_dims(input_dim),
                },
                KernelTerm {
                    family: KernelFamily::RationalQuadratic,
                    active_dims: Self::all_dims(input_dim),
                },
            ],
        }
    }

    /// Closed-form psi statistics exist for sums of at most one RBF and at
    /// most one Linear term.
    pub fn psi_compatible(&self) -> bool {
        let mut rbf = 0;
        let mut lin = 0;
        for t in &self.terms {
            match t.family {
                KernelFamily::RbfArd => rbf += 1,
                KernelFamily::Linear => lin += 1,
                _ => return false,
            }
        }
        rbf <= 1 && lin <= 1
    }
}

/// Log-space hyperparameters for one term.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermHyper {
    pub log_variance: f64,
    /// One per active dimension; empty for Linear terms.
    pub log_lengthscales: Vec<f64>,
    /// Shape parameter, RationalQuadratic only.
    pub log_shape: Option<f64>,
}

impl TermHyper {
    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }
    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }
}

/// Log-space hyperparameters matching a [`KernelSpec`] term-for-term.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelHyper {
    pub terms: Vec<TermHyper>,
}

fn n_lengthscales(term: &KernelTerm) -> usize {
    match term.family {
        KernelFamily::Linear => 0,
        _ => term.active_dims.len(),
    }
}

impl KernelHyper {
    /// Unit hyperparameters: all variances, lengthscales, and shapes equal 1.
    pub fn unit(spec: &KernelSpec) -> Self {
        let terms = spec
            .terms
            .iter()
            .map(|t| TermHyper {
                log_variance: 0.0,
                log_lengthscales: vec![0.0; n_lengthscales(t)],
                log_shape: match t.family {
                    KernelFamily::RationalQuadratic => Some(0.0),
                    _ => None,
                },
            })
            .collect();
        Self { terms }
    }

    pub fn n_params(spec: &KernelSpec) -> usize {
        spec.terms
            .iter()
            .map(|t| {
                1 + n_lengthscales(t)
                    + usize::from(t.family == KernelFamily::RationalQuadratic)
            })
            .sum()
    }

    pub fn validate(&self, spec: &KernelSpec) -> Result<()> {
        if self.terms.len() != spec.terms.len() {
            return Err(Error::DimensionMismatch {
                context: "kernel hyper terms",
                expected: spec.terms.len(),
                got: self.terms.len(),
            });
        }
        for (h, t) in self.terms.iter().zip(&spec.terms) {
            if h.log_lengthscales.len() != n_lengthscales(t) {
                return Err(Error::DimensionMismatch {
                    context: "lengthscales",
                    expected: n_lengthscales(t),
                    got: h.log_lengthscales.len(),
                });
            }
            let needs_shape = t.family == KernelFamily::RationalQuadratic;
            if needs_shape != h.log_shape.is_some() {
                return Err(Error::InvalidParameter {
                    name: "log_shape".into(),
                    reason: "shape parameter must be present exactly for RQ terms".into(),
                });
            }
        }
        Ok(())
    }

    /// Flatten into `out` in canonical order: per term, log-variance, then
    /// log-lengthscales, then log-shape where present.
    pub fn pack(&self, out: &mut Vec<f64>) {
        for t in &self.terms {
            out.push(t.log_variance);
            out.extend_from_slice(&t.log_lengthscales);
            if let Some(s) = t.log_shape {
                out.push(s);
            }
        }
    }

    pub fn unpack(spec: &KernelSpec, params: &[f64]) -> Self {
        let mut terms = Vec::with_capacity(spec.terms.len());
        let mut i = 0;
        for t in &spec.terms {
            let log_variance = params[i];
            i += 1;
            let nl = n_lengthscales(t);
            let log_lengthscales = params[i..i + nl].to_vec();
            i += nl;
            let log_shape = if t.family == KernelFamily::RationalQuadratic {
                let s = params[i];
                i += 1;
                Some(s)
            } else {
                None
            };
            terms.push(TermHyper {
                log_variance,
                log_lengthscales,
                log_shape,
            });
        }
        Self { terms }
    }
}

fn check_inputs(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.ncols() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            context: "kernel input A",
            expected: spec.input_dim,
            got: a.ncols(),
        });
    }
    if b.ncols() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            context: "kernel input B",
            expected: spec.input_dim,
            got: b.ncols(),
        });
    }
    Ok(())
}

/// Evaluate one term at a pair of points.
fn term_eval(
    term: &KernelTerm,
    hyper: &TermHyper,
    a: &DMatrix<f64>,
    i: usize,
    b: &DMatrix<f64>,
    j: usize,
) -> f64 {
    let v = hyper.variance();
    match term.family {
        KernelFamily::RbfArd => {
            let mut s = 0.0;
            for (k, &d) in term.active_dims.iter().enumerate() {
                let ell = hyper.log_lengthscales[k].exp();
                let diff = (a[(i, d)] - b[(j, d)]) / ell;
                s += diff * diff;
            }
            v * (-0.5 * s).exp()
        }
        KernelFamily::Linear => {
            let mut s = 0.0;
            for &d in &term.active_dims {
                s += a[(i, d)] * b[(j, d)];
            }
            v * s
        }
        KernelFamily::Matern32 => {
            let mut s = 0.0;
            for (k, &d) in term.active_dims.iter().enumerate() {
                let ell = hyper.log_lengthscales[k].exp();
                let diff = (a[(i, d)] - b[(j, d)]) / ell;
                s += diff * diff;
            }
            let r = s.sqrt();
            let sq3r = 3f64.sqrt() * r;
            v * (1.0 + sq3r) * (-sq3r).exp()
        }
        KernelFamily::RationalQuadratic => {
            let alpha = hyper.log_shape.unwrap_or(0.0).exp();
            let mut s = 0.0;
            for (k, &d) in term.active_dims.iter().enumerate() {
                let ell = hyper.log_lengthscales[k].exp();
                let diff = (a[(i, d)] - b[(j, d)]) / ell;
                s += diff * diff;
            }
            v * (1.0 + s / (2.0 * alpha)).powf(-alpha)
        }
    }
}

/// Gram matrix of the summed kernel between rows of `a` and rows of `b`.
pub fn eval_gram(
    spec: &KernelSpec,
    hyper: &KernelHyper,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_inputs(spec, a, b)?;
    hyper.validate(spec)?;
    let mut k = DMatrix::<f64>::zeros(a.nrows(), b.nrows());
    for (term, th) in spec.terms.iter().zip(&hyper.terms) {
        for i in 0..a.nrows() {
            for j in 0..b.nrows() {
                k[(i, j)] += term_eval(term, th, a, i, b, j);
            }
        }
    }
    Ok(k)
}

/// Diagonal of the Gram matrix of rows of `a` against themselves.
pub fn gram_diag(spec: &KernelSpec, hyper: &KernelHyper, a: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_inputs(spec, a, a)?;
    hyper.validate(spec)?;
    let mut d = DVector::<f64>::zeros(a.nrows());
    for (term, th) in spec.terms.iter().zip(&hyper.terms) {
        let v = th.variance();
        match term.family {
            KernelFamily::Linear => {
                for i in 0..a.nrows() {
                    let mut s = 0.0;
                    for &dd in &term.active_dims {
                        s += a[(i, dd)] * a[(i, dd)];
                    }
                    d[i] += v * s;
                }
            }
            _ => {
                for i in 0..a.nrows() {
                    d[i] += v;
                }
            }
        }
    }
    Ok(d)
}

/// Gradient of every Gram entry with respect to each log-hyperparameter, in
/// the canonical pack order.
pub fn eval_gram_gradients(
    spec: &KernelSpec,
    hyper: &KernelHyper,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    check_inputs(spec, a, b)?;
    hyper.validate(spec)?;
    let (na, nb) = (a.nrows(), b.nrows());
    let mut grads = Vec::with_capacity(KernelHyper::n_params(spec));
    for (term, th) in spec.terms.iter().zip(&hyper.terms) {
        let v = th.variance();
        let ells = th.lengthscales();
        let mut g_var = DMatrix::<f64>::zeros(na, nb);
        let mut g_ells = vec![DMatrix::<f64>::zeros(na, nb); ells.len()];
        let mut g_shape = if term.family == KernelFamily::RationalQuadratic {
            Some(DMatrix::<f64>::zeros(na, nb))
        } else {
            None
        };
        for i in 0..na {
            for j in 0..nb {
                let kij = term_eval(term, th, a, i, b, j);
                g_var[(i, j)] = kij;
                match term.family {
                    KernelFamily::RbfArd => {
                        for (kk, &d) in term.active_dims.iter().enumerate() {
                            let ell = ells[kk];
                            let diff = a[(i, d)] - b[(j, d)];
                            g_ells[kk][(i, j)] = kij * diff * diff / (ell * ell);
                        }
                    }
                    KernelFamily::Linear => {}
                    KernelFamily::Matern32 => {
                        let mut s = 0.0;
                        for (kk, &d) in term.active_dims.iter().enumerate() {
                            let diff = (a[(i, d)] - b[(j, d)]) / ells[kk];
                            s += diff * diff;
                        }
                        let r = s.sqrt();
                        let e = (-(3f64.sqrt()) * r).exp();
                        for (kk, &d) in term.active_dims.iter().enumerate() {
                            let ell = ells[kk];
                            let diff = a[(i, d)] - b[(j, d)];
                            g_ells[kk][(i, j)] = 3.0 * v * e * diff * diff / (ell * ell);
                        }
                    }
                    KernelFamily::RationalQuadratic => {
                        let alpha = th.log_shape.unwrap().exp();
                        let mut s = 0.0;
                        for (kk, &d) in term.active_dims.iter().enumerate() {
                            let diff = (a[(i, d)] - b[(j, d)]) / ells[kk];
                            s += diff * diff;
                        }
                        let u = s / (2.0 * alpha);
                        let base = v * (1.0 + u).powf(-alpha - 1.0);
                        for (kk, &d) in term.active_dims.iter().enumerate() {
                            let ell = ells[kk];
                            let diff = a[(i, d)] - b[(j, d)];
                            g_ells[kk][(i, j)] = base * diff * diff / (ell * ell);
                        }
                        let gs = g_shape.as_mut().unwrap();
                        gs[(i, j)] = kij * alpha * (-(1.0 + u).ln() + u / (1.0 + u));
                    }
                }
            }
        }
        grads.push(g_var);
        grads.extend(g_ells);
        if let Some(gs) = g_shape {
            grads.push(gs);
        }
    }
    Ok(grads)
}

/// Adjoints produced by [`gram_vjp`].
pub struct GramVjp {
    /// Gradients w.r.t. the packed log-hyperparameters.
    pub hyper: Vec<f64>,
    /// Gradient w.r.t. the rows of `a`.
    pub a_bar: DMatrix<f64>,
    /// Gradient w.r.t. the rows of `b`.
    pub b_bar: DMatrix<f64>,
}

/// Accumulate hyperparameter and input adjoints of `sum(kbar .* K(a, b))`.
///
/// When `a` and `b` are the same matrix (e.g. the inducing Gram), sum
/// `a_bar + b_bar` for the total input gradient.
pub fn gram_vjp(
    spec: &KernelSpec,
    hyper: &KernelHyper,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    kbar: &DMatrix<f64>,
) -> Result<GramVjp> {
    check_inputs(spec, a, b)?;
    hyper.validate(spec)?;
    let (na, nb) = (a.nrows(), b.nrows());
    let mut hg = vec![0.0; KernelHyper::n_params(spec)];
    let mut a_bar = DMatrix::<f64>::zeros(na, spec.input_dim);
    let mut b_bar = DMatrix::<f64>::zeros(nb, spec.input_dim);
    let mut off = 0;
    for (term, th) in spec.terms.iter().zip(&hyper.terms) {
        let v = th.variance();
        let ells = th.lengthscales();
        let var_slot = off;
        let ell_slot = off + 1;
        off += 1 + ells.len();
        let shape_slot = if term.family == KernelFamily::RationalQuadratic {
            off += 1;
            Some(off - 1)
        } else {
            None
        };
        for i in 0..na {
            for j in 0..nb {
                let w = kbar[(i, j)];
                if w == 0.0 {
                    continue;
                }
                match term.family {
                    KernelFamily::RbfArd => {
                        let kij = term_eval(term, th, a, i, b, j);
                        hg[var_slot] += w * kij;
                        for (kk, &d) in term.active_dims.iter().enumerate() {
                            let ell2 = ells[kk] * ells[kk];
                            let diff = a[(i, d)] - b[(j, d)];
                            hg[ell_slot + kk] += w * kij * diff * diff / ell2;
                            let g = -kij * diff / ell2;
                            a_bar[(i, d)] += w * g;
                            b_bar[(j, d)] -= w * g;
                        }
                    }
                    KernelFamily::Linear => {
                        let mut s = 0.0;
                        for &d in &term.active_dims {
                            s += a[(i, d)] * b[(j, d)];
                        }
                        hg[var_slot] += w * v * s;
                        for &d in &term.active_dims {
                            a_bar[(i, d)] += w * v * b[(j, d)];
                            b_bar[(j, d)] += w * v * a[(i, d)];
                        }
                    }
                    KernelFamily::Matern32 => {
                        let mut s = 0.0;
                        for (kk, &d) in term.active_dims.iter().enumerate() {
                            let diff = (a[(i, d)] - b[(j, d)]) / ells[kk];
                            s += diff * diff;
                        }
                        let r = s.sqrt();
                        let e = (-(3f64.sqrt()) * r).exp();
                        let kij = v * (1.0 + 3f64.sqrt() * r) * e;
                        hg[var_slot] += w * kij;
                        for (kk, &d) in term.active_dims.iter().enumerate() {
                            let ell2 = ells[kk] * ells[kk];
                            let diff = a[(i, d)] - b[(j, d)];
                            hg[ell_slot + kk] += w * 3.0 * v * e * diff * diff / ell2;
                            let g = -3.0 * v * e * diff / ell2;
                            a_bar[(i, d)] += w * g;
                            b_bar[(j, d)] -= w * g;
                        }
                    }
                    KernelFamily::RationalQuadratic => {
                        let alpha = th.log_shape.unwrap().exp();
                        let mut s = 0.0;
                        for (kk, &d) in term.active_dims.iter().enumerate() {
                            let diff = (a[(i, d)] - b[(j, d)]) / ells[kk];
                            s += diff * diff;
                        }
                        let u = s / (2.0 * alpha);
                        let kij = v * (1.0 + u).powf(-alpha);
                        let base = v * (1.0 + u).powf(-alpha - 1.0);
                        hg[var_slot] += w * kij;
                        for (kk, &d) in term.active_dims.iter().enumerate() {
                            let ell2 = ells[kk] * ells[kk];
                            let diff = a[(i, d)] - b[(j, d)];
                            hg[ell_slot + kk] += w * base * diff * diff / ell2;
                            let g = -base * diff / ell2;
                            a_bar[(i, d)] += w * g;
                            b_bar[(j, d)] -= w * g;
                        }
                        hg[shape_slot.unwrap()] +=
                            w * kij * alpha * (-(1.0 + u).ln() + u / (1.0 + u));
                    }
                }
            }
        }
    }
    Ok(GramVjp { hyper: hg, a_bar, b_bar })
}

/// Adjoints of `sum(dbar .* diag K(a, a))` w.r.t. hyperparameters and inputs.
pub fn gram_diag_vjp(
    spec: &KernelSpec,
    hyper: &KernelHyper,
    a: &DMatrix<f64>,
    dbar: &DVector<f64>,
) -> Result<GramVjp> {
    check_inputs(spec, a, a)?;
    hyper.validate(spec)?;
    let na = a.nrows();
    let mut hg = vec![0.0; KernelHyper::n_params(spec)];
    let mut a_bar = DMatrix::<f64>::zeros(na, spec.input_dim);
    let mut off = 0;
    for (term, th) in spec.terms.iter().zip(&hyper.terms) {
        let v = th.variance();
        let var_slot = off;
        off += 1 + n_lengthscales(term)
            + usize::from(term.family == KernelFamily::RationalQuadratic);
        match term.family {
            KernelFamily::Linear => {
                for i in 0..na {
                    let w = dbar[i];
                    let mut s = 0.0;
                    for &d in &term.active_dims {
                        s += a[(i, d)] * a[(i, d)];
                        a_bar[(i, d)] += w * 2.0 * v * a[(i, d)];
                    }
                    hg[var_slot] += w * v * s;
                }
            }
            _ => {
                // Stationary kernels: diag = variance, independent of inputs
                // and lengthscales.
                for i in 0..na {
                    hg[var_slot] += dbar[i] * v;
                }
            }
        }
    }
    Ok(GramVjp {
        hyper: hg,
        a_bar,
        b_bar: DMatrix::<f64>::zeros(0, spec.input_dim),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::robust_cholesky;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn spec1d() -> KernelSpec {
        KernelSpec::rbf_linear(1)
    }

    #[test]
    fn rbf_at_same_point_is_variance() {
        let spec = KernelSpec::new(
            1,
            vec![KernelTerm {
                family: KernelFamily::RbfArd,
                active_dims: vec![0],
            }],
        )
        .unwrap();
        let hyper = KernelHyper::unit(&spec);
        let a = DMatrix::from_row_slice(1, 1, &[0.0]);
        let k = eval_gram(&spec, &hyper, &a, &a).unwrap();
        assert_relative_eq!(k[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn linear_is_inner_product() {
        let spec = KernelSpec::new(
            1,
            vec![KernelTerm {
                family: KernelFamily::Linear,
                active_dims: vec![0],
            }],
        )
        .unwrap();
        let hyper = KernelHyper::unit(&spec);
        let a = DMatrix::from_row_slice(1, 1, &[1.0]);
        let b = DMatrix::from_row_slice(1, 1, &[2.0]);
        let k = eval_gram(&spec, &hyper, &a, &b).unwrap();
        assert_relative_eq!(k[(0, 0)], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn rbf_plus_linear_matches_scalar_formula() {
        // Independent direct-formula oracle, evaluated term by term.
        let spec = spec1d();
        let mut hyper = KernelHyper::unit(&spec);
        hyper.terms[0].log_variance = 0.3;
        hyper.terms[0].log_lengthscales[0] = -0.2;
        hyper.terms[1].log_variance = -0.5;
        let (x, y) = (0.7, -1.3);
        let a = DMatrix::from_row_slice(1, 1, &[x]);
        let b = DMatrix::from_row_slice(1, 1, &[y]);
        let k = eval_gram(&spec, &hyper, &a, &b).unwrap();
        let ell = (-0.2f64).exp();
        let expect = 0.3f64.exp() * (-0.5 * ((x - y) / ell).powi(2)).exp()
            + (-0.5f64).exp() * x * y;
        assert_relative_eq!(k[(0, 0)], expect, epsilon = 1e-14);
    }

    #[test]
    fn variance_gradient_at_same_point_is_variance() {
        let spec = spec1d();
        let hyper = KernelHyper::unit(&spec);
        let a = DMatrix::from_row_slice(1, 1, &[0.4]);
        let grads = eval_gram_gradients(&spec, &hyper, &a, &a).unwrap();
        // d k_rbf(x,x) / d log variance = variance.
        assert_relative_eq!(grads[0][(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn linear_term_has_no_lengthscale_gradient() {
        let spec = KernelSpec::new(
            2,
            vec![KernelTerm {
                family: KernelFamily::Linear,
                active_dims: vec![0, 1],
            }],
        )
        .unwrap();
        let hyper = KernelHyper::unit(&spec);
        assert_eq!(KernelHyper::n_params(&spec), 1);
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.4, 1.0]);
        let grads = eval_gram_gradients(&spec, &hyper, &a, &a).unwrap();
        assert_eq!(grads.len(), 1);
    }

    fn fd_check_gram_gradients(spec: &KernelSpec, hyper: &KernelHyper, a: &DMatrix<f64>) {
        let grads = eval_gram_gradients(spec, hyper, a, a).unwrap();
        let mut packed = Vec::new();
        hyper.pack(&mut packed);
        let h = 1e-5;
        for (p, g) in grads.iter().enumerate() {
            let mut up = packed.clone();
            up[p] += h;
            let mut dn = packed.clone();
            dn[p] -= h;
            let ku = eval_gram(spec, &KernelHyper::unpack(spec, &up), a, a).unwrap();
            let kd = eval_gram(spec, &KernelHyper::unpack(spec, &dn), a, a).unwrap();
            for i in 0..a.nrows() {
                for j in 0..a.nrows() {
                    let fd = (ku[(i, j)] - kd[(i, j)]) / (2.0 * h);
                    let an = g[(i, j)];
                    assert!(
                        (fd - an).abs() <= 1e-5 * (1.0 + fd.abs().max(an.abs())),
                        "param {p} entry ({i},{j}): analytic {an} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn gram_gradients_match_finite_differences() {
        let mut rng = crate::seeds::rng_from(7);
        for spec in [
            KernelSpec::rbf_linear(2),
            KernelSpec::stochastic_preset(2),
        ] {
            let mut hyper = KernelHyper::unit(&spec);
            for t in &mut hyper.terms {
                t.log_variance = rng.random_range(-0.5..0.5);
                for l in &mut t.log_lengthscales {
                    *l = rng.random_range(-0.7..0.3);
                }
                if let Some(s) = &mut t.log_shape {
                    *s = rng.random_range(-0.3..0.5);
                }
            }
            let a = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.5..1.5));
            fd_check_gram_gradients(&spec, &hyper, &a);
        }
    }

    #[test]
    fn gram_vjp_matches_finite_differences() {
        let mut rng = crate::seeds::rng_from(11);
        let spec = KernelSpec::stochastic_preset(2);
        let mut hyper = KernelHyper::unit(&spec);
        for t in &mut hyper.terms {
            t.log_variance = rng.random_range(-0.5..0.5);
            for l in &mut t.log_lengthscales {
                *l = rng.random_range(-0.5..0.3);
            }
        }
        let a = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let kbar = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let vjp = gram_vjp(&spec, &hyper, &a, &b, &kbar).unwrap();
        let obj = |aa: &DMatrix<f64>, bb: &DMatrix<f64>, hy: &KernelHyper| {
            let k = eval_gram(&spec, hy, aa, bb).unwrap();
            k.zip_fold(&kbar, 0.0, |acc, x, w| acc + x * w)
        };
        let h = 1e-6;
        // Input adjoints.
        for i in 0..4 {
            for d in 0..2 {
                let mut up = a.clone();
                up[(i, d)] += h;
                let mut dn = a.clone();
                dn[(i, d)] -= h;
                let fd = (obj(&up, &b, &hyper) - obj(&dn, &b, &hyper)) / (2.0 * h);
                assert_relative_eq!(vjp.a_bar[(i, d)], fd, max_relative = 1e-4, epsilon = 1e-8);
            }
        }
        for j in 0..3 {
            for d in 0..2 {
                let mut up = b.clone();
                up[(j, d)] += h;
                let mut dn = b.clone();
                dn[(j, d)] -= h;
                let fd = (obj(&a, &up, &hyper) - obj(&a, &dn, &hyper)) / (2.0 * h);
                assert_relative_eq!(vjp.b_bar[(j, d)], fd, max_relative = 1e-4, epsilon = 1e-8);
            }
        }
        // Hyper adjoints.
        let mut packed = Vec::new();
        hyper.pack(&mut packed);
        for p in 0..packed.len() {
            let mut up = packed.clone();
            up[p] += h;
            let mut dn = packed.clone();
            dn[p] -= h;
            let fd = (obj(&a, &b, &KernelHyper::unpack(&spec, &up))
                - obj(&a, &b, &KernelHyper::unpack(&spec, &dn)))
                / (2.0 * h);
            assert_relative_eq!(vjp.hyper[p], fd, max_relative = 1e-4, epsilon = 1e-8);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = spec1d();
        let hyper = KernelHyper::unit(&spec);
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert!(eval_gram(&spec, &hyper, &a, &a).is_err());
    }

    proptest! {
        #[test]
        fn gram_plus_jitter_is_positive_definite(
            points in proptest::collection::vec(-3.0f64..3.0, 2..12),
            seed in 0u64..1000,
        ) {
            let n = points.len();
            let a = DMatrix::from_fn(n, 1, |i, _| points[i]);
            let mut rng = crate::seeds::rng_from(seed);
            let spec = KernelSpec::stochastic_preset(1);
            let mut hyper = KernelHyper::unit(&spec);
            for t in &mut hyper.terms {
                t.log_variance = rng.random_range(-1.0..1.0);
                for l in &mut t.log_lengthscales {
                    *l = rng.random_range(-1.0..1.0);
                }
            }
            let k = eval_gram(&spec, &hyper, &a, &a).unwrap();
            prop_assert!(robust_cholesky(&k).is_ok());
        }
    }
}
