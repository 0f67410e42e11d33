//! Flattening of (hyperparameters, variational state) into a single parameter
//! vector for the optimizer, and back.

use nalgebra::{DMatrix, DVector};

use super::{BoundMode, ElboGrad, Hyperparams, ModelKind, VariationalState, QU};
use crate::kernels::{KernelHyper, KernelSpec};

/// Describes the flat parameter vector for one model configuration.
///
/// Order: kernel log-hyperparameters, log noise variance, inducing inputs
/// (row-major), latent means, latent log-variances, then in stochastic mode
/// the inducing-output mean and lower-triangular factor (diagonal in log).
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub kind: ModelKind,
    pub bound: BoundMode,
    pub n_kernel: usize,
    pub n_data: usize,
    pub m_inducing: usize,
    pub input_dim: usize,
}

impl ParamLayout {
    pub fn new(kind: ModelKind, bound: BoundMode, spec: &KernelSpec, n: usize, m: usize) -> Self {
        Self {
            kind,
            bound,
            n_kernel: KernelHyper::n_params(spec),
            n_data: n,
            m_inducing: m,
            input_dim: kind.input_dim(),
        }
    }

    fn has_latent(&self) -> bool {
        self.kind.has_latent()
    }

    fn has_qu(&self) -> bool {
        matches!(self.bound, BoundMode::Stochastic { .. })
    }

    pub fn n_params(&self) -> usize {
        let m = self.m_inducing;
        let mut n = self.n_kernel + 1 + m * self.input_dim;
        if self.has_latent() {
            n += 2 * self.n_data;
        }
        if self.has_qu() {
            n += m + m * (m + 1) / 2;
        }
        n
    }

    pub fn pack(&self, hyper: &Hyperparams, state: &VariationalState) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        hyper.kernel.pack(&mut v);
        v.push(hyper.log_noise_variance);
        for a in 0..self.m_inducing {
            for d in 0..self.input_dim {
                v.push(state.z[(a, d)]);
            }
        }
        if self.has_latent() {
            v.extend(state.q_w_mean.iter());
            v.extend(state.q_w_log_var.iter());
        }
        if self.has_qu() {
            let qu = state.q_u.as_ref().expect("stochastic state carries q_u");
            v.extend(qu.mean.iter());
            for i in 0..self.m_inducing {
                for j in 0..=i {
                    if i == j {
                        v.push(qu.tril[(i, i)].ln());
                    } else {
                        v.push(qu.tril[(i, j)]);
                    }
                }
            }
        }
        DVector::from_vec(v)
    }

    pub fn unpack(&self, spec: &KernelSpec, params: &DVector<f64>) -> (Hyperparams, VariationalState) {
        let p = params.as_slice();
        let mut i = 0;
        let kernel = KernelHyper::unpack(spec, &p[..self.n_kernel]);
        i += self.n_kernel;
        let log_noise_variance = p[i];
        i += 1;
        let mut z = DMatrix::<f64>::zeros(self.m_inducing, self.input_dim);
        for a in 0..self.m_inducing {
            for d in 0..self.input_dim {
                z[(a, d)] = p[i];
                i += 1;
            }
        }
        let (q_w_mean, q_w_log_var) = if self.has_latent() {
            let mean = DVector::from_column_slice(&p[i..i + self.n_data]);
            i += self.n_data;
            let lv = DVector::from_column_slice(&p[i..i + self.n_data]);
            i += self.n_data;
            (mean, lv)
        } else {
            (DVector::<f64>::zeros(0), DVector::<f64>::zeros(0))
        };
        let q_u = if self.has_qu() {
            let mean = DVector::from_column_slice(&p[i..i + self.m_inducing]);
            i += self.m_inducing;
            let mut tril = DMatrix::<f64>::zeros(self.m_inducing, self.m_inducing);
            for a in 0..self.m_inducing {
                for b in 0..=a {
                    tril[(a, b)] = if a == b { p[i].exp() } else { p[i] };
                    i += 1;
                }
            }
            Some(QU { mean, tril })
        } else {
            None
        };
        debug_assert_eq!(i, self.n_params());
        (
            Hyperparams {
                kernel,
                log_noise_variance,
            },
            VariationalState {
                z,
                q_w_mean,
                q_w_log_var,
                q_u,
            },
        )
    }

    /// Flatten a gradient, applying the log-diagonal chain rule for the
    /// inducing-output covariance factor.
    pub fn grad_vec(&self, grad: &ElboGrad, state: &VariationalState) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend(grad.kernel.iter());
        v.push(grad.log_noise);
        for a in 0..self.m_inducing {
            for d in 0..self.input_dim {
                v.push(grad.z[(a, d)]);
            }
        }
        if self.has_latent() {
            v.extend(grad.q_w_mean.iter());
            v.extend(grad.q_w_log_var.iter());
        }
        if self.has_qu() {
            let qu = state.q_u.as_ref().expect("stochastic state carries q_u");
            let gm = grad.q_u_mean.as_ref().expect("q_u mean gradient");
            let gt = grad.q_u_tril.as_ref().expect("q_u tril gradient");
            v.extend(gm.iter());
            for i in 0..self.m_inducing {
                for j in 0..=i {
                    if i == j {
                        v.push(gt[(i, i)] * qu.tril[(i, i)]);
                    } else {
                        v.push(gt[(i, j)]);
                    }
                }
            }
        }
        DVector::from_vec(v)
    }
}
