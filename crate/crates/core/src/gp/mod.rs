//! Evidence lower bounds: exact GP regression log marginal likelihood, the
//! collapsed sparse GPLVM bound, and the doubly-stochastic GPLVM bound, for
//! both marginal models p(x) and conditional models p(y|x).

mod collapsed;
mod exact;
mod kl;
mod pack;
mod stochastic;

pub use collapsed::{elbo_collapsed, elbo_collapsed_with_grad, optimal_qu};
pub use exact::{exact_gp_log_marginal, exact_gp_log_marginal_with_grad};
pub use kl::{kl_diag_gaussians_to_std, kl_full_gaussian_to_prior};
pub use pack::ParamLayout;
pub use stochastic::{elbo_stochastic, elbo_stochastic_with_grad};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelHyper;

/// Kernel hyperparameters plus the likelihood noise, all in log-space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparams {
    pub kernel: KernelHyper,
    pub log_noise_variance: f64,
}

impl Hyperparams {
    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }
}

/// Gaussian over inducing outputs, stored as mean and lower-triangular
/// covariance factor. Present only in stochastic (uncollapsed) mode.
#[derive(Debug, Clone)]
pub struct QU {
    pub mean: DVector<f64>,
    pub tril: DMatrix<f64>,
}

/// Inducing inputs plus variational posteriors.
#[derive(Debug, Clone)]
pub struct VariationalState {
    /// M x D inducing inputs in the (observed + latent) input space.
    pub z: DMatrix<f64>,
    /// Per-datapoint latent posterior mean; empty for ExactGp.
    pub q_w_mean: DVector<f64>,
    /// Per-datapoint latent posterior log-variance; empty for ExactGp.
    pub q_w_log_var: DVector<f64>,
    /// Inducing-output posterior; absent in collapsed mode.
    pub q_u: Option<QU>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// GP regression on observed inputs; no latent input (ANM case).
    ExactGp,
    /// Latent-input-only model for a marginal density p(x).
    MarginalGplvm,
    /// Observed + latent input model for a conditional density p(y|x).
    ConditionalGplvm,
}

impl ModelKind {
    pub fn has_latent(self) -> bool {
        !matches!(self, ModelKind::ExactGp)
    }
    pub fn has_observed_input(self) -> bool {
        !matches!(self, ModelKind::MarginalGplvm)
    }
    /// Kernel input dimensionality for bivariate data.
    pub fn input_dim(self) -> usize {
        match self {
            ModelKind::ExactGp => 1,
            ModelKind::MarginalGplvm => 1,
            ModelKind::ConditionalGplvm => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundMode {
    Collapsed,
    Stochastic { samples: usize },
}

/// Gradient of an ELBO with respect to every free parameter.
#[derive(Debug, Clone)]
pub struct ElboGrad {
    pub kernel: Vec<f64>,
    pub log_noise: f64,
    pub z: DMatrix<f64>,
    pub q_w_mean: DVector<f64>,
    pub q_w_log_var: DVector<f64>,
    pub q_u_mean: Option<DVector<f64>>,
    /// Gradient w.r.t. the raw lower-triangular factor entries.
    pub q_u_tril: Option<DMatrix<f64>>,
}

/// Assemble the N x D matrices of per-point input means and variances from
/// observed inputs and the latent posterior. The latent dimension is the last
/// column.
pub(crate) fn build_inputs(
    kind: ModelKind,
    inputs: Option<&DVector<f64>>,
    n: usize,
    state: &VariationalState,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = kind.input_dim();
    let mut means = DMatrix::<f64>::zeros(n, d);
    let mut vars = DMatrix::<f64>::zeros(n, d);
    if kind.has_observed_input() {
        let x = inputs.ok_or(Error::InvalidParameter {
            name: "inputs".into(),
            reason: "model kind requires observed inputs".into(),
        })?;
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                context: "inputs",
                expected: n,
                got: x.len(),
            });
        }
        for i in 0..n {
            means[(i, 0)] = x[i];
        }
    }
    if kind.has_latent() {
        if state.q_w_mean.len() != n || state.q_w_log_var.len() != n {
            return Err(Error::DimensionMismatch {
                context: "latent posterior",
                expected: n,
                got: state.q_w_mean.len(),
            });
        }
        let col = d - 1;
        for i in 0..n {
            means[(i, col)] = state.q_w_mean[i];
            vars[(i, col)] = state.q_w_log_var[i].exp();
        }
    }
    Ok((means, vars))
}
