//! Training schedules (Adam then BFGS; Adam-only with plateau stopping),
//! the random-restart protocol, and hyperparameter initialization sampling.

mod adam;
mod bfgs;

pub use adam::{adam_minimize, AdamOutcome, Plateau};
pub use bfgs::{bfgs_minimize, BfgsOutcome};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    elbo_collapsed_with_grad, exact_gp_log_marginal_with_grad, BoundMode, ElboGrad, Hyperparams,
    ModelKind, ParamLayout, VariationalState, QU,
};
use crate::gp::elbo_stochastic_with_grad;
use crate::kernels::{KernelFamily, KernelHyper, KernelSpec};
use crate::seeds;

/// Optimization schedule. The closed-form preset runs Adam then refines with
/// BFGS; the stochastic preset runs Adam alone with plateau stopping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schedule {
    pub adam_lr: f64,
    pub adam_epochs: usize,
    pub bfgs_max_iters: usize,
    pub bfgs_grad_tol: f64,
    pub plateau_window: Option<usize>,
    pub plateau_tol: f64,
}

impl Schedule {
    /// Adam(lr 0.1, 20000 epochs) then BFGS, for the collapsed bound.
    pub fn closed_form() -> Self {
        Self {
            adam_lr: 0.1,
            adam_epochs: 20_000,
            bfgs_max_iters: 2_000,
            bfgs_grad_tol: 1e-6,
            plateau_window: None,
            plateau_tol: 1e-3,
        }
    }

    /// Adam(lr 0.05, up to 100000 epochs) with plateau stopping, for the
    /// sampled bound.
    pub fn stochastic() -> Self {
        Self {
            adam_lr: 0.05,
            adam_epochs: 100_000,
            bfgs_max_iters: 0,
            bfgs_grad_tol: 1e-6,
            plateau_window: Some(500),
            plateau_tol: 1e-3,
        }
    }

    /// Shortened schedule for test suites.
    pub fn abbreviated(adam_epochs: usize, bfgs_max_iters: usize) -> Self {
        Self {
            adam_epochs,
            bfgs_max_iters,
            ..Self::closed_form()
        }
    }

    fn plateau(&self) -> Option<Plateau> {
        self.plateau_window.map(|window| Plateau {
            window,
            tol: self.plateau_tol,
        })
    }
}

/// Draw initial hyperparameters: kernel variances 1, likelihood noise
/// sigma^2 = 1/kappa^2 with kappa ~ U(10, 100), lengthscales 1/psi with
/// psi ~ U(1, 100).
pub fn sample_init_hyper<R: Rng>(rng: &mut R, spec: &KernelSpec) -> Hyperparams {
    let mut terms = Vec::with_capacity(spec.terms.len());
    for t in &spec.terms {
        let n_ls = match t.family {
            KernelFamily::Linear => 0,
            _ => t.active_dims.len(),
        };
        let log_lengthscales = (0..n_ls)
            .map(|_| {
                let psi: f64 = rng.random_range(1.0..100.0);
                (1.0 / psi).ln()
            })
            .collect();
        terms.push(crate::kernels::TermHyper {
            log_variance: 0.0,
            log_lengthscales,
            log_shape: match t.family {
                KernelFamily::RationalQuadratic => Some(0.0),
                _ => None,
            },
        });
    }
    let kappa: f64 = rng.random_range(10.0..100.0);
    Hyperparams {
        kernel: KernelHyper { terms },
        log_noise_variance: (1.0 / (kappa * kappa)).ln(),
    }
}

/// Everything needed to fit one model.
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub kind: ModelKind,
    pub bound: BoundMode,
    pub spec: KernelSpec,
    /// Requested inducing-point count; clamped to N. Ignored for ExactGp.
    pub m_inducing: usize,
    pub schedule: Schedule,
    pub n_restarts: usize,
    pub seed: u64,
    pub parallel_restarts: bool,
    pub check_gradient: bool,
}

#[derive(Debug, Clone, Default)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub best_restart: usize,
    pub adam_trace_finite: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub best_elbo: f64,
    pub best_hyper: Hyperparams,
    pub best_state: VariationalState,
    pub per_restart_elbos: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

struct RestartOutcome {
    elbo: f64,
    hyper: Hyperparams,
    state: VariationalState,
    diagnostics: FitDiagnostics,
}

fn init_state<R: Rng>(
    rng: &mut R,
    cfg: &FitConfig,
    inputs: Option<&DVector<f64>>,
    outputs: &DVector<f64>,
    m: usize,
) -> VariationalState {
    let n = outputs.len();
    let d = cfg.kind.input_dim();
    // Latent posterior: mean 0.01 * outputs, variance 1e-4.
    let q_w_mean = if cfg.kind.has_latent() {
        outputs * 0.01
    } else {
        DVector::<f64>::zeros(0)
    };
    let q_w_log_var = if cfg.kind.has_latent() {
        DVector::from_element(n, (1e-4f64).ln())
    } else {
        DVector::<f64>::zeros(0)
    };
    // Inducing inputs: rows drawn uniformly from the mean-augmented inputs,
    // then jittered with N(0, 0.01).
    let mut z = DMatrix::<f64>::zeros(m, d);
    for a in 0..m {
        let i = rng.random_range(0..n);
        let mut col = 0;
        if cfg.kind.has_observed_input() {
            z[(a, col)] = inputs.map(|x| x[i]).unwrap_or(0.0);
            col += 1;
        }
        if cfg.kind.has_latent() {
            z[(a, col)] = q_w_mean[i];
        }
        for dd in 0..d {
            let e: f64 = StandardNormal.sample(rng);
            z[(a, dd)] += 0.1 * e;
        }
    }
    let q_u = match cfg.bound {
        BoundMode::Stochastic { .. } => Some(QU {
            mean: DVector::<f64>::zeros(m),
            tril: DMatrix::<f64>::identity(m, m) * 0.1,
        }),
        BoundMode::Collapsed => None,
    };
    VariationalState {
        z,
        q_w_mean,
        q_w_log_var,
        q_u,
    }
}

fn run_restart(
    cfg: &FitConfig,
    inputs: Option<&DVector<f64>>,
    outputs: &DVector<f64>,
    restart: usize,
) -> Result<RestartOutcome> {
    let restart_seed = seeds::derive(cfg.seed, "restart", restart as u64);
    let mut rng = seeds::rng_from(restart_seed);
    let hyper0 = sample_init_hyper(&mut rng, &cfg.spec);
    let n = outputs.len();
    let m = if cfg.kind == ModelKind::ExactGp {
        0
    } else {
        cfg.m_inducing.min(n)
    };
    let state0 = init_state(&mut rng, cfg, inputs, outputs, m);
    let layout = ParamLayout::new(cfg.kind, cfg.bound, &cfg.spec, n, m);
    let x0 = layout.pack(&hyper0, &state0);

    // Negative ELBO and gradient, flattened. Numeric failures (Cholesky
    // breakdown, overflow to non-finite) become +inf so the optimizer can
    // back out of the region instead of aborting the restart.
    let eval = |epoch_seed: Option<u64>, params: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        match eval_raw(cfg, &layout, inputs, outputs, restart_seed, epoch_seed, params) {
            Ok(v) => Ok(v),
            Err(Error::CholeskyFailure { .. }) | Err(Error::NonFinite(_)) => {
                Ok((f64::INFINITY, DVector::<f64>::zeros(params.len())))
            }
            Err(e) => Err(e),
        }
    };

    let adam_out = adam_minimize(
        |epoch, params| eval(Some(seeds::derive(restart_seed, "mc", epoch as u64)), params),
        &x0,
        cfg.schedule.adam_lr,
        cfg.schedule.adam_epochs,
        cfg.schedule.plateau(),
    )?;
    let adam_trace_finite = adam_out.trace.iter().all(|v| v.is_finite());

    let (x_final, f_final, bfgs_diag) = if cfg.schedule.bfgs_max_iters > 0 && adam_out.best_f.is_finite() {
        let out = bfgs_minimize(
            |params| eval(None, params),
            &adam_out.best_x,
            cfg.schedule.bfgs_max_iters,
            cfg.schedule.bfgs_grad_tol,
            cfg.check_gradient,
        )?;
        let (x, f) = if out.f <= adam_out.best_f {
            (out.x.clone(), out.f)
        } else {
            (adam_out.best_x.clone(), adam_out.best_f)
        };
        (x, f, Some(out))
    } else {
        (adam_out.best_x.clone(), adam_out.best_f, None)
    };

    let (hyper, state) = layout.unpack(&cfg.spec, &x_final);
    Ok(RestartOutcome {
        elbo: -f_final,
        hyper,
        state,
        diagnostics: FitDiagnostics {
            iterations: adam_out.iterations
                + bfgs_diag.as_ref().map(|b| b.iterations).unwrap_or(0),
            converged: bfgs_diag.as_ref().map(|b| b.converged).unwrap_or(false),
            line_search_failed: bfgs_diag
                .as_ref()
                .map(|b| b.line_search_failed)
                .unwrap_or(false),
            best_restart: restart,
            adam_trace_finite,
        },
    })
}

/// Generous sanity box for the flat parameter vector; log-parameters beyond
/// this are numerically meaningless and the objective reports +inf there.
const LOG_PARAM_LIMIT: f64 = 14.0;
const LOCATION_LIMIT: f64 = 1e3;

fn in_bounds(layout: &ParamLayout, params: &DVector<f64>) -> bool {
    let logs = layout.n_kernel + 1;
    for i in 0..logs {
        if params[i].abs() > LOG_PARAM_LIMIT {
            return false;
        }
    }
    for i in logs..params.len() {
        if params[i].abs() > LOCATION_LIMIT {
            return false;
        }
    }
    true
}

fn eval_raw(
    cfg: &FitConfig,
    layout: &ParamLayout,
    inputs: Option<&DVector<f64>>,
    outputs: &DVector<f64>,
    restart_seed: u64,
    epoch_seed: Option<u64>,
    params: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    {
        if !in_bounds(layout, params) {
            return Err(Error::NonFinite("parameters outside the sanity box"));
        }
        let (hyper, state) = layout.unpack(&cfg.spec, params);
        let (value, grad): (f64, ElboGrad) = match (cfg.kind, cfg.bound) {
            (ModelKind::ExactGp, _) => {
                let x = inputs.ok_or(Error::InvalidParameter {
                    name: "inputs".into(),
                    reason: "ExactGp requires observed inputs".into(),
                })?;
                let (v, kg, ng) = exact_gp_log_marginal_with_grad(x, outputs, &cfg.spec, &hyper)?;
                (
                    v,
                    ElboGrad {
                        kernel: kg,
                        log_noise: ng,
                        z: DMatrix::<f64>::zeros(0, cfg.kind.input_dim()),
                        q_w_mean: DVector::<f64>::zeros(0),
                        q_w_log_var: DVector::<f64>::zeros(0),
                        q_u_mean: None,
                        q_u_tril: None,
                    },
                )
            }
            (kind, BoundMode::Collapsed) => {
                let (v, g) =
                    elbo_collapsed_with_grad(kind, inputs, outputs, &cfg.spec, &hyper, &state)?;
                (v, g)
            }
            (kind, BoundMode::Stochastic { samples }) => {
                let seed = epoch_seed.unwrap_or_else(|| seeds::derive(restart_seed, "mc", 0));
                let (v, g) = elbo_stochastic_with_grad(
                    kind, inputs, outputs, &cfg.spec, &hyper, &state, samples, seed,
                )?;
                (v, g)
            }
        };
        let gv = layout.grad_vec(&grad, &state);
        Ok((-value, -gv))
    }
}

/// Fit one model with `n_restarts` independent restarts; the restart with the
/// highest ELBO wins, with ties broken toward the lowest restart index so
/// parallel and serial execution agree.
pub fn fit(
    inputs: Option<&DVector<f64>>,
    outputs: &DVector<f64>,
    cfg: &FitConfig,
) -> Result<FitResult> {
    if outputs.is_empty() {
        return Err(Error::InvalidParameter {
            name: "outputs".into(),
            reason: "data must be non-empty".into(),
        });
    }
    if cfg.n_restarts == 0 {
        return Err(Error::InvalidParameter {
            name: "n_restarts".into(),
            reason: "need at least one restart".into(),
        });
    }
    let run = |i: usize| run_restart(cfg, inputs, outputs, i);
    let outcomes: Vec<Result<RestartOutcome>> = if cfg.parallel_restarts {
        (0..cfg.n_restarts).into_par_iter().map(run).collect()
    } else {
        (0..cfg.n_restarts).map(run).collect()
    };

    let mut per_restart_elbos = Vec::with_capacity(cfg.n_restarts);
    let mut best: Option<RestartOutcome> = None;
    let mut first_err: Option<Error> = None;
    for outcome in outcomes {
        match outcome {
            Ok(o) => {
                per_restart_elbos.push(o.elbo);
                let better = match &best {
                    None => o.elbo.is_finite(),
                    Some(b) => o.elbo.is_finite() && o.elbo > b.elbo,
                };
                if better {
                    best = Some(o);
                }
            }
            Err(e) => {
                per_restart_elbos.push(f64::NEG_INFINITY);
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    match best {
        Some(b) => Ok(FitResult {
            best_elbo: b.elbo,
            best_hyper: b.hyper,
            best_state: b.state,
            per_restart_elbos,
            diagnostics: b.diagnostics,
        }),
        None => Err(Error::AllRestartsDiverged {
            model: format!("{:?}/{:?}", cfg.kind, cfg.bound),
            restarts: cfg.n_restarts,
        }),
    }
}
