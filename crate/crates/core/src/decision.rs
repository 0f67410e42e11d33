//! Per-direction evidence scores and the Bayesian model-selection rule,
//! with joint/conditional/marginal scoring modes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Direction};
use crate::error::{Error, Result};
use crate::gp::{BoundMode, ModelKind};
use crate::kernels::KernelSpec;
use crate::optimize::{fit, FitConfig, FitResult, Schedule};
use crate::seeds;

/// Which evidence terms enter the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoringMode {
    Joint,
    ConditionalOnly,
    MarginalOnly,
}

/// Verdict of the decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    XtoY,
    YtoX,
    Undecided,
}

/// Evidence for one causal direction: marginal score of the cause plus
/// conditional score of the effect given the cause.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionScore {
    pub direction: Direction,
    pub l_marg_cause: f64,
    pub l_cond_effect: f64,
    pub total: f64,
}

impl DirectionScore {
    pub fn new(direction: Direction, l_marg_cause: f64, l_cond_effect: f64) -> Self {
        Self {
            direction,
            l_marg_cause,
            l_cond_effect,
            total: l_marg_cause + l_cond_effect,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decision {
    pub predicted: Verdict,
    pub log_margin: f64,
    pub mode: ScoringMode,
}

/// Configuration for the four model fits behind a direction comparison.
#[derive(Debug, Clone)]
pub struct ScoreConfig {
    pub bound: BoundMode,
    pub m_inducing: usize,
    pub schedule: Schedule,
    pub n_restarts: usize,
    pub seed: u64,
    pub parallel: bool,
}

impl ScoreConfig {
    /// Kernel preset per bound mode: RBF+Linear for the collapsed bound,
    /// RBF+Linear+Matern32+RQ for the sampled bound.
    pub fn spec_for(&self, kind: ModelKind) -> KernelSpec {
        let dim = kind.input_dim();
        match self.bound {
            BoundMode::Collapsed => KernelSpec::rbf_linear(dim),
            BoundMode::Stochastic { .. } => KernelSpec::stochastic_preset(dim),
        }
    }

    fn fit_config(&self, kind: ModelKind, seed: u64) -> FitConfig {
        FitConfig {
            kind,
            bound: self.bound,
            spec: self.spec_for(kind),
            m_inducing: self.m_inducing,
            schedule: self.schedule.clone(),
            n_restarts: self.n_restarts,
            seed,
            parallel_restarts: self.parallel,
            check_gradient: false,
        }
    }
}

fn check_normalized(data: &Dataset) -> Result<()> {
    for (col, name) in [(&data.x, "x"), (&data.y, "y")] {
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if mean.abs() > 1e-6 || (var.sqrt() - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidParameter {
                name: format!("data.{name}"),
                reason: "scoring requires normalized data (mean 0, sd 1)".into(),
            });
        }
    }
    Ok(())
}

/// Fit the four models (marginal and conditional for each direction) with
/// identical kernels, priors, schedules, and restart budgets for mirrored
/// roles, and return both direction scores.
///
/// Mirrored roles share derived seeds, so swapping the data columns swaps
/// the two scores exactly.
pub fn score_directions(
    data: &Dataset,
    cfg: &ScoreConfig,
) -> Result<(DirectionScore, DirectionScore)> {
    if data.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "data".into(),
            reason: "need at least 2 samples".into(),
        });
    }
    check_normalized(data)?;
    let x = data.x_vector();
    let y = data.y_vector();
    let seed_marg = seeds::derive(cfg.seed, "marginal", 0);
    let seed_cond = seeds::derive(cfg.seed, "conditional", 0);

    // (model tag, kind, inputs, outputs, seed)
    let jobs: Vec<(&str, ModelKind, Option<&nalgebra::DVector<f64>>, &nalgebra::DVector<f64>, u64)> = vec![
        ("marginal p(x)", ModelKind::MarginalGplvm, None, &x, seed_marg),
        ("conditional p(y|x)", ModelKind::ConditionalGplvm, Some(&x), &y, seed_cond),
        ("marginal p(y)", ModelKind::MarginalGplvm, None, &y, seed_marg),
        ("conditional p(x|y)", ModelKind::ConditionalGplvm, Some(&y), &x, seed_cond),
    ];
    let run = |(tag, kind, inputs, outputs, seed): (
        &str,
        ModelKind,
        Option<&nalgebra::DVector<f64>>,
        &nalgebra::DVector<f64>,
        u64,
    )|
     -> Result<FitResult> {
        fit(inputs, outputs, &cfg.fit_config(kind, seed)).map_err(|e| Error::FitFailed {
            model: tag.to_string(),
            source: Box::new(e),
        })
    };
    let results: Vec<Result<FitResult>> = if cfg.parallel {
        jobs.into_par_iter().map(run).collect()
    } else {
        jobs.into_iter().map(run).collect()
    };
    let mut elbos = Vec::with_capacity(4);
    for r in results {
        elbos.push(r?.best_elbo);
    }
    let xy = DirectionScore::new(Direction::XtoY, elbos[0], elbos[1]);
    let yx = DirectionScore::new(Direction::YtoX, elbos[2], elbos[3]);
    Ok((xy, yx))
}

/// Apply the decision rule to a pair of direction scores.
pub fn decide(
    xy: &DirectionScore,
    yx: &DirectionScore,
    mode: ScoringMode,
    tie_tolerance: f64,
) -> Result<Decision> {
    let (a, b) = match mode {
        ScoringMode::Joint => (xy.total, yx.total),
        ScoringMode::ConditionalOnly => (xy.l_cond_effect, yx.l_cond_effect),
        ScoringMode::MarginalOnly => (xy.l_marg_cause, yx.l_marg_cause),
    };
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("direction scores"));
    }
    let log_margin = a - b;
    let predicted = if log_margin > tie_tolerance {
        Verdict::XtoY
    } else if log_margin < -tie_tolerance {
        Verdict::YtoX
    } else {
        Verdict::Undecided
    };
    Ok(Decision {
        predicted,
        log_margin,
        mode,
    })
}

/// Default tie tolerance in nats.
pub const TIE_TOLERANCE: f64 = 1e-6;
