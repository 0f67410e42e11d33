//! C ABI for bivariate causal direction discovery.
//!
//! All objects cross the boundary as opaque handles; every fallible call
//! returns a [`BcStatus`] and the last error message is retrievable per
//! thread via [`bc_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use bicausal::data::{normalize, Dataset};
use bicausal::decision::{decide, score_directions, ScoreConfig, ScoringMode, Verdict};
use bicausal::gp::BoundMode;
use bicausal::optimize::Schedule;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg).ok();
    });
}

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcStatus {
    BcOk = 0,
    BcNullPointer = 1,
    BcInvalidArgument = 2,
    BcNumericalError = 3,
    BcInternalError = 4,
}

/// Predicted causal direction.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcDirection {
    BcUndecided = 0,
    BcXtoY = 1,
    BcYtoX = 2,
}

/// Scoring mode: which evidence terms enter the comparison.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcScoringMode {
    BcJoint = 0,
    BcConditionalOnly = 1,
    BcMarginalOnly = 2,
}

/// Result of a direction decision: the verdict, the log-evidence margin,
/// and the four per-model scores.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BcDecision {
    pub direction: BcDirection,
    pub log_margin: f64,
    pub l_x: f64,
    pub l_y_given_x: f64,
    pub l_y: f64,
    pub l_x_given_y: f64,
}

/// Opaque dataset handle.
pub struct BcDataset {
    inner: Dataset,
}

/// Opaque configuration handle.
pub struct BcConfig {
    seed: u64,
    restarts: usize,
    inducing: usize,
    stochastic_samples: usize, // 0 = collapsed bound
    adam_epochs: Option<usize>,
    bfgs_iters: Option<usize>,
    mode: ScoringMode,
    tie_tolerance: f64,
}

impl BcConfig {
    fn score_config(&self) -> ScoreConfig {
        let bound = if self.stochastic_samples == 0 {
            BoundMode::Collapsed
        } else {
            BoundMode::Stochastic {
                samples: self.stochastic_samples,
            }
        };
        let mut schedule = match bound {
            BoundMode::Collapsed => Schedule::closed_form(),
            BoundMode::Stochastic { .. } => Schedule::stochastic(),
        };
        if let Some(e) = self.adam_epochs {
            schedule.adam_epochs = e;
        }
        if let Some(b) = self.bfgs_iters {
            schedule.bfgs_max_iters = b;
        }
        ScoreConfig {
            bound,
            m_inducing: self.inducing,
            schedule,
            n_restarts: self.restarts,
            seed: self.seed,
            parallel: true,
        }
    }
}

/// Last error message for this thread, or NULL. Valid until the next
/// failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn bc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Create a dataset from two equal-length arrays.
///
/// # Safety
/// `xs` and `ys` must point to at least `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn bc_dataset_create(
    xs: *const f64,
    ys: *const f64,
    len: usize,
) -> *mut BcDataset {
    if xs.is_null() || ys.is_null() || len == 0 {
        set_error("null data pointer or empty dataset".into());
        return std::ptr::null_mut();
    }
    let x = std::slice::from_raw_parts(xs, len).to_vec();
    let y = std::slice::from_raw_parts(ys, len).to_vec();
    match Dataset::new("ffi", x, y) {
        Ok(inner) => Box::into_raw(Box::new(BcDataset { inner })),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `ds` must be a pointer from [`bc_dataset_create`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bc_dataset_free(ds: *mut BcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// New configuration with the library defaults (20 restarts, 200 inducing
/// points, collapsed bound, joint scoring).
#[no_mangle]
pub extern "C" fn bc_config_create() -> *mut BcConfig {
    Box::into_raw(Box::new(BcConfig {
        seed: 0,
        restarts: 20,
        inducing: 200,
        stochastic_samples: 0,
        adam_epochs: None,
        bfgs_iters: None,
        mode: ScoringMode::Joint,
        tie_tolerance: 1e-6,
    }))
}

/// # Safety
/// `cfg` must be a pointer from [`bc_config_create`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bc_config_free(cfg: *mut BcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a valid configuration handle.
#[no_mangle]
pub unsafe extern "C" fn bc_config_set_seed(cfg: *mut BcConfig, value: u64) -> BcStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config".into());
        return BcStatus::BcNullPointer;
    };
    cfg.seed = value;
    BcStatus::BcOk
}

/// # Safety
/// `cfg` must be a valid configuration handle.
#[no_mangle]
pub unsafe extern "C" fn bc_config_set_restarts(cfg: *mut BcConfig, value: usize) -> BcStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config".into());
        return BcStatus::BcNullPointer;
    };
    cfg.restarts = value;
    BcStatus::BcOk
}

/// # Safety
/// `cfg` must be a valid configuration handle.
#[no_mangle]
pub unsafe extern "C" fn bc_config_set_inducing(cfg: *mut BcConfig, value: usize) -> BcStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config".into());
        return BcStatus::BcNullPointer;
    };
    cfg.inducing = value;
    BcStatus::BcOk
}

/// Use the sampled bound with this many Monte-Carlo samples; 0 selects the
/// collapsed bound.
/// # Safety
/// `cfg` must be a valid configuration handle.
#[no_mangle]
pub unsafe extern "C" fn bc_config_set_stochastic_samples(
    cfg: *mut BcConfig,
    value: usize,
) -> BcStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config".into());
        return BcStatus::BcNullPointer;
    };
    cfg.stochastic_samples = value;
    BcStatus::BcOk
}

/// # Safety
/// `cfg` must be a valid configuration handle.
#[no_mangle]
pub unsafe extern "C" fn bc_config_set_adam_epochs(cfg: *mut BcConfig, value: usize) -> BcStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config".into());
        return BcStatus::BcNullPointer;
    };
    cfg.adam_epochs = Some(value);
    BcStatus::BcOk
}

/// # Safety
/// `cfg` must be a valid configuration handle.
#[no_mangle]
pub unsafe extern "C" fn bc_config_set_bfgs_iters(cfg: *mut BcConfig, value: usize) -> BcStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config".into());
        return BcStatus::BcNullPointer;
    };
    cfg.bfgs_iters = Some(value);
    BcStatus::BcOk
}

/// # Safety
/// `cfg` must be a valid configuration handle.
#[no_mangle]
pub unsafe extern "C" fn bc_config_set_tie_tolerance(cfg: *mut BcConfig, value: f64) -> BcStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config".into());
        return BcStatus::BcNullPointer;
    };
    cfg.tie_tolerance = value;
    BcStatus::BcOk
}

/// # Safety
/// `cfg` must be a valid configuration handle.
#[no_mangle]
pub unsafe extern "C" fn bc_config_set_mode(cfg: *mut BcConfig, mode: BcScoringMode) -> BcStatus {
    let Some(cfg) = cfg.as_mut() else {
        set_error("null config".into());
        return BcStatus::BcNullPointer;
    };
    cfg.mode = match mode {
        BcScoringMode::BcJoint => ScoringMode::Joint,
        BcScoringMode::BcConditionalOnly => ScoringMode::ConditionalOnly,
        BcScoringMode::BcMarginalOnly => ScoringMode::MarginalOnly,
    };
    BcStatus::BcOk
}

/// Normalize the dataset, fit all four models, and decide the direction.
///
/// # Safety
/// `ds` and `cfg` must be valid handles and `out` must point to writable
/// memory for one [`BcDecision`].
#[no_mangle]
pub unsafe extern "C" fn bc_discover(
    ds: *const BcDataset,
    cfg: *const BcConfig,
    out: *mut BcDecision,
) -> BcStatus {
    let (Some(ds), Some(cfg), Some(out)) = (ds.as_ref(), cfg.as_ref(), out.as_mut()) else {
        set_error("null pointer argument".into());
        return BcStatus::BcNullPointer;
    };
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<BcDecision, bicausal::Error> {
        let data = normalize(&ds.inner)?;
        let (xy, yx) = score_directions(&data, &cfg.score_config())?;
        let decision = decide(&xy, &yx, cfg.mode, cfg.tie_tolerance)?;
        Ok(BcDecision {
            direction: match decision.predicted {
                Verdict::XtoY => BcDirection::BcXtoY,
                Verdict::YtoX => BcDirection::BcYtoX,
                Verdict::Undecided => BcDirection::BcUndecided,
            },
            log_margin: decision.log_margin,
            l_x: xy.l_marg_cause,
            l_y_given_x: xy.l_cond_effect,
            l_y: yx.l_marg_cause,
            l_x_given_y: yx.l_cond_effect,
        })
    }));
    match result {
        Ok(Ok(decision)) => {
            *out = decision;
            BcStatus::BcOk
        }
        Ok(Err(e)) => {
            set_error(e.to_string());
            match e {
                bicausal::Error::CholeskyFailure { .. } | bicausal::Error::NonFinite(_) => {
                    BcStatus::BcNumericalError
                }
                _ => BcStatus::BcInvalidArgument,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            BcStatus::BcInternalError
        }
    }
}
