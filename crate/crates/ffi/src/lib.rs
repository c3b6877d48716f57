//! C ABI for loading trial datasets and running the estimators.
//!
//! Datasets live behind an opaque `PeDataset` handle created by one of the
//! `pe_dataset_*` constructors and released with [`pe_dataset_free`]. Every
//! fallible call returns a [`PeStatus`]; the message of the last failure on
//! the calling thread is available from [`pe_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use policy_eval::cli::io::read_dataset_file;
use policy_eval::estimators::{HybridWeight, OlsCovariance};
use policy_eval::inference::{compare_policies, evaluate, normal_cdf, normal_quantile, Centering, EvalOptions, KChoice, VarianceMethod};
use policy_eval::policies::{whittle_index_of, WhittleConfig};
use policy_eval::{Arm, Error, EstimateReport, EstimatorKind, RctDataset, RctRecord, TransitionModel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument, configuration or malformed input.
    InvalidInput = 2,
    /// A data invariant does not hold or the data are degenerate.
    InvalidData = 3,
    Numerical = 4,
    Io = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeEstimator {
    Base = 0,
    Subgroup = 1,
    Threshold = 2,
    Hybrid = 3,
    MateReshuffle = 4,
    RegressionBase = 5,
    RegressionSubgroup = 6,
}

/// `Default` picks the method the library would pick for the dataset.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeVariance {
    Default = 0,
    SgSimple = 1,
    SgKnn = 2,
    BaseKnn = 3,
    Welch = 4,
    OlsClassical = 5,
    OlsHc0 = 6,
    HybKnn = 7,
}

/// Evaluation options. Obtain defaults from [`pe_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeOptions {
    pub level: f64,
    /// Reward steps to use; 0 uses the full horizon.
    pub truncate_at: usize,
    /// Allocation rounds to evaluate; 0 uses all.
    pub upto_round: usize,
    /// Order-statistic window; 0 chooses automatically.
    pub k: usize,
    /// Hybrid weight; NaN estimates it.
    pub hybrid_weight: f64,
    /// Non-zero centres the simple subgroup variance about `S / n`.
    pub literal_centering: u8,
}

/// Estimate and inference. Fields without a value are NaN (or 0 for `k_used`).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeReport {
    pub point: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub level: f64,
    pub hybrid_weight: f64,
    pub k_used: usize,
    pub n: usize,
    /// Non-zero when a negative variance estimate was clamped to 0.
    pub variance_clamped: u8,
}

/// Opaque dataset handle.
pub struct PeDataset {
    inner: RctDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PeStatus {
    match e {
        Error::Config(_) | Error::Parse { .. } => PeStatus::InvalidInput,
        Error::Invariant { .. } | Error::Degenerate(_) => PeStatus::InvalidData,
        Error::Numerical(_) => PeStatus::Numerical,
        Error::Io(_) => PeStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PeStatus, String)>) -> PeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PeStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PeStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (PeStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PeStatus, String) {
    (PeStatus::NullPointer, format!("{what} is null"))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pe_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn pe_options_default() -> PeOptions {
    PeOptions { level: 0.95, truncate_at: 0, upto_round: 0, k: 0, hybrid_weight: f64::NAN, literal_centering: 0 }
}

/// Loads a dataset CSV. `alpha` NaN infers the treatment fraction.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pe_dataset_load_csv(path: *const c_char, alpha: f64, out: *mut *mut PeDataset) -> PeStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| (PeStatus::InvalidInput, "path is not UTF-8".into()))?;
        let alpha = if alpha.is_nan() { None } else { Some(alpha) };
        let data = read_dataset_file(Path::new(path), alpha).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(PeDataset { inner: data }));
        Ok(())
    })
}

/// Builds a single-round, single-step dataset from per-agent arrays of length
/// `n`. `policy_treated[i]` is non-zero for treated policy agents.
///
/// # Safety
/// Every array pointer must be valid for `n` elements and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pe_dataset_from_arrays(
    n: usize,
    policy_index: *const f64,
    policy_treated: *const u8,
    policy_reward: *const f64,
    control_index: *const f64,
    control_reward: *const f64,
    alpha: f64,
    out: *mut *mut PeDataset,
) -> PeStatus {
    guard(|| {
        for (p, name) in [
            (policy_index.cast::<u8>(), "policy_index"),
            (policy_treated, "policy_treated"),
            (policy_reward.cast::<u8>(), "policy_reward"),
            (control_index.cast::<u8>(), "control_index"),
            (control_reward.cast::<u8>(), "control_reward"),
        ] {
            if p.is_null() {
                return Err(null(name));
            }
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let slice = |p: *const f64| std::slice::from_raw_parts(p, n);
        let treated = std::slice::from_raw_parts(policy_treated, n);
        let rec = |i: usize, arm: Arm, index: f64, week: u32, reward: f64| RctRecord {
            agent_id: i as u64,
            arm,
            index,
            treat_week: week,
            reward_path: vec![reward],
            covariates: vec![],
        };
        let policy = (0..n)
            .map(|i| rec(i, Arm::Policy, slice(policy_index)[i], u32::from(treated[i] != 0), slice(policy_reward)[i]))
            .collect();
        let control = (0..n).map(|i| rec(i, Arm::Control, slice(control_index)[i], 0, slice(control_reward)[i])).collect();
        let data = RctDataset::new(policy, control, alpha, 1, 1, 0).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(PeDataset { inner: data }));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `data` must come from a `pe_dataset_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pe_dataset_free(data: *mut PeDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Agents per arm, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pe_dataset_n(data: *const PeDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.n())
}

/// Reward steps per agent, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pe_dataset_horizon(data: *const PeDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.horizon())
}

fn estimator_kind(e: PeEstimator) -> EstimatorKind {
    match e {
        PeEstimator::Base => EstimatorKind::Base,
        PeEstimator::Subgroup => EstimatorKind::Subgroup,
        PeEstimator::Threshold => EstimatorKind::Threshold,
        PeEstimator::Hybrid => EstimatorKind::Hybrid,
        PeEstimator::MateReshuffle => EstimatorKind::MateReshuffle,
        PeEstimator::RegressionBase => EstimatorKind::RegressionBase,
        PeEstimator::RegressionSubgroup => EstimatorKind::RegressionSubgroup,
    }
}

fn variance_method(v: PeVariance) -> Option<VarianceMethod> {
    Some(match v {
        PeVariance::Default => return None,
        PeVariance::SgSimple => VarianceMethod::SgSimple,
        PeVariance::SgKnn => VarianceMethod::SgKnn,
        PeVariance::BaseKnn => VarianceMethod::BaseKnn,
        PeVariance::Welch => VarianceMethod::Welch,
        PeVariance::OlsClassical => VarianceMethod::OlsClassical,
        PeVariance::OlsHc0 => VarianceMethod::OlsHc0,
        PeVariance::HybKnn => VarianceMethod::HybKnn,
    })
}

fn eval_options(o: &PeOptions) -> EvalOptions {
    let nonzero = |v: usize| (v > 0).then_some(v);
    EvalOptions {
        level: o.level,
        truncate_at: nonzero(o.truncate_at),
        upto_round: nonzero(o.upto_round),
        k: if o.k == 0 { KChoice::Auto } else { KChoice::Fixed(o.k) },
        centering: if o.literal_centering != 0 { Centering::Literal } else { Centering::GroupMean },
        hybrid_weight: if o.hybrid_weight.is_nan() { HybridWeight::Auto } else { HybridWeight::Fixed(o.hybrid_weight) },
        ols_covariance: OlsCovariance::Classical,
    }
}

fn to_c(r: &EstimateReport) -> PeReport {
    let nan = f64::NAN;
    PeReport {
        point: r.point,
        variance: r.variance.unwrap_or(nan),
        ci_low: r.ci_low.unwrap_or(nan),
        ci_high: r.ci_high.unwrap_or(nan),
        p_value: r.p_value.unwrap_or(nan),
        level: r.level,
        hybrid_weight: r.hybrid_weight.unwrap_or(nan),
        k_used: r.k_used.unwrap_or(0),
        n: r.n,
        variance_clamped: u8::from(r.variance_clamped),
    }
}

/// Runs one estimator with its variance and fills `out`. `opts` may be null
/// for defaults.
///
/// # Safety
/// `data` must be a live handle, `opts` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pe_estimate(
    data: *const PeDataset,
    estimator: PeEstimator,
    variance: PeVariance,
    opts: *const PeOptions,
    out: *mut PeReport,
) -> PeStatus {
    guard(|| {
        let data = data.as_ref().ok_or_else(|| null("data"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = opts.as_ref().copied().unwrap_or_else(|| pe_options_default());
        let rep = evaluate(&data.inner, estimator_kind(estimator), variance_method(variance), &eval_options(&opts))
            .map_err(lib_err)?;
        *out = to_c(&rep);
        Ok(())
    })
}

fn from_c(r: &PeReport) -> EstimateReport {
    let opt = |x: f64| (!x.is_nan()).then_some(x);
    EstimateReport {
        estimator: EstimatorKind::Base,
        point: r.point,
        variance: opt(r.variance),
        variance_method: None,
        variance_clamped: r.variance_clamped != 0,
        k_used: None,
        ci_low: opt(r.ci_low),
        ci_high: opt(r.ci_high),
        level: r.level,
        p_value: opt(r.p_value),
        n: r.n,
        alpha: f64::NAN,
        horizon: 0,
        hybrid_weight: opt(r.hybrid_weight),
    }
}

/// Interval for the difference of two independent estimates on equal-size trials.
///
/// # Safety
/// `a`, `b`, `lo` and `hi` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pe_compare(a: *const PeReport, b: *const PeReport, level: f64, lo: *mut f64, hi: *mut f64) -> PeStatus {
    guard(|| {
        let (a, b) = (a.as_ref().ok_or_else(|| null("a"))?, b.as_ref().ok_or_else(|| null("b"))?);
        if lo.is_null() || hi.is_null() {
            return Err(null("lo/hi"));
        }
        let (l, h) = compare_policies(&from_c(a), &from_c(b), level).map_err(lib_err)?;
        *lo = l;
        *hi = h;
        Ok(())
    })
}

/// Standard normal CDF.
#[no_mangle]
pub extern "C" fn pe_normal_cdf(x: f64) -> f64 {
    normal_cdf(x)
}

/// Standard normal quantile for `p` in (0, 1).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pe_normal_quantile(p: f64, out: *mut f64) -> PeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = normal_quantile(p).map_err(lib_err)?;
        Ok(())
    })
}

/// Whittle index of a two-state agent. `probs[4a + 2s + t]` is the
/// probability of moving from `s` to `t` under action `a`.
///
/// # Safety
/// `probs` must point to 8 doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pe_whittle_index(
    probs: *const f64,
    discount: f64,
    eval_state: usize,
    tol: f64,
    out: *mut f64,
) -> PeStatus {
    guard(|| {
        if probs.is_null() || out.is_null() {
            return Err(null("probs/out"));
        }
        let mut v = [0.0; 8];
        v.copy_from_slice(std::slice::from_raw_parts(probs, 8));
        let t = TransitionModel::from_flat(v, 1e-9).map_err(lib_err)?;
        *out = whittle_index_of(&t, &WhittleConfig { discount, eval_state, tol }).map_err(lib_err)?;
        Ok(())
    })
}
