//! C ABI over `lbrm-core`.
//!
//! Every entry point returns an [`LbrmStatus`]. On failure a human-readable
//! message is kept per thread and can be copied out with
//! [`lbrm_last_error_message`]. Models are opaque [`LbrmModel`] handles owned
//! by the caller and released with [`lbrm_model_free`].
//!
//! Series buffers are row-major `len * dims` arrays of `double`; masks are
//! `len * dims` bytes where nonzero means observed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use lbrm_core::attack::{lbrm_score, AttackConfig, Placement};
use lbrm_core::dtw::dtw_distance_banded;
use lbrm_core::metrics::{auroc, roc_curve, Direction, LabeledScores};
use lbrm_core::models::TrainedImputer;
use lbrm_core::{Error, ImputationOracle, MaskMatrix, TimeSeries};

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbrmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Range = 4,
    Io = 5,
    Parse = 6,
    Divergence = 7,
    Parity = 8,
    Panic = 9,
}

/// Opaque trained imputer.
pub struct LbrmModel {
    inner: TrainedImputer,
}

/// One candidate's losses and ratio.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LbrmScore {
    pub l_t: f64,
    pub l_r: f64,
    pub r: f64,
    /// Nonzero when both losses were below the ratio floor and `r` was set to 1.
    pub degenerate: u8,
}

/// Mask placement and repetition for [`lbrm_score_series`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbrmAttackParams {
    pub block_len: usize,
    pub repeats: usize,
    /// 0 = evenly spread blocks, 1 = random blocks.
    pub random_placement: u8,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_last_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn status_of(err: &Error) -> LbrmStatus {
    match err {
        Error::Argument(_) | Error::Config { .. } | Error::Schema(_) => LbrmStatus::InvalidArgument,
        Error::Shape(_) => LbrmStatus::Shape,
        Error::Range(_) | Error::DegenerateMask(_) => LbrmStatus::Range,
        Error::Io { .. } => LbrmStatus::Io,
        Error::Parse { .. } | Error::Json(_) => LbrmStatus::Parse,
        Error::Divergence { .. } => LbrmStatus::Divergence,
        Error::Parity(_) => LbrmStatus::Parity,
        Error::Oracle { source, .. } => status_of(source),
    }
}

struct Failure(LbrmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LbrmStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> LbrmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            LbrmStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            LbrmStatus::Panic
        }
    }
}

unsafe fn checked_slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

fn element_count(len: usize, dims: usize) -> Result<usize, Failure> {
    len.checked_mul(dims)
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure(LbrmStatus::Shape, format!("invalid shape {len}x{dims}")))
}

unsafe fn series_from(values: *const f64, len: usize, dims: usize) -> Result<TimeSeries, Failure> {
    let n = element_count(len, dims)?;
    let v = checked_slice(values, n, "values")?;
    Ok(TimeSeries::new("ffi", len, dims, v.to_vec())?)
}

unsafe fn model_ref<'a>(m: *const LbrmModel, what: &str) -> Result<&'a LbrmModel, Failure> {
    m.as_ref().ok_or_else(|| null(what))
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `buf_len - 1` bytes). Returns the full message length in
/// bytes, excluding the terminator. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lbrm_last_error_message(buf: *mut c_char, buf_len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && buf_len > 0 {
            let n = msg.len().min(buf_len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Load a model file written by `lbrm train`. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lbrm_model_load(
    path: *const c_char,
    out: *mut *mut LbrmModel,
) -> LbrmStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(LbrmStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = TrainedImputer::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(LbrmModel { inner }));
        Ok(())
    })
}

/// Release a handle from [`lbrm_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lbrm_model_free(model: *mut LbrmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Series length and dimension count the model was trained for.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lbrm_model_shape(
    model: *const LbrmModel,
    len: *mut usize,
    dims: *mut usize,
) -> LbrmStatus {
    guard(|| {
        let m = model_ref(model, "model")?;
        if len.is_null() || dims.is_null() {
            return Err(null("output"));
        }
        let (t, d) = m.inner.shape();
        *len = t;
        *dims = d;
        Ok(())
    })
}

/// Impute the entries whose `observed` byte is zero. Observed entries are
/// copied through unchanged. `out` receives `len * dims` values.
///
/// # Safety
/// Buffers must hold `len * dims` elements; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lbrm_model_impute(
    model: *const LbrmModel,
    values: *const f64,
    observed: *const u8,
    len: usize,
    dims: usize,
    out: *mut f64,
) -> LbrmStatus {
    guard(|| {
        let m = model_ref(model, "model")?;
        let n = element_count(len, dims)?;
        let raw = checked_slice(values, n, "values")?;
        let flags = checked_slice(observed, n, "observed")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mask = MaskMatrix::new(len, dims, flags.iter().map(|&b| b != 0).collect())?;
        // Hidden entries may hold anything (including NaN); the model sees zeros.
        let filled: Vec<f64> = raw
            .iter()
            .zip(flags)
            .map(|(&v, &o)| if o != 0 { v } else { 0.0 })
            .collect();
        let series = TimeSeries::new("ffi", len, dims, filled)?;
        let imputed = ImputationOracle::impute(&m.inner, &series, &mask)?;
        slice::from_raw_parts_mut(out, n).copy_from_slice(imputed.values());
        Ok(())
    })
}

/// DTW distance between two series with the same `dims`. `band` < 0 means
/// no band; otherwise a Sakoe-Chiba radius (widened to the length difference).
///
/// # Safety
/// `a` holds `a_len * dims` values, `b` holds `b_len * dims`, `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn lbrm_dtw_distance(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    dims: usize,
    band: i64,
    out: *mut f64,
) -> LbrmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let x = series_from(a, a_len, dims)?;
        let y = series_from(b, b_len, dims)?;
        let band = usize::try_from(band).ok();
        *out = dtw_distance_banded(&x, &y, band)?.value();
        Ok(())
    })
}

/// Score one candidate series against a target and a reference model.
///
/// # Safety
/// `values` holds `len * dims` elements; handles and `params`/`out` are valid.
#[no_mangle]
pub unsafe extern "C" fn lbrm_score_series(
    target: *const LbrmModel,
    reference: *const LbrmModel,
    values: *const f64,
    len: usize,
    dims: usize,
    params: *const LbrmAttackParams,
    out: *mut LbrmScore,
) -> LbrmStatus {
    guard(|| {
        let t = model_ref(target, "target")?;
        let r = model_ref(reference, "reference")?;
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = series_from(values, len, dims)?;
        let cfg = AttackConfig {
            block_len: p.block_len,
            repeats: p.repeats,
            placement: if p.random_placement != 0 {
                Placement::Random
            } else {
                Placement::Even
            },
            seed: p.seed,
            ..AttackConfig::default()
        };
        let s = lbrm_score(&t.inner, &r.inner, &x, &cfg)?;
        *out = LbrmScore {
            l_t: s.l_t,
            l_r: s.l_r,
            r: s.r,
            degenerate: s.degenerate as u8,
        };
        Ok(())
    })
}

/// Area under the ROC curve of `n` scores with member flags (nonzero = member).
/// `lower_is_member` selects the score direction (nonzero for LBRM ratios).
///
/// # Safety
/// `scores` and `members` hold `n` elements; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn lbrm_auroc(
    scores: *const f64,
    members: *const u8,
    n: usize,
    lower_is_member: u8,
    out: *mut f64,
) -> LbrmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = checked_slice(scores, n, "scores")?;
        let m = checked_slice(members, n, "members")?;
        let direction = if lower_is_member != 0 {
            Direction::LowerIsMember
        } else {
            Direction::HigherIsMember
        };
        let pairs = s.iter().copied().zip(m.iter().map(|&b| b != 0)).collect();
        let data = LabeledScores::with_direction(pairs, direction)?;
        *out = auroc(&roc_curve(&data)?);
        Ok(())
    })
}
