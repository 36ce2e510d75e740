//! C interface to `dinf`.
//!
//! Objects are opaque handles created by `*_load`/`*_new` and released with
//! the matching `*_free`. Every fallible call returns a [`DinfStatus`]; on
//! failure [`dinf_last_error_message`] describes the error for the calling
//! thread. Output arrays are caller-allocated and their capacity is passed
//! alongside.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dinf::artifact::{load, Container};
use dinf::curvature::CurvatureState;
use dinf::diffusion::{make_schedule, NoiseSchedule};
use dinf::influence::ScoreMatrix;
use dinf::nn::EpsilonNet;
use dinf::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DinfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Artifact = 5,
    Provenance = 6,
    Config = 7,
    Numeric = 8,
    Panic = 9,
}

pub struct DinfNet {
    net: EpsilonNet,
}

pub struct DinfSchedule {
    schedule: NoiseSchedule,
}

pub struct DinfCurvature {
    state: CurvatureState,
}

pub struct DinfScores {
    scores: ScoreMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DinfStatus {
    match e {
        Error::Io(_) => DinfStatus::Io,
        Error::Artifact(_) | Error::Json(_) => DinfStatus::Artifact,
        Error::Provenance(_) => DinfStatus::Provenance,
        Error::Config(_) | Error::ConfigViolations(_) | Error::Shape(_) | Error::Index(_) => DinfStatus::Config,
        _ => DinfStatus::Numeric,
    }
}

fn fail(status: DinfStatus, msg: &str) -> DinfStatus {
    set_error(msg);
    status
}

/// Run `f`, mapping errors and panics to a status.
fn guard(f: impl FnOnce() -> Result<(), DinfStatus>) -> DinfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DinfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DinfStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: dinf::Result<T>) -> Result<T, DinfStatus> {
    r.map_err(|e| fail(status_of(&e), &e.to_string()))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, DinfStatus> {
    if p.is_null() {
        return Err(fail(DinfStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| fail(DinfStatus::InvalidArgument, "path is not UTF-8"))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize) -> Result<&'a [f64], DinfStatus> {
    if p.is_null() {
        if len == 0 {
            return Ok(&[]);
        }
        return Err(fail(DinfStatus::NullPointer, "input array is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(out: *mut f64, cap: usize, vals: &[f64]) -> Result<(), DinfStatus> {
    if out.is_null() {
        return Err(fail(DinfStatus::NullPointer, "output array is null"));
    }
    if cap < vals.len() {
        return Err(fail(DinfStatus::BufferTooSmall, &format!("output needs {} values, capacity is {cap}", vals.len())));
    }
    std::ptr::copy_nonoverlapping(vals.as_ptr(), out, vals.len());
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, DinfStatus> {
    p.as_ref().ok_or_else(|| fail(DinfStatus::NullPointer, "handle is null"))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), DinfStatus> {
    if out.is_null() {
        return Err(fail(DinfStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dinf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dinf_net_load(path: *const c_char, out: *mut *mut DinfNet) -> DinfStatus {
    guard(|| {
        let (net, _) = lift(load::<EpsilonNet>(&path_arg(path)?))?;
        put(out, DinfNet { net })
    })
}

/// # Safety
/// `net` must come from [`dinf_net_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dinf_net_free(net: *mut DinfNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dinf_net_param_count(net: *const DinfNet, out: *mut usize) -> DinfStatus {
    guard(|| {
        let n = handle(net)?;
        *out.as_mut().ok_or_else(|| fail(DinfStatus::NullPointer, "out is null"))? = n.net.param_count();
        Ok(())
    })
}

/// # Safety
/// See [`dinf_net_param_count`].
#[no_mangle]
pub unsafe extern "C" fn dinf_net_data_dim(net: *const DinfNet, out: *mut usize) -> DinfStatus {
    guard(|| {
        let n = handle(net)?;
        *out.as_mut().ok_or_else(|| fail(DinfStatus::NullPointer, "out is null"))? = n.net.data_dim();
        Ok(())
    })
}

/// Noise prediction `ε_θ(x_t, t)` written to `out` (`data_dim` values).
///
/// # Safety
/// `x` holds `len` values; `out` holds `cap` values.
#[no_mangle]
pub unsafe extern "C" fn dinf_net_forward(net: *const DinfNet, x: *const f64, len: usize, t: usize, out: *mut f64, cap: usize) -> DinfStatus {
    guard(|| {
        let n = handle(net)?;
        let x = slice_arg(x, len)?;
        let fp = lift(n.net.forward_pass(x, t))?;
        write_out(out, cap, &fp.output)
    })
}

/// Linear `β` schedule with `steps` steps.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dinf_schedule_new(steps: usize, beta_min: f64, beta_max: f64, out: *mut *mut DinfSchedule) -> DinfStatus {
    guard(|| {
        let schedule = lift(make_schedule(steps, beta_min, beta_max))?;
        put(out, DinfSchedule { schedule })
    })
}

/// # Safety
/// `s` must come from [`dinf_schedule_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dinf_schedule_free(s: *mut DinfSchedule) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// `ᾱ_t`, `t` in `1..=steps`.
///
/// # Safety
/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dinf_schedule_alpha_bar(s: *const DinfSchedule, t: usize, out: *mut f64) -> DinfStatus {
    guard(|| {
        let s = &handle(s)?.schedule;
        if !(1..=s.steps).contains(&t) {
            return Err(fail(DinfStatus::InvalidArgument, &format!("t = {t} outside 1..={}", s.steps)));
        }
        *out.as_mut().ok_or_else(|| fail(DinfStatus::NullPointer, "out is null"))? = s.alpha_bar(t);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dinf_curvature_load(path: *const c_char, out: *mut *mut DinfCurvature) -> DinfStatus {
    guard(|| {
        let (state, _) = lift(load::<CurvatureState>(&path_arg(path)?))?;
        put(out, DinfCurvature { state })
    })
}

/// # Safety
/// `c` must come from [`dinf_curvature_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dinf_curvature_free(c: *mut DinfCurvature) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// `(H + damping·I)⁻¹ v` in parameter space.
///
/// # Safety
/// `v` holds `len` values; `out` holds `cap` values.
#[no_mangle]
pub unsafe extern "C" fn dinf_curvature_precondition(c: *const DinfCurvature, damping: f64, v: *const f64, len: usize, out: *mut f64, cap: usize) -> DinfStatus {
    guard(|| {
        let c = handle(c)?;
        let r = lift(c.state.precondition(damping, slice_arg(v, len)?))?;
        write_out(out, cap, &r)
    })
}

/// Tie-aware Spearman correlation of two length-`n` arrays.
///
/// # Safety
/// `xs` and `ys` hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dinf_spearman(xs: *const f64, ys: *const f64, n: usize, out: *mut f64) -> DinfStatus {
    guard(|| {
        let r = lift(dinf::eval::spearman(slice_arg(xs, n)?, slice_arg(ys, n)?))?;
        *out.as_mut().ok_or_else(|| fail(DinfStatus::NullPointer, "out is null"))? = r;
        Ok(())
    })
}

/// Check the container structure and checksum of a file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dinf_artifact_verify(path: *const c_char) -> DinfStatus {
    guard(|| lift(Container::read(&path_arg(path)?)).map(|_| ()))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dinf_scores_load(path: *const c_char, out: *mut *mut DinfScores) -> DinfStatus {
    guard(|| {
        let (scores, _) = lift(load::<ScoreMatrix>(&path_arg(path)?))?;
        put(out, DinfScores { scores })
    })
}

/// # Safety
/// `s` must come from [`dinf_scores_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dinf_scores_free(s: *mut DinfScores) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of queries and training examples.
///
/// # Safety
/// `s` must be a live handle; `queries` and `train` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dinf_scores_shape(s: *const DinfScores, queries: *mut usize, train: *mut usize) -> DinfStatus {
    guard(|| {
        let s = &handle(s)?.scores;
        if queries.is_null() || train.is_null() {
            return Err(fail(DinfStatus::NullPointer, "shape outputs are null"));
        }
        *queries = s.query_ids.len();
        *train = s.train_ids.len();
        Ok(())
    })
}

/// Row-major copy of the score grid.
///
/// # Safety
/// `out` holds `cap` values.
#[no_mangle]
pub unsafe extern "C" fn dinf_scores_copy(s: *const DinfScores, out: *mut f64, cap: usize) -> DinfStatus {
    guard(|| {
        let s = &handle(s)?.scores;
        write_out(out, cap, &s.scores.concat())
    })
}
