//! C ABI for the convex WGAN solvers.
//!
//! Matrices cross the boundary as opaque `CwMatrix` handles built from
//! row-major buffers. Every fallible call returns a `CwStatus`; the message
//! of the most recent failure on the calling thread is available through
//! `cw_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use convex_wgan::duality::{check_feasible, dual_gap_linear, dual_gap_quadratic, dual_gap_relu, ActivationKind, DualConstraint};
use convex_wgan::solvers::{closed_form_linear_weights, solve_1d_relu_program, svt_generator, OrthogonalChoice, Regularizer};
use convex_wgan::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwStatus {
    Ok = 0,
    InvalidInput = 1,
    DimensionMismatch = 2,
    RankDeficient = 3,
    Infeasible = 4,
    RecoveryFailed = 5,
    IncompleteArrangements = 6,
    Diverged = 7,
    NonStationary = 8,
    Io = 9,
    NullPointer = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwActivation {
    Linear = 0,
    Quadratic = 1,
    Relu = 2,
}

impl From<CwActivation> for ActivationKind {
    fn from(a: CwActivation) -> Self {
        match a {
            CwActivation::Linear => ActivationKind::Linear,
            CwActivation::Quadratic => ActivationKind::Quadratic,
            CwActivation::Relu => ActivationKind::ReLU,
        }
    }
}

/// Opaque dense matrix of doubles.
pub struct CwMatrix {
    inner: DMatrix<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CwStatus {
    match err.root() {
        Error::InvalidInput(_) => CwStatus::InvalidInput,
        Error::DimensionMismatch { .. } => CwStatus::DimensionMismatch,
        Error::RankDeficient { .. } => CwStatus::RankDeficient,
        Error::Infeasible(_) => CwStatus::Infeasible,
        Error::RecoveryFailed { .. } => CwStatus::RecoveryFailed,
        Error::IncompleteArrangements => CwStatus::IncompleteArrangements,
        Error::Diverged { .. } => CwStatus::Diverged,
        Error::NonStationary { .. } => CwStatus::NonStationary,
        Error::Io(_) | Error::Stage { .. } => CwStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), CwStatus>) -> CwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CwStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            CwStatus::Panic
        }
    }
}

fn lift<T>(r: convex_wgan::Result<T>) -> Result<T, CwStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null_error(what: &str) -> CwStatus {
    set_error(format!("null pointer: {what}"));
    CwStatus::NullPointer
}

unsafe fn matrix<'a>(m: *const CwMatrix, what: &str) -> Result<&'a DMatrix<f64>, CwStatus> {
    // SAFETY: the caller guarantees `m` is null or a live handle from this library.
    unsafe { m.as_ref() }.map(|m| &m.inner).ok_or_else(|| null_error(what))
}

unsafe fn emit(out: *mut *mut CwMatrix, m: DMatrix<f64>) -> Result<(), CwStatus> {
    if out.is_null() {
        return Err(null_error("output handle"));
    }
    // SAFETY: `out` is non-null and points to writable storage per the contract.
    unsafe { *out = Box::into_raw(Box::new(CwMatrix { inner: m })) };
    Ok(())
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a matrix from `rows × cols` row-major values.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn cw_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut CwMatrix) -> CwStatus {
    guard(|| {
        if data.is_null() && rows * cols > 0 {
            return Err(null_error("data"));
        }
        let values = if rows * cols == 0 {
            &[][..]
        } else {
            // SAFETY: non-null and sized per the contract.
            unsafe { std::slice::from_raw_parts(data, rows * cols) }
        };
        unsafe { emit(out, DMatrix::from_row_slice(rows, cols, values)) }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cw_matrix_free(m: *mut CwMatrix) {
    if !m.is_null() {
        // SAFETY: ownership returns to Rust exactly once per the contract.
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Row count, or 0 for null.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cw_matrix_rows(m: *const CwMatrix) -> usize {
    unsafe { m.as_ref() }.map_or(0, |m| m.inner.nrows())
}

/// Column count, or 0 for null.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cw_matrix_cols(m: *const CwMatrix) -> usize {
    unsafe { m.as_ref() }.map_or(0, |m| m.inner.ncols())
}

/// Copies the entries in row-major order into `buf` of length `len`.
///
/// # Safety
/// `m` must be a live handle and `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cw_matrix_copy(m: *const CwMatrix, buf: *mut f64, len: usize) -> CwStatus {
    guard(|| {
        let a = unsafe { matrix(m, "matrix") }?;
        if len != a.len() {
            set_error(format!("buffer holds {len} values, matrix has {}", a.len()));
            return Err(CwStatus::DimensionMismatch);
        }
        if buf.is_null() && len > 0 {
            return Err(null_error("buffer"));
        }
        for (k, v) in a.transpose().iter().enumerate() {
            // SAFETY: `k < len` and `buf` is writable for `len` values.
            unsafe { *buf.add(k) = *v };
        }
        Ok(())
    })
}

/// Thresholded generator `G*` for a quadratic discriminator, with identity
/// orientation.
///
/// # Safety
/// `x` must be a live handle and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn cw_svt_generator(x: *const CwMatrix, beta_d: f64, out: *mut *mut CwMatrix) -> CwStatus {
    guard(|| {
        let x = unsafe { matrix(x, "x") }?;
        let g = lift(svt_generator(x, beta_d, &OrthogonalChoice::Identity))?;
        unsafe { emit(out, g) }
    })
}

/// Closed-form linear-generator weights `W` with `(ZW)ᵀ(ZW) = V(Σ² − βI)_+Vᵀ`.
///
/// # Safety
/// `z`, `x` must be live handles and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn cw_closed_form_weights(z: *const CwMatrix, x: *const CwMatrix, beta_d: f64, out: *mut *mut CwMatrix) -> CwStatus {
    guard(|| {
        let z = unsafe { matrix(z, "z") }?;
        let x = unsafe { matrix(x, "x") }?;
        let w = lift(closed_form_linear_weights(z, x, beta_d))?;
        unsafe { emit(out, w) }
    })
}

/// Dual gap between real `x` and generated `g`. ReLU gaps are sampled
/// over `samples` seeded directions.
///
/// # Safety
/// `x`, `g` must be live handles and `gap` writable.
#[no_mangle]
pub unsafe extern "C" fn cw_dual_gap(
    x: *const CwMatrix,
    g: *const CwMatrix,
    activation: CwActivation,
    samples: usize,
    seed: u64,
    gap: *mut f64,
) -> CwStatus {
    guard(|| {
        let x = unsafe { matrix(x, "x") }?;
        let g = unsafe { matrix(g, "g") }?;
        if gap.is_null() {
            return Err(null_error("gap"));
        }
        let report = lift(match activation {
            CwActivation::Linear => dual_gap_linear(x, g),
            CwActivation::Quadratic => dual_gap_quadratic(x, g),
            CwActivation::Relu => dual_gap_relu(x, g, samples, seed),
        })?;
        unsafe { *gap = report.gap_value };
        Ok(())
    })
}

/// Feasibility of `g` against `x` at bound `beta_d`. Writes 1 or 0 into
/// `feasible` and the evaluated gap into `gap`.
///
/// # Safety
/// `x`, `g` must be live handles; `feasible` and `gap` writable.
#[no_mangle]
pub unsafe extern "C" fn cw_check_feasible(
    x: *const CwMatrix,
    g: *const CwMatrix,
    activation: CwActivation,
    beta_d: f64,
    samples: usize,
    seed: u64,
    feasible: *mut i32,
    gap: *mut f64,
) -> CwStatus {
    guard(|| {
        let x = unsafe { matrix(x, "x") }?;
        let g = unsafe { matrix(g, "g") }?;
        if feasible.is_null() || gap.is_null() {
            return Err(null_error("outputs"));
        }
        let mut c = DualConstraint::new(activation.into(), beta_d);
        c.relu_samples = samples;
        c.seed = seed;
        let r = lift(check_feasible(x, g, &c))?;
        unsafe {
            *feasible = r.feasible as i32;
            *gap = r.gap_value;
        }
        Ok(())
    })
}

/// Solves the one-dimensional ReLU program with `reg_weight·‖w‖²`.
/// `w_out[i]` is paired with the `i`-th smallest sample.
///
/// # Safety
/// `x` must hold `n` readable doubles, `w_out` `n` writable doubles and
/// `objective` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cw_solve_1d(
    x: *const f64,
    n: usize,
    beta_d: f64,
    reg_weight: f64,
    w_out: *mut f64,
    objective: *mut f64,
) -> CwStatus {
    guard(|| {
        if x.is_null() || w_out.is_null() || objective.is_null() {
            return Err(null_error("arguments"));
        }
        // SAFETY: sized per the contract.
        let xs = unsafe { std::slice::from_raw_parts(x, n) };
        let sol = lift(solve_1d_relu_program(xs, beta_d, &Regularizer::squared_frobenius(reg_weight), 1e-9))?;
        if sol.w.len() != n {
            set_error(format!("solution has {} entries for {n} samples", sol.w.len()));
            return Err(CwStatus::DimensionMismatch);
        }
        for (k, v) in sol.w.iter().enumerate() {
            unsafe { *w_out.add(k) = *v };
        }
        unsafe { *objective = sol.solution.objective };
        Ok(())
    })
}
