//! C ABI over the cell-problem solver.
//!
//! Handles are opaque and owned by the caller; release them with the matching
//! `*_free`. Every fallible call returns an [`MfgStatus`]; on failure the message
//! is kept per thread and read back with [`mfg_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mfg_homog::cell::{finite_noise_h, solve_cell, CellQuery, CellSolution, Tolerances};
use mfg_homog::grid::PeriodicGrid;
use mfg_homog::potential::{PotentialKind, PotentialSpec};
use mfg_homog::sensitivity::{solve_sensitivity_P, solve_sensitivity_alpha};
use mfg_homog::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Unsupported = 3,
    NoConvergence = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A validated potential.
pub struct MfgPotential {
    spec: PotentialSpec,
}

/// A solved cell problem together with the query that produced it.
pub struct MfgCellSolution {
    query: CellQuery,
    solution: CellSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> MfgStatus {
    match e.root() {
        Error::InvalidInput(_) | Error::Config(_) => MfgStatus::InvalidInput,
        Error::UnsupportedPotential(_) | Error::UnsupportedRegime(_) => MfgStatus::Unsupported,
        r if r.is_convergence_failure() => MfgStatus::NoConvergence,
        _ => MfgStatus::Numerical,
    }
}

fn fail(status: MfgStatus, msg: impl Into<String>) -> MfgStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), MfgStatus>) -> MfgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MfgStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(MfgStatus::Panic, "internal panic"),
    }
}

fn lib<T>(r: mfg_homog::Result<T>) -> Result<T, MfgStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), MfgStatus> {
    if p.is_null() {
        Err(fail(MfgStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], MfgStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, MfgStatus> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MfgStatus::InvalidInput, format!("{what} is not UTF-8")))
}

unsafe fn give<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Copies `src` into `dst[..cap]`; `*len_out` always receives the full length.
unsafe fn copy_out(src: &[f64], dst: *mut f64, cap: usize, len_out: *mut usize) -> Result<(), MfgStatus> {
    if !len_out.is_null() {
        *len_out = src.len();
    }
    if cap < src.len() {
        return Err(fail(
            MfgStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", src.len()),
        ));
    }
    non_null(dst, "output buffer")?;
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mfg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the untruncated length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mfg_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds one of the named presets: `zero`, `separable-default`,
/// `y-independent`, `linear-default`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfg_potential_preset(name: *const c_char, out: *mut *mut MfgPotential) -> MfgStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec = lib(PotentialSpec::preset(text(name, "name")?))?;
        give(out, MfgPotential { spec });
        Ok(())
    })
}

/// Builds a potential from its JSON description, e.g.
/// `{"kind":"y-independent","g":{"shape":"arctan","amplitude":1,"rate":1}}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfg_potential_from_json(json: *const c_char, out: *mut *mut MfgPotential) -> MfgStatus {
    guard(|| {
        non_null(out, "out")?;
        let kind: PotentialKind = serde_json::from_str(text(json, "json")?)
            .map_err(|e| fail(MfgStatus::InvalidInput, format!("potential: {e}")))?;
        let spec = lib(PotentialSpec::new(kind))?;
        give(out, MfgPotential { spec });
        Ok(())
    })
}

/// # Safety
/// `pot` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfg_potential_free(pot: *mut MfgPotential) {
    if !pot.is_null() {
        drop(Box::from_raw(pot));
    }
}

/// Solves the cell problem at `(p, alpha)` on a `dim`-dimensional grid with
/// `n` points per axis. Tolerances of zero select the defaults.
///
/// # Safety
/// `pot` must be a live handle, `p` must point to `dim` values, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfg_cell_solve(
    pot: *const MfgPotential,
    dim: usize,
    n: usize,
    p: *const f64,
    alpha: f64,
    newton_tol: f64,
    fixedpoint_tol: f64,
    out: *mut *mut MfgCellSolution,
) -> MfgStatus {
    guard(|| {
        non_null(pot, "potential")?;
        non_null(out, "out")?;
        let grid = lib(PeriodicGrid::new(dim, n))?;
        let p = slice(p, dim, "p")?.to_vec();
        let mut query = CellQuery::new(grid, (*pot).spec.clone(), p, alpha);
        let defaults = Tolerances::default();
        query.tolerances = Tolerances {
            newton_tol: if newton_tol > 0.0 { newton_tol } else { defaults.newton_tol },
            fixedpoint_tol: if fixedpoint_tol > 0.0 { fixedpoint_tol } else { defaults.fixedpoint_tol },
        };
        let solution = lib(solve_cell(&query))?;
        give(out, MfgCellSolution { query, solution });
        Ok(())
    })
}

/// # Safety
/// `sol` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfg_cell_free(sol: *mut MfgCellSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Effective Hamiltonian. Returns NaN for a null handle.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_cell_h_bar(sol: *const MfgCellSolution) -> f64 {
    if sol.is_null() {
        return f64::NAN;
    }
    (*sol).solution.h_bar
}

/// Number of grid points, the length of the `u` and `m` buffers.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_cell_grid_points(sol: *const MfgCellSolution) -> usize {
    if sol.is_null() {
        return 0;
    }
    (*sol).query.grid.total_points()
}

/// Effective drift, `dim` values.
///
/// # Safety
/// `sol` must be a live handle; `buf` must hold `cap` doubles; `len_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn mfg_cell_b_bar(
    sol: *const MfgCellSolution,
    buf: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> MfgStatus {
    guard(|| {
        non_null(sol, "solution")?;
        copy_out(&(*sol).solution.b_bar, buf, cap, len_out)
    })
}

/// Corrector `u` on the grid (index `i + N j`).
///
/// # Safety
/// As for [`mfg_cell_b_bar`].
#[no_mangle]
pub unsafe extern "C" fn mfg_cell_u(sol: *const MfgCellSolution, buf: *mut f64, cap: usize, len_out: *mut usize) -> MfgStatus {
    guard(|| {
        non_null(sol, "solution")?;
        copy_out((*sol).solution.u.values(), buf, cap, len_out)
    })
}

/// Invariant density `m` on the grid (index `i + N j`).
///
/// # Safety
/// As for [`mfg_cell_b_bar`].
#[no_mangle]
pub unsafe extern "C" fn mfg_cell_m(sol: *const MfgCellSolution, buf: *mut f64, cap: usize, len_out: *mut usize) -> MfgStatus {
    guard(|| {
        non_null(sol, "solution")?;
        copy_out((*sol).solution.m.values(), buf, cap, len_out)
    })
}

/// Gradient of the effective Hamiltonian in `P`, `dim` values.
///
/// # Safety
/// As for [`mfg_cell_b_bar`].
#[no_mangle]
pub unsafe extern "C" fn mfg_cell_dh_dp(
    sol: *const MfgCellSolution,
    buf: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> MfgStatus {
    guard(|| {
        non_null(sol, "solution")?;
        let s = &*sol;
        let grad = (0..s.query.grid.dim())
            .map(|i| lib(solve_sensitivity_P(&s.solution, &s.query, i)).map(|d| d.constant))
            .collect::<Result<Vec<_>, _>>()?;
        copy_out(&grad, buf, cap, len_out)
    })
}

/// Derivative of the effective Hamiltonian in `alpha` (requires `alpha > 0`).
///
/// # Safety
/// `sol` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfg_cell_dh_dalpha(sol: *const MfgCellSolution, out: *mut f64) -> MfgStatus {
    guard(|| {
        non_null(sol, "solution")?;
        non_null(out, "out")?;
        let s = &*sol;
        *out = lib(solve_sensitivity_alpha(&s.solution, &s.query))?.constant;
        Ok(())
    })
}

/// Finite-noise effective Hamiltonian for a constant symmetric Hessian `x`
/// (row-major, `dim * dim`), the potential averaged on an `n`-point grid.
///
/// # Safety
/// `pot` must be a live handle, `x` must hold `dim * dim` values, `p` `dim`
/// values, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfg_finite_noise_h(
    pot: *const MfgPotential,
    dim: usize,
    n: usize,
    x: *const f64,
    p: *const f64,
    alpha: f64,
    out: *mut f64,
) -> MfgStatus {
    guard(|| {
        non_null(pot, "potential")?;
        non_null(out, "out")?;
        let grid = lib(PeriodicGrid::new(dim, n))?;
        let rows: Vec<Vec<f64>> = slice(x, dim * dim, "x")?.chunks(dim).map(<[f64]>::to_vec).collect();
        let p = slice(p, dim, "p")?;
        *out = lib(finite_noise_h(&rows, p, alpha, &(*pot).spec, &grid))?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::InvalidInput("x".into())), MfgStatus::InvalidInput);
        assert_eq!(status_of(&Error::SignViolation(1.0)), MfgStatus::NoConvergence);
        assert_eq!(status_of(&Error::UnsupportedPotential("x".into())), MfgStatus::Unsupported);
        let wrapped = Error::InvalidInput("x".into()).at_point(&[1.0], 1.0);
        assert_eq!(status_of(&wrapped), MfgStatus::InvalidInput);
    }

    #[test]
    fn short_buffer_reports_length() {
        let mut len = 0;
        let mut buf = [0.0; 1];
        let s = guard(|| unsafe { copy_out(&[1.0, 2.0], buf.as_mut_ptr(), 1, &mut len) });
        assert_eq!(s, MfgStatus::BufferTooSmall);
        assert_eq!(len, 2);
    }
}
