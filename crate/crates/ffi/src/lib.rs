//! C ABI for `pcons`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `_free` function. Every fallible call returns a
//! [`PconsStatus`]; on failure [`pcons_last_error`] describes what happened
//! on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pcons::cli::{parse_problem_str, ProblemFile};
use pcons::dynamics::{Dynamics, IntegrateOptions, KktResidual, Method, SolverState, StopReason};
use pcons::network::{run_decentralized, DecentralizedOptions};
use pcons::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PconsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Numerical = 4,
    Divergence = 5,
    Protocol = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

pub const PCONS_METHOD_EULER: u32 = 0;
pub const PCONS_METHOD_RK4: u32 = 1;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PconsOptions {
    pub h: f64,
    /// `PCONS_METHOD_EULER` or `PCONS_METHOD_RK4`.
    pub method: u32,
    pub t_max: f64,
    pub kkt_tol: f64,
    /// Non-zero runs the message-passing simulation.
    pub decentralized: u8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PconsResiduals {
    pub stationarity: f64,
    pub consensus: f64,
    pub complementarity: f64,
    pub feasibility: f64,
}

/// A parsed problem.
pub struct PconsProblem {
    file: ProblemFile,
}

/// The final state of a solve.
pub struct PconsSolution {
    state: SolverState,
    objective: f64,
    residual: KktResidual,
    converged: bool,
    steps: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PconsStatus {
    match e {
        Error::InvalidInput(_) => PconsStatus::InvalidArgument,
        Error::Parse(_) => PconsStatus::Parse,
        Error::Numerical(_) => PconsStatus::Numerical,
        Error::NonFinite { .. } | Error::Divergence { .. } => PconsStatus::Divergence,
        Error::Protocol(_) => PconsStatus::Protocol,
        Error::Io(_) => PconsStatus::Io,
    }
}

fn fail(status: PconsStatus, msg: impl Into<String>) -> PconsStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> PconsStatus) -> PconsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(PconsStatus::Panic, "internal panic"),
    }
}

fn lift(e: Error) -> PconsStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn pcons_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn pcons_default_options() -> PconsOptions {
    let d = IntegrateOptions::default();
    PconsOptions {
        h: d.h,
        method: PCONS_METHOD_RK4,
        t_max: d.t_max,
        kkt_tol: d.kkt_tol,
        decentralized: 0,
    }
}

/// Parses a JSON problem document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcons_problem_from_json(json: *const c_char, out: *mut *mut PconsProblem) -> PconsStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(PconsStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(_) => return fail(PconsStatus::Parse, "problem text is not UTF-8"),
        };
        match parse_problem_str(text) {
            Ok(file) => {
                *out = Box::into_raw(Box::new(PconsProblem { file }));
                PconsStatus::Ok
            }
            Err(e) => lift(e),
        }
    })
}

/// # Safety
/// `p` must come from [`pcons_problem_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pcons_problem_free(p: *mut PconsProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Length of the stacked decision vector, 0 for a null handle.
///
/// # Safety
/// `p` must be a live problem handle or null.
#[no_mangle]
pub unsafe extern "C" fn pcons_problem_dim(p: *const PconsProblem) -> usize {
    p.as_ref().map_or(0, |p| p.file.instance.dims().total())
}

/// # Safety
/// `p` must be a live problem handle or null.
#[no_mangle]
pub unsafe extern "C" fn pcons_problem_agents(p: *const PconsProblem) -> usize {
    p.as_ref().map_or(0, |p| p.file.instance.agents().len())
}

/// Writes the partial-consensus matrix row-major into `buf` (capacity `len`
/// entries) and its order into `order`. With a too-small buffer only
/// `order` is written and `BufferTooSmall` is returned.
///
/// # Safety
/// `p` must be a live problem handle, `order` valid, `buf` valid for `len`
/// writes (it may be null when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn pcons_problem_consensus_matrix(
    p: *const PconsProblem,
    buf: *mut f64,
    len: usize,
    order: *mut usize,
) -> PconsStatus {
    guard(|| {
        let (Some(p), false) = (p.as_ref(), order.is_null()) else {
            return fail(PconsStatus::NullPointer, "null argument");
        };
        let d = match Dynamics::new(p.file.instance.clone()) {
            Ok(d) => d,
            Err(e) => return lift(e),
        };
        let k = d.consensus_matrix().matrix();
        let m = k.nrows();
        *order = m;
        if len < m * m || buf.is_null() {
            return fail(PconsStatus::BufferTooSmall, format!("need {} entries", m * m));
        }
        let out = std::slice::from_raw_parts_mut(buf, m * m);
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = k[(i, j)];
            }
        }
        PconsStatus::Ok
    })
}

/// Integrates from the problem's own `init` (zeros when absent).
///
/// # Safety
/// `p` must be a live problem handle, `opts` null (defaults) or valid, and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcons_solve(
    p: *const PconsProblem,
    opts: *const PconsOptions,
    out: *mut *mut PconsSolution,
) -> PconsStatus {
    guard(|| {
        let (Some(p), false) = (p.as_ref(), out.is_null()) else {
            return fail(PconsStatus::NullPointer, "null argument");
        };
        *out = ptr::null_mut();
        let o = opts.as_ref().copied().unwrap_or_else(|| pcons_default_options());
        let method = match o.method {
            PCONS_METHOD_EULER => Method::Euler,
            PCONS_METHOD_RK4 => Method::Rk4,
            m => return fail(PconsStatus::InvalidArgument, format!("unknown method code {m}")),
        };
        let io = IntegrateOptions {
            h: o.h,
            method,
            t_max: o.t_max,
            kkt_tol: o.kkt_tol,
            record_every: usize::MAX,
        };
        let run = || -> pcons::Result<PconsSolution> {
            let inst = &p.file.instance;
            let d = Dynamics::new(inst.clone())?;
            let init = match &p.file.init {
                Some(i) => i.to_state(inst.total_constraints()),
                None => d.zero_state(),
            };
            let traj = if o.decentralized != 0 {
                run_decentralized(inst, &init, &io, DecentralizedOptions::default())?.0
            } else {
                d.integrate(&init, &io)?
            };
            let last = traj.final_record();
            Ok(PconsSolution {
                state: last.state.clone(),
                objective: last.objective,
                residual: last.residual,
                converged: traj.stop == StopReason::Converged,
                steps: traj.steps,
            })
        };
        match run() {
            Ok(s) => {
                *out = Box::into_raw(Box::new(s));
                PconsStatus::Ok
            }
            Err(e) => lift(e),
        }
    })
}

/// # Safety
/// `s` must come from [`pcons_solve`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pcons_solution_free(s: *mut PconsSolution) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Copies the final stacked `x` into `buf` (capacity `len`).
///
/// # Safety
/// `s` must be a live solution handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pcons_solution_x(s: *const PconsSolution, buf: *mut f64, len: usize) -> PconsStatus {
    guard(|| {
        let (Some(s), false) = (s.as_ref(), buf.is_null()) else {
            return fail(PconsStatus::NullPointer, "null argument");
        };
        let x = &s.state.x;
        if len < x.len() {
            return fail(PconsStatus::BufferTooSmall, format!("need {} entries", x.len()));
        }
        std::slice::from_raw_parts_mut(buf, x.len()).copy_from_slice(x);
        PconsStatus::Ok
    })
}

/// Objective at the final state; NaN for a null handle.
///
/// # Safety
/// `s` must be a live solution handle or null.
#[no_mangle]
pub unsafe extern "C" fn pcons_solution_objective(s: *const PconsSolution) -> f64 {
    s.as_ref().map_or(f64::NAN, |s| s.objective)
}

/// # Safety
/// `s` must be a live solution handle or null.
#[no_mangle]
pub unsafe extern "C" fn pcons_solution_time(s: *const PconsSolution) -> f64 {
    s.as_ref().map_or(f64::NAN, |s| s.state.t)
}

/// # Safety
/// `s` must be a live solution handle or null.
#[no_mangle]
pub unsafe extern "C" fn pcons_solution_steps(s: *const PconsSolution) -> usize {
    s.as_ref().map_or(0, |s| s.steps)
}

/// 1 if the run met the KKT tolerance, 0 if it hit `t_max`.
///
/// # Safety
/// `s` must be a live solution handle or null.
#[no_mangle]
pub unsafe extern "C" fn pcons_solution_converged(s: *const PconsSolution) -> u8 {
    s.as_ref().map_or(0, |s| s.converged as u8)
}

/// # Safety
/// `s` must be a live solution handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pcons_solution_residuals(s: *const PconsSolution, out: *mut PconsResiduals) -> PconsStatus {
    guard(|| {
        let (Some(s), false) = (s.as_ref(), out.is_null()) else {
            return fail(PconsStatus::NullPointer, "null argument");
        };
        let r = s.residual;
        *out = PconsResiduals {
            stationarity: r.stationarity,
            consensus: r.consensus,
            complementarity: r.complementarity,
            feasibility: r.feasibility,
        };
        PconsStatus::Ok
    })
}
