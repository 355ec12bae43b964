//! C interface to the relearn library.
//!
//! Matrices cross the boundary as row-major `double` arrays. Every call
//! returns a [`RelearnStatus`]; on failure the message is available from
//! [`relearn_last_error`] on the same thread. Experiments and trajectories are
//! opaque handles owned by the caller and released with their `_free`
//! functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use relearn::cli::{run_experiment, RunOutcome};
use relearn::config::{bundled, Experiment, ExperimentConfig};
use relearn::linalg::DenseMatrix;
use relearn::lqr::{dare_solve, lqr_cost, lqr_gradient, CostSpec, Gain, Theta};
use relearn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelearnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    NotStabilizing = 4,
    Numerical = 5,
    Config = 6,
    Divergence = 7,
    Panic = 8,
}

/// Per-step series of a trajectory.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelearnSeries {
    JErr = 0,
    ThetaErr = 1,
    RhoTrue = 2,
    RhoEst = 3,
    GradNorm = 4,
    JStar = 5,
}

/// A realized experiment configuration.
pub struct RelearnExperiment {
    inner: Experiment,
}

/// The result of a closed-loop run.
pub struct RelearnTrajectory {
    outcome: RunOutcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RelearnStatus {
    match e {
        Error::Dimension(_) | Error::NotSquare { .. } => RelearnStatus::Dimension,
        Error::Stability { .. } | Error::NotSchur { .. } => RelearnStatus::NotStabilizing,
        Error::InvalidArgument(_) | Error::NonFinite(_) => RelearnStatus::InvalidArgument,
        Error::Config(_) | Error::Io(_) | Error::Construction(_) => RelearnStatus::Config,
        Error::Divergence { .. } => RelearnStatus::Divergence,
        _ => RelearnStatus::Numerical,
    }
}

fn fail(e: Error) -> RelearnStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn guard<F: FnOnce() -> RelearnStatus>(f: F) -> RelearnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic".into());
            RelearnStatus::Panic
        }
    }
}

macro_rules! nonnull {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            set_error(format!("null pointer: {}", stringify!($p)));
            return RelearnStatus::NullPointer;
        })+
    };
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn relearn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn relearn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

unsafe fn read_matrix(p: *const f64, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_row_slice(rows, cols, std::slice::from_raw_parts(p, rows * cols))
}

unsafe fn write_matrix(m: &DenseMatrix, out: *mut f64) {
    let dst = std::slice::from_raw_parts_mut(out, m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            dst[i * m.ncols() + j] = m[(i, j)];
        }
    }
}

unsafe fn problem(
    n: usize,
    m: usize,
    a: *const f64,
    b: *const f64,
    q: *const f64,
    r: *const f64,
) -> relearn::Result<(Theta, CostSpec)> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("n and m must be positive".into()));
    }
    let theta = Theta::from_ab(&read_matrix(a, n, n), &read_matrix(b, n, m))?;
    let cost = CostSpec::new(read_matrix(q, n, n), read_matrix(r, m, m))?;
    Ok((theta, cost))
}

/// Stabilizing Riccati solution: writes `P` (n×n) and `K` (m×n).
///
/// # Safety
/// `a`, `b`, `q`, `r` must point to n·n, n·m, n·n, m·m readable doubles;
/// `p_out` and `k_out` to n·n and m·n writable doubles.
#[no_mangle]
pub unsafe extern "C" fn relearn_dare(
    n: usize,
    m: usize,
    a: *const f64,
    b: *const f64,
    q: *const f64,
    r: *const f64,
    p_out: *mut f64,
    k_out: *mut f64,
) -> RelearnStatus {
    nonnull!(a, b, q, r, p_out, k_out);
    guard(|| match problem(n, m, a, b, q, r).and_then(|(t, c)| dare_solve(&t, &c)) {
        Ok((p, k)) => {
            write_matrix(&p, p_out);
            write_matrix(&k.0, k_out);
            RelearnStatus::Ok
        }
        Err(e) => fail(e),
    })
}

/// `J(K) = ½ Tr P` of the gain `k` (m×n).
///
/// # Safety
/// As for [`relearn_dare`]; `k` points to m·n doubles and `out` to one.
#[no_mangle]
pub unsafe extern "C" fn relearn_lqr_cost(
    n: usize,
    m: usize,
    a: *const f64,
    b: *const f64,
    q: *const f64,
    r: *const f64,
    k: *const f64,
    out: *mut f64,
) -> RelearnStatus {
    nonnull!(a, b, q, r, k, out);
    guard(|| {
        let res = problem(n, m, a, b, q, r)
            .and_then(|(t, c)| lqr_cost(&Gain(read_matrix(k, m, n)), &t, &c));
        match res {
            Ok(j) => {
                *out = j;
                RelearnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Policy gradient `∂J/∂K` (m×n).
///
/// # Safety
/// As for [`relearn_lqr_cost`]; `g_out` points to m·n writable doubles.
#[no_mangle]
pub unsafe extern "C" fn relearn_lqr_gradient(
    n: usize,
    m: usize,
    a: *const f64,
    b: *const f64,
    q: *const f64,
    r: *const f64,
    k: *const f64,
    g_out: *mut f64,
) -> RelearnStatus {
    nonnull!(a, b, q, r, k, g_out);
    guard(|| {
        let res = problem(n, m, a, b, q, r)
            .and_then(|(t, c)| lqr_gradient(&Gain(read_matrix(k, m, n)), &t, &c));
        match res {
            Ok(g) => {
                write_matrix(&g, g_out);
                RelearnStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

fn realize(text: &str, horizon: Option<usize>) -> relearn::Result<Experiment> {
    let mut cfg = ExperimentConfig::from_toml(text)?;
    if let Some(h) = horizon {
        cfg.algo.horizon = h;
    }
    cfg.realize()
}

unsafe fn store_experiment(res: relearn::Result<Experiment>, out: *mut *mut RelearnExperiment) -> RelearnStatus {
    match res {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(RelearnExperiment { inner }));
            RelearnStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Parses and realizes a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn relearn_experiment_from_toml(
    toml: *const c_char,
    out: *mut *mut RelearnExperiment,
) -> RelearnStatus {
    nonnull!(toml, out);
    guard(|| {
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(toml).to_str() else {
            set_error("configuration is not UTF-8".into());
            return RelearnStatus::InvalidArgument;
        };
        store_experiment(realize(text, None), out)
    })
}

/// A bundled configuration (`aircraft_static`, `aircraft_drifting`) with its
/// horizon replaced by `horizon`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn relearn_experiment_bundled(
    name: *const c_char,
    horizon: usize,
    out: *mut *mut RelearnExperiment,
) -> RelearnStatus {
    nonnull!(name, out);
    guard(|| {
        *out = ptr::null_mut();
        let text = CStr::from_ptr(name).to_str().ok().and_then(bundled);
        match text {
            Some(t) => store_experiment(realize(t, Some(horizon)), out),
            None => {
                set_error("unknown bundled configuration".into());
                RelearnStatus::Config
            }
        }
    })
}

/// State and input dimensions.
///
/// # Safety
/// `exp` must come from this library; `n` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relearn_experiment_dims(
    exp: *const RelearnExperiment,
    n: *mut usize,
    m: *mut usize,
) -> RelearnStatus {
    nonnull!(exp, n, m);
    let e = &(*exp).inner;
    *n = e.theta_star.n();
    *m = e.theta_star.m();
    RelearnStatus::Ok
}

/// Copies the hex SHA-256 of the configuration (64 characters and a NUL)
/// into `buf`.
///
/// # Safety
/// `exp` must come from this library and `buf` hold `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn relearn_experiment_hash(
    exp: *const RelearnExperiment,
    buf: *mut c_char,
    cap: usize,
) -> RelearnStatus {
    nonnull!(exp, buf);
    let h = (*exp).inner.hash.as_bytes();
    if cap < h.len() + 1 {
        set_error(format!("buffer needs {} bytes", h.len() + 1));
        return RelearnStatus::InvalidArgument;
    }
    ptr::copy_nonoverlapping(h.as_ptr().cast(), buf, h.len());
    *buf.add(h.len()) = 0;
    RelearnStatus::Ok
}

/// Runs the closed loop. A divergent run still yields the partial
/// trajectory in `out` and returns `Divergence`.
///
/// # Safety
/// `exp` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn relearn_experiment_run(
    exp: *const RelearnExperiment,
    drifting: bool,
    out: *mut *mut RelearnTrajectory,
) -> RelearnStatus {
    nonnull!(exp, out);
    guard(|| {
        *out = ptr::null_mut();
        match run_experiment(&(*exp).inner, drifting) {
            Ok(outcome) => {
                let abort = outcome.summary.abort.clone();
                let diverged = outcome.summary.status == "diverged";
                *out = Box::into_raw(Box::new(RelearnTrajectory { outcome }));
                match abort {
                    Some(msg) => {
                        set_error(msg);
                        if diverged {
                            RelearnStatus::Divergence
                        } else {
                            RelearnStatus::Numerical
                        }
                    }
                    None => RelearnStatus::Ok,
                }
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of recorded steps.
///
/// # Safety
/// `traj` must come from this library or be NULL (yields 0).
#[no_mangle]
pub unsafe extern "C" fn relearn_trajectory_len(traj: *const RelearnTrajectory) -> usize {
    if traj.is_null() {
        0
    } else {
        (*traj).outcome.record.len()
    }
}

/// Borrowed pointer to one per-step series; valid while `traj` lives.
///
/// # Safety
/// `traj` must come from this library; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relearn_trajectory_series(
    traj: *const RelearnTrajectory,
    which: RelearnSeries,
    data: *mut *const f64,
    len: *mut usize,
) -> RelearnStatus {
    nonnull!(traj, data, len);
    let r = &(*traj).outcome.record;
    let v = match which {
        RelearnSeries::JErr => &r.j_err,
        RelearnSeries::ThetaErr => &r.theta_err,
        RelearnSeries::RhoTrue => &r.rho_true,
        RelearnSeries::RhoEst => &r.rho_est,
        RelearnSeries::GradNorm => &r.grad_norm,
        RelearnSeries::JStar => &r.j_star,
    };
    *data = v.as_ptr();
    *len = v.len();
    RelearnStatus::Ok
}

/// Borrowed row-major states (`len × n`); valid while `traj` lives.
///
/// # Safety
/// `traj` must come from this library; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relearn_trajectory_states(
    traj: *const RelearnTrajectory,
    data: *mut *const f64,
    len: *mut usize,
) -> RelearnStatus {
    nonnull!(traj, data, len);
    let x = &(*traj).outcome.record.x;
    *data = x.as_ptr();
    *len = x.len();
    RelearnStatus::Ok
}

/// JSON run summary, newly allocated; release with [`relearn_string_free`].
///
/// # Safety
/// `traj` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn relearn_trajectory_summary_json(traj: *const RelearnTrajectory) -> *mut c_char {
    if traj.is_null() {
        return ptr::null_mut();
    }
    serde_json::to_string(&(*traj).outcome.summary)
        .ok()
        .and_then(|s| CString::new(s).ok())
        .map_or(ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `s` must come from [`relearn_trajectory_summary_json`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn relearn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `exp` must come from this library or be NULL, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn relearn_experiment_free(exp: *mut RelearnExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// # Safety
/// `traj` must come from this library or be NULL, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn relearn_trajectory_free(traj: *mut RelearnTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}
