//! C ABI over `ddsynth`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free` function. Every fallible call returns a
//! [`DdStatus`]; on failure [`dd_last_error_message`] describes the cause.
//! Matrices cross the boundary as row-major `double` arrays.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ddsynth::cli::{synthesize_mode, Mode, RunConfig};
use ddsynth::ddpf::evaluate_controller;
use ddsynth::geometry::largest_ci_subspace;
use ddsynth::linalg::{Matrix, Tolerance};
use ddsynth::model::{
    build_power_grid, randomize_grid, ControllerFile, LtiSystem, MetricsRow, PowerGridParams,
    SystemFile,
};
use ddsynth::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdStatus {
    Ok = 0,
    InvalidArgument = 1,
    Infeasible = 2,
    NumericalFailure = 3,
    ParseError = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdMode {
    H2Sdp = 0,
    DdH2 = 1,
    DdAlpha = 2,
    DdGain = 3,
    DdOnly = 4,
}

impl From<DdMode> for Mode {
    fn from(m: DdMode) -> Self {
        match m {
            DdMode::H2Sdp => Mode::H2Sdp,
            DdMode::DdH2 => Mode::DdH2,
            DdMode::DdAlpha => Mode::DdAlpha,
            DdMode::DdGain => Mode::DdGain,
            DdMode::DdOnly => Mode::DdOnly,
        }
    }
}

/// Comparison metrics of a controller.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DdMetrics {
    /// Decay rate, the negated spectral abscissa of `A + BF`.
    pub f_alpha: f64,
    pub f_gain: f64,
    pub f_h2: f64,
    pub f_dd: f64,
    pub hurwitz: bool,
}

impl From<MetricsRow> for DdMetrics {
    fn from(m: MetricsRow) -> Self {
        Self {
            f_alpha: m.f_alpha,
            f_gain: m.f_gain,
            f_h2: m.f_h2,
            f_dd: m.f_dd,
            hurwitz: m.hurwitz,
        }
    }
}

/// An LTI plant `ẋ = Ax + Bu + Ed`, `z = Hx`.
pub struct DdSystem {
    sys: LtiSystem,
}

/// A state-feedback gain with the record of its synthesis.
pub struct DdController {
    f: Matrix,
    file: ControllerFile,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DdStatus {
    match e {
        Error::Infeasible(_) | Error::NoStabilizingDd { .. } => DdStatus::Infeasible,
        Error::NumericalFailure(_) | Error::SingularLyapunov => DdStatus::NumericalFailure,
        Error::Parse(_) => DdStatus::ParseError,
        _ => DdStatus::InvalidArgument,
    }
}

/// Runs `body`, recording errors and panics for [`dd_last_error_message`].
fn guard(body: impl FnOnce() -> Result<(), Error>) -> DdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            DdStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            DdStatus::Panic
        }
    }
}

fn invalid(msg: &str) -> Error {
    Error::InvalidInput(msg.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not UTF-8")))
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, name: &str) -> Result<Matrix, Error> {
    if rows * cols == 0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    Ok(Matrix::from_row_slice(
        rows,
        cols,
        std::slice::from_raw_parts(p, rows * cols),
    ))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Error> {
    p.as_ref()
        .ok_or_else(|| invalid(&format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Error> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a system from row-major `A` (n×n), `B` (n×m), `E` (n×l) and `H` (p×n).
#[no_mangle]
pub unsafe extern "C" fn dd_system_new(
    n: usize,
    m: usize,
    p: usize,
    l: usize,
    a: *const f64,
    b: *const f64,
    e: *const f64,
    h: *const f64,
    out: *mut *mut DdSystem,
) -> DdStatus {
    guard(|| {
        let sys = LtiSystem::new(
            matrix_arg(a, n, n, "A")?,
            matrix_arg(b, n, m, "B")?,
            matrix_arg(e, n, l, "E")?,
            matrix_arg(h, p, n, "H")?,
        )?;
        put(out, DdSystem { sys })
    })
}

/// Parses a system file (`{n, m, p, l, A, B, E, H}`).
#[no_mangle]
pub unsafe extern "C" fn dd_system_from_json(
    json: *const c_char,
    out: *mut *mut DdSystem,
) -> DdStatus {
    guard(|| {
        let sys = SystemFile::from_json(str_arg(json, "json")?)?.to_system()?;
        put(out, DdSystem { sys })
    })
}

/// The nominal four-bus power network.
#[no_mangle]
pub unsafe extern "C" fn dd_system_power_grid(out: *mut *mut DdSystem) -> DdStatus {
    guard(|| {
        put(
            out,
            DdSystem {
                sys: build_power_grid(&PowerGridParams::nominal())?,
            },
        )
    })
}

/// The power network with inertia and damping randomized by `seed`.
#[no_mangle]
pub unsafe extern "C" fn dd_system_power_grid_random(
    seed: u64,
    out: *mut *mut DdSystem,
) -> DdStatus {
    guard(|| {
        put(
            out,
            DdSystem {
                sys: build_power_grid(&randomize_grid(&PowerGridParams::nominal(), seed))?,
            },
        )
    })
}

/// Writes the dimensions `n, m, p, l`; any output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn dd_system_dims(
    sys: *const DdSystem,
    n: *mut usize,
    m: *mut usize,
    p: *mut usize,
    l: *mut usize,
) -> DdStatus {
    guard(|| {
        let s = &ref_arg(sys, "system")?.sys;
        for (ptr, v) in [(n, s.n()), (m, s.m()), (p, s.p()), (l, s.l())] {
            if let Some(r) = ptr.as_mut() {
                *r = v;
            }
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dd_system_free(sys: *mut DdSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Synthesizes a controller. `config_json` is an optional run configuration
/// (null for defaults); `seed` overrides its seed.
#[no_mangle]
pub unsafe extern "C" fn dd_synthesize(
    sys: *const DdSystem,
    mode: DdMode,
    seed: u64,
    config_json: *const c_char,
    out: *mut *mut DdController,
) -> DdStatus {
    guard(|| {
        let s = &ref_arg(sys, "system")?.sys;
        let mut cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            serde_json::from_str::<RunConfig>(str_arg(config_json, "config_json")?)?
        };
        cfg.seed = seed;
        let mode = Mode::from(mode);
        let (res, _) = synthesize_mode(s, mode, &cfg)?;
        let file = res.to_file(mode.name());
        put(out, DdController { f: res.f, file })
    })
}

/// Parses a controller file (`{m, n, F, ...}`).
#[no_mangle]
pub unsafe extern "C" fn dd_controller_from_json(
    json: *const c_char,
    out: *mut *mut DdController,
) -> DdStatus {
    guard(|| {
        let file = ControllerFile::from_json(str_arg(json, "json")?)?;
        let f = file.gain()?;
        put(out, DdController { f, file })
    })
}

#[no_mangle]
pub unsafe extern "C" fn dd_controller_dims(
    ctrl: *const DdController,
    m: *mut usize,
    n: *mut usize,
) -> DdStatus {
    guard(|| {
        let c = ref_arg(ctrl, "controller")?;
        if let Some(r) = m.as_mut() {
            *r = c.f.nrows();
        }
        if let Some(r) = n.as_mut() {
            *r = c.f.ncols();
        }
        Ok(())
    })
}

/// Copies the gain into `buf` (row-major, `len` must be at least `m·n`).
#[no_mangle]
pub unsafe extern "C" fn dd_controller_gain(
    ctrl: *const DdController,
    buf: *mut f64,
    len: usize,
) -> DdStatus {
    guard(|| {
        let c = ref_arg(ctrl, "controller")?;
        let (m, n) = c.f.shape();
        if buf.is_null() || len < m * n {
            return Err(invalid(&format!("buffer must hold {} entries", m * n)));
        }
        let out = std::slice::from_raw_parts_mut(buf, m * n);
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = c.f[(i, j)];
            }
        }
        Ok(())
    })
}

/// Metrics recorded at synthesis; fails for controllers read without them.
#[no_mangle]
pub unsafe extern "C" fn dd_controller_metrics(
    ctrl: *const DdController,
    out: *mut DdMetrics,
) -> DdStatus {
    guard(|| {
        let c = ref_arg(ctrl, "controller")?;
        let m = c
            .file
            .metrics
            .ok_or_else(|| invalid("controller carries no metrics"))?;
        *out.as_mut()
            .ok_or_else(|| invalid("output pointer is null"))? = m.into();
        Ok(())
    })
}

/// Whether the synthesis loop met its stopping rule.
#[no_mangle]
pub unsafe extern "C" fn dd_controller_converged(
    ctrl: *const DdController,
    out: *mut bool,
) -> DdStatus {
    guard(|| {
        let c = ref_arg(ctrl, "controller")?;
        *out.as_mut()
            .ok_or_else(|| invalid("output pointer is null"))? = c.file.converged.unwrap_or(false);
        Ok(())
    })
}

/// Evaluates any controller on any conformable system.
#[no_mangle]
pub unsafe extern "C" fn dd_evaluate(
    sys: *const DdSystem,
    ctrl: *const DdController,
    out: *mut DdMetrics,
) -> DdStatus {
    guard(|| {
        let s = &ref_arg(sys, "system")?.sys;
        let c = ref_arg(ctrl, "controller")?;
        let tol = Tolerance::default();
        let v = largest_ci_subspace(s, &tol);
        let m = evaluate_controller(s, &v, &c.f, &tol)?;
        *out.as_mut()
            .ok_or_else(|| invalid("output pointer is null"))? = m.into();
        Ok(())
    })
}

/// Serializes the controller file; release the string with [`dd_string_free`].
#[no_mangle]
pub unsafe extern "C" fn dd_controller_to_json(
    ctrl: *const DdController,
    out: *mut *mut c_char,
) -> DdStatus {
    guard(|| {
        let c = ref_arg(ctrl, "controller")?;
        if out.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *out = CString::new(c.file.to_json())
            .map_err(|_| invalid("interior NUL"))?
            .into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn dd_controller_free(ctrl: *mut DdController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

#[no_mangle]
pub unsafe extern "C" fn dd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
