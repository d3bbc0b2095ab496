//! C ABI for amdkit.
//!
//! Every fallible function returns an [`AmdStatus`]; on failure the message
//! is available from [`amd_last_error`] on the same thread. Objects are
//! opaque handles created by `*_new`/`*_from_*` and released by `*_free`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use amdkit::config::RunConfig;
use amdkit::kmc::{sample_exit, RateGraph};
use amdkit::rng::StreamId;
use amdkit::runner::{execute, write_run, RunArtifacts};
use amdkit::statemap::{StateLabel, System};
use amdkit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    NoExit = 4,
    Budget = 5,
    Numerical = 6,
    Io = 7,
    Runtime = 8,
    Panic = 9,
}

/// Label of points that belong to no state.
pub const AMD_OUTSIDE: u64 = u64::MAX;

/// One exit event.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AmdExit {
    pub from: u64,
    pub to: u64,
    pub region: u64,
    pub exit_time: f64,
    pub residence_steps: u64,
    pub wall_steps: u64,
    pub factor: f64,
}

pub struct AmdSystem {
    cfg: RunConfig,
    sys: System,
}

pub struct AmdRun {
    config_text: String,
    seed: u64,
    art: RunArtifacts,
    events: CString,
    trajectory: CString,
    summary: CString,
}

pub struct AmdRateGraph {
    graph: RateGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn status_of(e: &Error) -> AmdStatus {
    match e {
        Error::InvalidInput(_) | Error::Schema(_) => AmdStatus::InvalidInput,
        Error::Config(_) => AmdStatus::Config,
        Error::NoExitWithinBudget { .. } => AmdStatus::NoExit,
        Error::DephasingBudget { .. }
        | Error::ClassificationTimeout { .. }
        | Error::DiagnosticTimeout { .. }
        | Error::Starvation { .. } => AmdStatus::Budget,
        Error::IntegratorDivergence { .. }
        | Error::SolverNonConvergence { .. }
        | Error::DegenerateCriticalPoint { .. }
        | Error::Signature { .. } => AmdStatus::Numerical,
        Error::Io(_) => AmdStatus::Io,
        _ => AmdStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (AmdStatus, String)>) -> AmdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmdStatus::Ok,
        Ok(Err((s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("panic inside amdkit");
            AmdStatus::Panic
        }
    }
}

fn lib<T>(r: amdkit::Result<T>) -> Result<T, (AmdStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (AmdStatus, String) {
    (AmdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (AmdStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (AmdStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn point_arg<'a>(x: *const f64, dim: usize, what: &str) -> Result<&'a [f64], (AmdStatus, String)> {
    if x.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(x, dim))
}

/// Message of the last failed call on this thread ("" if none). Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn amd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn amd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a system (surface, dynamics, states, method) from run-config TOML.
#[no_mangle]
pub unsafe extern "C" fn amd_system_from_toml(toml: *const c_char, out: *mut *mut AmdSystem) -> AmdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = lib(RunConfig::parse(str_arg(toml, "toml")?))?;
        let sys = lib(cfg.system())?;
        *out = Box::into_raw(Box::new(AmdSystem { cfg, sys }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn amd_system_free(sys: *mut AmdSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

#[no_mangle]
pub unsafe extern "C" fn amd_system_dim(sys: *const AmdSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.sys.surface.dim())
}

#[no_mangle]
pub unsafe extern "C" fn amd_system_energy(sys: *const AmdSystem, x: *const f64, dim: usize, out: *mut f64) -> AmdStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        let x = point_arg(x, dim, "x")?;
        if dim != s.sys.surface.dim() || out.is_null() {
            return Err((AmdStatus::InvalidInput, "dimension mismatch or null out".into()));
        }
        *out = s.sys.surface.value(x);
        Ok(())
    })
}

/// Writes `dim` gradient components into `grad`.
#[no_mangle]
pub unsafe extern "C" fn amd_system_gradient(
    sys: *const AmdSystem,
    x: *const f64,
    dim: usize,
    grad: *mut f64,
) -> AmdStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        let x = point_arg(x, dim, "x")?;
        if dim != s.sys.surface.dim() || grad.is_null() {
            return Err((AmdStatus::InvalidInput, "dimension mismatch or null grad".into()));
        }
        s.sys.surface.gradient(x, std::slice::from_raw_parts_mut(grad, dim));
        Ok(())
    })
}

/// State label of `x`, or `AMD_OUTSIDE`.
#[no_mangle]
pub unsafe extern "C" fn amd_system_classify(sys: *const AmdSystem, x: *const f64, dim: usize, out: *mut u64) -> AmdStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        let x = point_arg(x, dim, "x")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lib(s.sys.classify(x))?.0;
        Ok(())
    })
}

/// One exit from the state containing `x` with the configured method,
/// using stream `index` of `seed`.
#[no_mangle]
pub unsafe extern "C" fn amd_system_exit(
    sys: *const AmdSystem,
    x: *const f64,
    dim: usize,
    seed: u64,
    index: u64,
    out: *mut AmdExit,
) -> AmdStatus {
    guard(|| {
        let s = sys.as_ref().ok_or_else(|| null("sys"))?;
        let x = point_arg(x, dim, "x")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let method = s
            .cfg
            .method
            .accel()
            .ok_or((AmdStatus::Config, "splice has no single-exit form".to_string()))?;
        let state = lib(s.sys.classify(x))?;
        if state.is_outside() {
            return Err((AmdStatus::InvalidInput, format!("{x:?} belongs to no state")));
        }
        let e = lib(method.exit(&s.sys, state, x, StreamId::new(seed, 0).child(index), s.cfg.run.max_steps))?;
        *out = AmdExit {
            from: e.event.from.0,
            to: e.event.to.0,
            region: e.event.region_label as u64,
            exit_time: e.event.exit_time,
            residence_steps: e.residence_steps,
            wall_steps: e.wall_steps,
            factor: e.factor,
        };
        Ok(())
    })
}

/// Execute a full run config in memory (`seed` replaces the config seed).
#[no_mangle]
pub unsafe extern "C" fn amd_run_from_toml(toml: *const c_char, seed: u64, out: *mut *mut AmdRun) -> AmdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(toml, "toml")?;
        let cfg = lib(RunConfig::parse(text))?;
        let art = lib(execute(&cfg, seed))?;
        let c = |s: &str| CString::new(s).map_err(|_| (AmdStatus::Runtime, "interior NUL".to_string()));
        let summary = art.summary.to_string();
        let run = AmdRun {
            config_text: text.to_string(),
            seed,
            events: c(&art.events_csv)?,
            trajectory: c(&art.trajectory_csv)?,
            summary: c(&summary)?,
            art,
        };
        *out = Box::into_raw(Box::new(run));
        Ok(())
    })
}

/// events.csv contents; owned by the run.
#[no_mangle]
pub unsafe extern "C" fn amd_run_events_csv(run: *const AmdRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.events.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn amd_run_trajectory_csv(run: *const AmdRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.trajectory.as_ptr())
}

/// summary as compact JSON; owned by the run.
#[no_mangle]
pub unsafe extern "C" fn amd_run_summary_json(run: *const AmdRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.summary.as_ptr())
}

/// Write the run directory (events, trajectory, summary, manifest).
#[no_mangle]
pub unsafe extern "C" fn amd_run_write(run: *const AmdRun, dir: *const c_char) -> AmdStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let dir = str_arg(dir, "dir")?;
        lib(write_run(Path::new(dir), &r.config_text, r.seed, 1, &r.art))
    })
}

#[no_mangle]
pub unsafe extern "C" fn amd_run_free(run: *mut AmdRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

#[no_mangle]
pub extern "C" fn amd_rate_graph_new() -> *mut AmdRateGraph {
    Box::into_raw(Box::new(AmdRateGraph { graph: RateGraph::new() }))
}

#[no_mangle]
pub unsafe extern "C" fn amd_rate_graph_free(g: *mut AmdRateGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Set k(i → j); zero removes the edge.
#[no_mangle]
pub unsafe extern "C" fn amd_rate_graph_set_rate(g: *mut AmdRateGraph, i: u64, j: u64, rate: f64) -> AmdStatus {
    guard(|| {
        let g = g.as_mut().ok_or_else(|| null("graph"))?;
        lib(g.graph.set_rate(StateLabel(i), StateLabel(j), rate))
    })
}

#[no_mangle]
pub unsafe extern "C" fn amd_rate_graph_total_rate(g: *const AmdRateGraph, i: u64) -> f64 {
    g.as_ref().map_or(f64::NAN, |g| g.graph.total_rate(StateLabel(i)))
}

/// Sample one kMC exit from `i` with stream `index` of `seed`.
#[no_mangle]
pub unsafe extern "C" fn amd_rate_graph_sample_exit(
    g: *const AmdRateGraph,
    i: u64,
    seed: u64,
    index: u64,
    time: *mut f64,
    next: *mut u64,
) -> AmdStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("graph"))?;
        if time.is_null() || next.is_null() {
            return Err(null("time/next"));
        }
        let mut rng = StreamId::new(seed, index).rng();
        let (t, j) = lib(sample_exit(&g.graph, StateLabel(i), &mut rng))?;
        *time = t;
        *next = j.0;
        Ok(())
    })
}
