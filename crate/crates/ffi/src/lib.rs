//! C ABI over `quadnls`.
//!
//! Every function returns a [`QnStatus`]. On failure the message is kept
//! per thread and can be read with [`qn_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use quadnls::cli::{self, Command};
use quadnls::config::RunConfig;
use quadnls::dichotomy::{run_experiment, thresholds, Classification, Consistency, DataFamily, ExperimentSpec};
use quadnls::evolution::{BlowupVerdict, EvolveConfig};
use quadnls::ground_state::{solve, GroundStateConfig, GroundStateResult};
use quadnls::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnsupportedDimension = 3,
    Config = 4,
    Numerical = 5,
    Io = 6,
    CheckFailed = 7,
    Panic = 8,
}

impl From<&Error> for QnStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParameter { .. } | Error::InvalidGrid(_) | Error::GridMismatch(_) => {
                QnStatus::InvalidArgument
            }
            Error::UnsupportedDimension(_) => QnStatus::UnsupportedDimension,
            Error::Parse(_) | Error::Json(_) => QnStatus::Config,
            Error::Io(_) => QnStatus::Io,
            _ => QnStatus::Numerical,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

/// Runs `f`, turning errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (QnStatus, String)>) -> QnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            QnStatus::Panic
        }
    }
}

fn lift(e: Error) -> (QnStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (QnStatus, String) {
    (QnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (QnStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (QnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, 0 if none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn qn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Opaque ground state.
pub struct QnGroundState {
    inner: GroundStateResult,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QnGroundStateInfo {
    pub n: u32,
    pub kappa: f64,
    pub q: f64,
    pub k: f64,
    pub p: f64,
    pub e: f64,
    pub alpha1: f64,
    pub c_op: f64,
    pub pohozaev_residual: f64,
    pub elliptic_residual: f64,
    pub iterations: u64,
    pub converged: bool,
    pub num_nodes: u64,
}

/// Solves for the ground state at ω = 1 on `num_nodes` cells of `[0, r_max]`
/// (working frame) with default tolerances.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a new handle.
#[no_mangle]
pub unsafe extern "C" fn qn_ground_state_solve(
    n: u32,
    kappa: f64,
    r_max: f64,
    num_nodes: u64,
    out: *mut *mut QnGroundState,
) -> QnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = GroundStateConfig {
            r_max,
            num_nodes: num_nodes as usize,
            ..GroundStateConfig::default()
        };
        let inner = solve(n as usize, kappa, &cfg).map_err(lift)?;
        *out = Box::into_raw(Box::new(QnGroundState { inner }));
        Ok(())
    })
}

/// # Safety
/// `gs` must be null or a handle from [`qn_ground_state_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qn_ground_state_free(gs: *mut QnGroundState) {
    if !gs.is_null() {
        drop(Box::from_raw(gs));
    }
}

/// # Safety
/// `gs` must be a live handle and `info` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qn_ground_state_info(gs: *const QnGroundState, info: *mut QnGroundStateInfo) -> QnStatus {
    guard(|| {
        let gs = &gs.as_ref().ok_or_else(|| null("gs"))?.inner;
        let info = info.as_mut().ok_or_else(|| null("info"))?;
        *info = QnGroundStateInfo {
            n: gs.n as u32,
            kappa: gs.kappa,
            q: gs.values.q,
            k: gs.values.k,
            p: gs.values.p,
            e: gs.values.e,
            alpha1: gs.alpha1,
            c_op: gs.c_op,
            pohozaev_residual: gs.pohozaev_residuals.max(),
            elliptic_residual: gs.elliptic_residual,
            iterations: gs.iterations as u64,
            converged: gs.converged,
            num_nodes: gs.grid().num_nodes() as u64,
        };
        Ok(())
    })
}

/// Copies radii and profile values into caller buffers of length `len`,
/// which must equal the node count.
///
/// # Safety
/// Each buffer must be null or hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qn_ground_state_profile(
    gs: *const QnGroundState,
    r: *mut f64,
    phi: *mut f64,
    psi: *mut f64,
    len: u64,
) -> QnStatus {
    guard(|| {
        let gs = &gs.as_ref().ok_or_else(|| null("gs"))?.inner;
        let grid = gs.grid();
        if len as usize != grid.num_nodes() {
            return Err((
                QnStatus::InvalidArgument,
                format!("len = {len} but the grid has {} nodes", grid.num_nodes()),
            ));
        }
        let state = gs.state().materialize();
        let u = state.u.real_samples();
        let v = state.v.real_samples();
        let nodes = grid.nodes();
        for i in 0..grid.num_nodes() {
            if !r.is_null() {
                *r.add(i) = nodes[i];
            }
            if !phi.is_null() {
                *phi.add(i) = u[i];
            }
            if !psi.is_null() {
                *psi.add(i) = v[i];
            }
        }
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QnThresholds {
    pub eq_star: f64,
    pub kq_star: f64,
    pub gamma: f64,
    pub a_bound: f64,
}

/// Energy and gradient thresholds for data of charge `q0` (n = 5 only).
///
/// # Safety
/// `gs` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qn_thresholds(gs: *const QnGroundState, q0: f64, out: *mut QnThresholds) -> QnStatus {
    guard(|| {
        let gs = &gs.as_ref().ok_or_else(|| null("gs"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = thresholds(gs, q0).map_err(lift)?;
        *out = QnThresholds {
            eq_star: t.eq_star,
            kq_star: t.kq_star,
            gamma: t.gamma,
            a_bound: t.a_bound,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QnClassification {
    Global = 0,
    BlowupCandidate = 1,
    Indeterminate = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QnVerdict {
    Bounded = 0,
    Blowup = 1,
    Inconclusive = 2,
    NotRun = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QnConsistency {
    Agree = 0,
    Disagree = 1,
    OutsideTheorem = 2,
    Inconclusive = 3,
    NotRun = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QnDichotomyResult {
    pub eq_ratio: f64,
    pub kq_ratio: f64,
    pub classification: QnClassification,
    pub verdict: QnVerdict,
    pub consistency: QnConsistency,
    /// NaN when no blow-up was detected.
    pub t_detect: f64,
    pub q_drift: f64,
    pub e_drift: f64,
}

/// Classifies `scale_factor` times the ground state of `gs` (n = 5) and
/// evolves it to `t_max` with step `dt` on a grid of `evolve_num_nodes`.
///
/// # Safety
/// `gs` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qn_dichotomy_scaled(
    gs: *const QnGroundState,
    scale_factor: f64,
    dt: f64,
    t_max: f64,
    evolve_num_nodes: u64,
    out: *mut QnDichotomyResult,
) -> QnStatus {
    guard(|| {
        let gs = &gs.as_ref().ok_or_else(|| null("gs"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let spec = ExperimentSpec {
            data: DataFamily::ScaledGroundState { scale_factor },
            evolve: EvolveConfig {
                kappa: gs.kappa,
                dt,
                t_max,
                ..EvolveConfig::default()
            },
            evolve_num_nodes: evolve_num_nodes as usize,
        };
        let (report, _) = run_experiment(&spec, gs).map_err(lift)?;
        let sim = report.simulation.as_ref();
        *out = QnDichotomyResult {
            eq_ratio: report.eq_ratio,
            kq_ratio: report.kq_ratio,
            classification: match report.classification {
                Classification::Global => QnClassification::Global,
                Classification::BlowupCandidate => QnClassification::BlowupCandidate,
                Classification::Indeterminate => QnClassification::Indeterminate,
            },
            verdict: match sim.map(|s| s.verdict) {
                Some(BlowupVerdict::Bounded) => QnVerdict::Bounded,
                Some(BlowupVerdict::Blowup) => QnVerdict::Blowup,
                Some(BlowupVerdict::Inconclusive) => QnVerdict::Inconclusive,
                None => QnVerdict::NotRun,
            },
            consistency: match report.consistency {
                Some(Consistency::Agree) => QnConsistency::Agree,
                Some(Consistency::Disagree) => QnConsistency::Disagree,
                Some(Consistency::OutsideTheorem) => QnConsistency::OutsideTheorem,
                Some(Consistency::Inconclusive) => QnConsistency::Inconclusive,
                None => QnConsistency::NotRun,
            },
            t_detect: sim.and_then(|s| s.t_detect).unwrap_or(f64::NAN),
            q_drift: sim.map_or(f64::NAN, |s| s.q_drift),
            e_drift: sim.map_or(f64::NAN, |s| s.e_drift),
        };
        Ok(())
    })
}

/// Runs a CLI subcommand (`ground-state`, `evolve`, `dichotomy`, `verify`)
/// with a JSON run configuration, writing artifacts to `out_dir`.
/// `config_json` may be null for defaults; `out_dir` may be null to use
/// the configured directory. Failed invariants give `CheckFailed`.
///
/// # Safety
/// String arguments must be null or NUL-terminated UTF-8.
#[no_mangle]
pub unsafe extern "C" fn qn_run(
    command: *const c_char,
    config_json: *const c_char,
    out_dir: *const c_char,
) -> QnStatus {
    guard(|| {
        let command = match c_str(command, "command")? {
            "ground-state" => Command::GroundState,
            "evolve" => Command::Evolve,
            "dichotomy" => Command::Dichotomy,
            "verify" => Command::Verify,
            other => return Err((QnStatus::InvalidArgument, format!("unknown command `{other}`"))),
        };
        let mut cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_json(c_str(config_json, "config_json")?).map_err(lift)?
        };
        if !out_dir.is_null() {
            cfg.output.directory = PathBuf::from(c_str(out_dir, "out_dir")?);
        }
        let outcome = cli::run(command, &cfg).map_err(lift)?;
        if !outcome.failures.is_empty() {
            return Err((
                QnStatus::CheckFailed,
                format!("failed: {}", outcome.failures.join(", ")),
            ));
        }
        Ok(())
    })
}
