//! C ABI over the irrigation toolkit.
//!
//! Flows live behind opaque [`IrrFlow`] handles. Every call returns an
//! [`IrrStatus`]; on failure [`irr_last_error`] describes the cause. Strings
//! handed out by the library are released with [`irr_string_free`], flows
//! with [`irr_flow_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use irrigation::construct::square_to_dirac;
use irrigation::energy::total_energy;
use irrigation::flow::samples;
use irrigation::optimizer::{
    equipartition_report, optimize_positions, topology_search, Constraints, OptimizerConfig,
};
use irrigation::{validate_flow, Error, PolygonalFlow};

/// Opaque flow handle.
pub struct IrrFlow(PolygonalFlow);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Unparseable or inconsistent input.
    Malformed = 3,
    /// Structurally invalid flow.
    InvalidFlow = 4,
    /// The optimizer stopped above its gradient tolerance; the output is still set.
    NotConverged = 5,
    /// A panic was caught at the boundary.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IrrEnergy {
    pub perimeter: f64,
    pub kinetic: f64,
    pub internal: f64,
    /// NaN when the flow has no leaf radius.
    pub boundary_norm_sq: f64,
    /// NaN when the flow has no leaf radius.
    pub total: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IrrOptimizeOptions {
    pub max_iters: u32,
    pub grad_tol: f64,
    pub seed: u64,
    pub fix_boundary: bool,
    pub fix_root: bool,
    pub zero_barycenter: bool,
    pub boundary_term: bool,
    pub topology_moves: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IrrStatus {
    match e {
        Error::InvalidFlow(_) | Error::NotRooted(_) => IrrStatus::InvalidFlow,
        _ => IrrStatus::Malformed,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F>(f: F) -> IrrStatus
where
    F: FnOnce() -> Result<IrrStatus, (IrrStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            IrrStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (IrrStatus, String) {
    (status_of(&e), e.to_string())
}

fn null() -> (IrrStatus, String) {
    (IrrStatus::NullPointer, "null pointer argument".into())
}

unsafe fn flow_ref<'a>(p: *const IrrFlow) -> Result<&'a PolygonalFlow, (IrrStatus, String)> {
    p.as_ref().map(|f| &f.0).ok_or_else(null)
}

unsafe fn put_flow(out: *mut *mut IrrFlow, flow: PolygonalFlow) {
    *out = Box::into_raw(Box::new(IrrFlow(flow)));
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn irr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn irr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default optimizer options.
#[no_mangle]
pub extern "C" fn irr_optimize_options_default() -> IrrOptimizeOptions {
    let cfg = OptimizerConfig::default();
    IrrOptimizeOptions {
        max_iters: cfg.max_iters as u32,
        grad_tol: cfg.grad_tol,
        seed: cfg.seed,
        fix_boundary: false,
        fix_root: false,
        zero_barycenter: false,
        boundary_term: true,
        topology_moves: false,
    }
}

/// Parses a flow from NUL-terminated JSON.
///
/// # Safety
/// `json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irr_flow_from_json(json: *const c_char, out: *mut *mut IrrFlow) -> IrrStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(null());
        }
        let s = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (IrrStatus::InvalidUtf8, e.to_string()))?;
        put_flow(out, PolygonalFlow::from_json(s).map_err(lib_err)?);
        Ok(IrrStatus::Ok)
    })
}

/// Serializes the flow to JSON; release the string with [`irr_string_free`].
///
/// # Safety
/// `flow` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irr_flow_to_json(flow: *const IrrFlow, out: *mut *mut c_char) -> IrrStatus {
    guard(|| {
        let f = flow_ref(flow)?;
        if out.is_null() {
            return Err(null());
        }
        let s = f.to_json().map_err(lib_err)?;
        *out = CString::new(s)
            .map_err(|e| (IrrStatus::Internal, e.to_string()))?
            .into_raw();
        Ok(IrrStatus::Ok)
    })
}

/// Dyadic branching from the uniform grid on the unit square to a Dirac.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irr_flow_square_to_dirac(levels: u32, out: *mut *mut IrrFlow) -> IrrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        put_flow(out, square_to_dirac(levels as usize).map_err(lib_err)?);
        Ok(IrrStatus::Ok)
    })
}

/// Symmetric V: leaves at `(±d, 0)` merge at the origin at `tau`, then stay
/// until `horizon`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irr_flow_v(
    d: f64,
    tau: f64,
    horizon: f64,
    eps: f64,
    out: *mut *mut IrrFlow,
) -> IrrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        if !(d.is_finite() && tau > 0.0 && horizon >= tau && eps >= 0.0) {
            return Err((IrrStatus::Malformed, "need 0 < tau <= horizon and eps >= 0".into()));
        }
        put_flow(out, samples::v_flow(d, tau, horizon, eps));
        Ok(IrrStatus::Ok)
    })
}

/// # Safety
/// `flow` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn irr_flow_free(flow: *mut IrrFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn irr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Node and edge counts.
///
/// # Safety
/// `flow` must come from this library; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn irr_flow_size(
    flow: *const IrrFlow,
    nodes: *mut usize,
    edges: *mut usize,
) -> IrrStatus {
    guard(|| {
        let f = flow_ref(flow)?;
        if nodes.is_null() || edges.is_null() {
            return Err(null());
        }
        *nodes = f.nodes().len();
        *edges = f.edges().len();
        Ok(IrrStatus::Ok)
    })
}

/// Structural validation; `violations` receives the number of problems found.
///
/// # Safety
/// `flow` must come from this library and `violations` must be valid.
#[no_mangle]
pub unsafe extern "C" fn irr_flow_validate(flow: *const IrrFlow, violations: *mut usize) -> IrrStatus {
    guard(|| {
        let f = flow_ref(flow)?;
        if violations.is_null() {
            return Err(null());
        }
        *violations = validate_flow(f).violations.len();
        Ok(IrrStatus::Ok)
    })
}

/// Energy breakdown over the flow's full time range.
///
/// # Safety
/// `flow` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn irr_flow_energy(flow: *const IrrFlow, out: *mut IrrEnergy) -> IrrStatus {
    guard(|| {
        let f = flow_ref(flow)?;
        if out.is_null() {
            return Err(null());
        }
        let br = total_energy(f).map_err(lib_err)?;
        *out = IrrEnergy {
            perimeter: br.perimeter,
            kinetic: br.kinetic,
            internal: br.internal,
            boundary_norm_sq: br.boundary_norm_sq.unwrap_or(f64::NAN),
            total: br.total.unwrap_or(f64::NAN),
        };
        Ok(IrrStatus::Ok)
    })
}

/// Largest `Λ / I` over the backward subsystems of all non-leaf nodes.
///
/// # Safety
/// `flow` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn irr_flow_max_equipartition(flow: *const IrrFlow, out: *mut f64) -> IrrStatus {
    guard(|| {
        let f = flow_ref(flow)?;
        if out.is_null() {
            return Err(null());
        }
        *out = equipartition_report(f)
            .map_err(lib_err)?
            .iter()
            .map(|e| e.lambda / e.internal.abs().max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(IrrStatus::Ok)
    })
}

/// Minimizes the energy. On `Ok` and `NotConverged` a new flow is stored in
/// `out`.
///
/// # Safety
/// `flow` must come from this library; `opts` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn irr_optimize(
    flow: *const IrrFlow,
    opts: *const IrrOptimizeOptions,
    out: *mut *mut IrrFlow,
) -> IrrStatus {
    guard(|| {
        let f = flow_ref(flow)?;
        let o = opts.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let mut cfg = OptimizerConfig {
            max_iters: o.max_iters as usize,
            grad_tol: o.grad_tol,
            seed: o.seed,
            topology_moves: o.topology_moves,
            ..OptimizerConfig::default()
        };
        if f.eps > 0.0 {
            cfg.merge_tol = cfg.merge_tol.min(0.5 * f.eps);
        }
        let c = Constraints {
            fix_boundary: o.fix_boundary,
            fix_root: o.fix_root,
            zero_barycenter: o.zero_barycenter,
            boundary_term: o.boundary_term,
            ..Constraints::default()
        };
        let (res, trace) = if o.topology_moves {
            topology_search(f, &cfg, &c)
        } else {
            optimize_positions(f, &cfg, &c)
        }
        .map_err(lib_err)?;
        put_flow(out, res);
        if trace.converged {
            Ok(IrrStatus::Ok)
        } else {
            set_error("projected gradient above tolerance");
            Ok(IrrStatus::NotConverged)
        }
    })
}
