//! C ABI over `hopdyn-core`.
//!
//! Parameters live behind an opaque [`HopdynParams`] handle. Every fallible call returns
//! a [`HopdynStatus`] and writes results through out-pointers; on failure a message is
//! available from [`hopdyn_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hopdyn_core::accumulation::{critical_alpha, hop_sequence, CriticalAlpha};
use hopdyn_core::dynamics::{terminal_velocity, SimOptions};
use hopdyn_core::energy::{delta_rd, required_alpha_r, EnergyLedger};
use hopdyn_core::stance::{simulate_stance, StanceParams};
use hopdyn_core::{default_params, HopError, RobotParams};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopdynStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

/// Opaque robot parameter set.
pub struct HopdynParams {
    inner: RobotParams,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HopdynMasses {
    pub m_b: f64,
    pub m_f: f64,
    pub m_t: f64,
    pub body_fraction: f64,
}

/// Normalized per-hop energy terms.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HopdynLedger {
    pub alpha_d: f64,
    pub eta_fdd: f64,
    pub eta_td: f64,
    pub alpha_s: f64,
    pub eta_mech: f64,
    pub eta_lo: f64,
    pub alpha_r: f64,
    pub eta_fdr: f64,
}

impl From<HopdynLedger> for EnergyLedger {
    fn from(l: HopdynLedger) -> Self {
        EnergyLedger {
            alpha_d: l.alpha_d,
            eta_fdd: l.eta_fdd,
            eta_td: l.eta_td,
            alpha_s: l.alpha_s,
            eta_mech: l.eta_mech,
            eta_lo: l.eta_lo,
            alpha_r: l.alpha_r,
            eta_fdr: l.eta_fdr,
        }
    }
}

/// Kind of critical-ratio result.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopdynCriticalKind {
    Value = 0,
    AlwaysAccumulates = 1,
    NeverAccumulates = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HopdynStanceOutcome {
    pub liftoff_angle: f64,
    pub mu_required: f64,
    pub e_vertical: f64,
    pub e_horizontal: f64,
    pub e_rotational: f64,
    pub e_foot_loss: f64,
    pub stance_time: f64,
    pub fell_over: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &HopError) -> HopdynStatus {
    if e.is_numerical() {
        HopdynStatus::Numerical
    } else {
        HopdynStatus::InvalidInput
    }
}

fn guard(f: impl FnOnce() -> Result<(), HopdynStatus>) -> HopdynStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HopdynStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            HopdynStatus::Panic
        }
    }
}

fn fail(e: HopError) -> HopdynStatus {
    set_error(&e.to_string());
    status_of(&e)
}

fn null(what: &str) -> HopdynStatus {
    set_error(&format!("{what} is null"));
    HopdynStatus::NullPointer
}

unsafe fn params<'a>(p: *const HopdynParams) -> Result<&'a RobotParams, HopdynStatus> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| null("params"))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, HopdynStatus> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread; empty when none. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hopdyn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hopdyn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New handle with the prototype parameters. Free with [`hopdyn_params_free`].
#[no_mangle]
pub extern "C" fn hopdyn_params_default() -> *mut HopdynParams {
    Box::into_raw(Box::new(HopdynParams {
        inner: default_params(),
    }))
}

/// Parses and validates a JSON parameter record into a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out_handle` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hopdyn_params_from_json(
    json: *const c_char,
    out_handle: *mut *mut HopdynParams,
) -> HopdynStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|_| {
            set_error("json is not valid UTF-8");
            HopdynStatus::InvalidInput
        })?;
        let p = RobotParams::from_json(text).map_err(fail)?;
        p.ensure_valid().map_err(fail)?;
        *slot = Box::into_raw(Box::new(HopdynParams { inner: p }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hopdyn_params_free(handle: *mut HopdynParams) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Copy of a handle with new body and foot masses; stiffness and damping follow the masses.
///
/// # Safety
/// `handle` and `out_handle` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hopdyn_params_with_masses(
    handle: *const HopdynParams,
    m_b: f64,
    m_f: f64,
    out_handle: *mut *mut HopdynParams,
) -> HopdynStatus {
    guard(|| {
        let p = params(handle)?;
        let slot = out(out_handle, "out_handle")?;
        let q = p.with_masses(m_b, m_f);
        q.ensure_valid().map_err(fail)?;
        *slot = Box::into_raw(Box::new(HopdynParams { inner: q }));
        Ok(())
    })
}

/// # Safety
/// `handle` and `out_masses` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hopdyn_params_masses(
    handle: *const HopdynParams,
    out_masses: *mut HopdynMasses,
) -> HopdynStatus {
    guard(|| {
        let p = params(handle)?;
        let o = out(out_masses, "out_masses")?;
        let m = p.masses();
        *o = HopdynMasses {
            m_b: p.m_b,
            m_f: p.m_f,
            m_t: m.m_t,
            body_fraction: m.body_fraction,
        };
        Ok(())
    })
}

/// Free-fall terminal speed (m/s).
///
/// # Safety
/// `handle` and `out_speed` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hopdyn_terminal_velocity(handle: *const HopdynParams, out_speed: *mut f64) -> HopdynStatus {
    guard(|| {
        let p = params(handle)?;
        let o = out(out_speed, "out_speed")?;
        *o = terminal_velocity(p).map_err(fail)?;
        Ok(())
    })
}

/// Rebound-to-drop height ratio implied by a ledger.
///
/// # Safety
/// `ledger` and `out_delta` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hopdyn_delta_rd(ledger: *const HopdynLedger, out_delta: *mut f64) -> HopdynStatus {
    guard(|| {
        let l = *ledger.as_ref().ok_or_else(|| null("ledger"))?;
        let o = out(out_delta, "out_delta")?;
        *o = delta_rd(&l.into()).map_err(fail)?;
        Ok(())
    })
}

/// Rebound input ratio reaching `delta_target`; `out_flight` is set when it exceeds one.
///
/// # Safety
/// `ledger`, `out_alpha` and `out_flight` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hopdyn_required_alpha_r(
    ledger: *const HopdynLedger,
    delta_target: f64,
    out_alpha: *mut f64,
    out_flight: *mut bool,
) -> HopdynStatus {
    guard(|| {
        let l = *ledger.as_ref().ok_or_else(|| null("ledger"))?;
        let a = out(out_alpha, "out_alpha")?;
        let f = out(out_flight, "out_flight")?;
        let s = required_alpha_r(&l.into(), delta_target).map_err(fail)?;
        *a = s.alpha_r;
        *f = s.flight;
        Ok(())
    })
}

/// Smallest constant rebound ratio that sustains hopping from `h_ref`. The value is
/// written only for [`HopdynCriticalKind::Value`].
///
/// # Safety
/// `handle`, `out_alpha` and `out_kind` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hopdyn_critical_alpha(
    handle: *const HopdynParams,
    h_ref: f64,
    out_alpha: *mut f64,
    out_kind: *mut HopdynCriticalKind,
) -> HopdynStatus {
    guard(|| {
        let p = params(handle)?;
        let a = out(out_alpha, "out_alpha")?;
        let k = out(out_kind, "out_kind")?;
        let opts = SimOptions::default().unrecorded();
        match critical_alpha(p, h_ref, &opts).map_err(fail)? {
            CriticalAlpha::Value(v) => {
                *a = v;
                *k = HopdynCriticalKind::Value;
            }
            CriticalAlpha::AlwaysAccumulates => *k = HopdynCriticalKind::AlwaysAccumulates,
            CriticalAlpha::NeverAccumulates => *k = HopdynCriticalKind::NeverAccumulates,
        }
        Ok(())
    })
}

/// Apex heights under constant rebound thrust `alpha_r` from release height `h0`, the
/// release height first. Writes at most `capacity` values and always the full count to
/// `out_len`; returns `BufferTooSmall` if they did not fit.
///
/// # Safety
/// `out_heights` must point to `capacity` writable doubles; `handle` and `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hopdyn_hop_sequence(
    handle: *const HopdynParams,
    alpha_r: f64,
    h0: f64,
    n_hops: usize,
    out_heights: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> HopdynStatus {
    guard(|| {
        let p = params(handle)?;
        let len = out(out_len, "out_len")?;
        if out_heights.is_null() && capacity > 0 {
            return Err(null("out_heights"));
        }
        let s = hop_sequence(p, alpha_r, h0, n_hops, &SimOptions::default().unrecorded()).map_err(fail)?;
        *len = s.heights.len();
        if s.heights.len() > capacity {
            set_error(&format!("need {} slots, have {capacity}", s.heights.len()));
            return Err(HopdynStatus::BufferTooSmall);
        }
        std::ptr::copy_nonoverlapping(s.heights.as_ptr(), out_heights, s.heights.len());
        Ok(())
    })
}

/// Planar stance from touchdown speed (m/s) and leg angle (deg) with the default inertias.
///
/// # Safety
/// `handle` and `out_outcome` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hopdyn_stance(
    handle: *const HopdynParams,
    v_td: f64,
    theta_deg: f64,
    out_outcome: *mut HopdynStanceOutcome,
) -> HopdynStatus {
    guard(|| {
        let p = params(handle)?;
        let o = out(out_outcome, "out_outcome")?;
        let sp = StanceParams {
            m_b: p.m_b,
            m_f: p.m_f,
            k: p.k_b,
            r_0: p.r_0,
            g: p.g,
            ..StanceParams::default()
        };
        let r = simulate_stance(v_td, theta_deg, &sp).map_err(fail)?;
        *o = HopdynStanceOutcome {
            liftoff_angle: r.liftoff_angle,
            mu_required: r.mu_required,
            e_vertical: r.partition.vertical,
            e_horizontal: r.partition.horizontal,
            e_rotational: r.partition.rotational,
            e_foot_loss: r.partition.foot_loss,
            stance_time: r.stance_time,
            fell_over: r.fell_over,
        };
        Ok(())
    })
}
