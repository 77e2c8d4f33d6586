use std::ffi::{CStr, CString};
use std::ptr;

use hopdyn_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(hopdyn_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn default_handle_masses_and_terminal_speed() {
    let h = hopdyn_params_default();
    let mut m = HopdynMasses::default();
    let mut v = 0.0;
    unsafe {
        assert_eq!(hopdyn_params_masses(h, &mut m), HopdynStatus::Ok);
        assert_eq!(hopdyn_terminal_velocity(h, &mut v), HopdynStatus::Ok);
        hopdyn_params_free(h);
    }
    assert!((m.m_t - 0.69655).abs() < 1e-12);
    assert!((m.body_fraction - 0.844).abs() < 1e-3);
    assert!(v > 10.0 && v < 15.0, "{v}");
}

#[test]
fn json_round_trip_and_rejection() {
    let good = CString::new(hopdyn_core::default_params().to_json()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(hopdyn_params_from_json(good.as_ptr(), &mut h), HopdynStatus::Ok);
        assert!(!h.is_null());
        hopdyn_params_free(h);
    }
    let mut p = hopdyn_core::default_params();
    p.m_f = -1.0;
    let bad = CString::new(p.to_json()).unwrap();
    let mut h = ptr::null_mut();
    let s = unsafe { hopdyn_params_from_json(bad.as_ptr(), &mut h) };
    assert_eq!(s, HopdynStatus::InvalidInput);
    assert!(h.is_null());
    assert!(last_error().contains("foot mass"), "{}", last_error());
}

#[test]
fn null_pointers_reported() {
    let mut v = 0.0;
    let s = unsafe { hopdyn_terminal_velocity(ptr::null(), &mut v) };
    assert_eq!(s, HopdynStatus::NullPointer);
    assert!(last_error().contains("params"));
    unsafe { hopdyn_params_free(ptr::null_mut()) };
}

#[test]
fn ledger_round_trip() {
    let l = HopdynLedger {
        alpha_d: -0.02,
        eta_fdd: 0.95,
        eta_td: 0.844,
        alpha_s: 0.0,
        eta_mech: 0.97,
        eta_lo: 0.844,
        alpha_r: 0.3,
        eta_fdr: 0.96,
    };
    let mut d = 0.0;
    let mut a = 0.0;
    let mut flight = true;
    unsafe {
        assert_eq!(hopdyn_delta_rd(&l, &mut d), HopdynStatus::Ok);
        assert_eq!(hopdyn_required_alpha_r(&l, d, &mut a, &mut flight), HopdynStatus::Ok);
    }
    assert!((a - 0.3).abs() < 1e-12);
    assert!(!flight);
    let unbounded = HopdynLedger { alpha_r: 1.5, ..l };
    assert_eq!(unsafe { hopdyn_delta_rd(&unbounded, &mut d) }, HopdynStatus::Numerical);
}

#[test]
fn sequence_buffer_protocol() {
    let h = hopdyn_params_default();
    let mut len = 0usize;
    let mut small = [0.0; 2];
    let s = unsafe { hopdyn_hop_sequence(h, 0.0, 1.0, 4, small.as_mut_ptr(), small.len(), &mut len) };
    assert_eq!(s, HopdynStatus::BufferTooSmall);
    assert_eq!(len, 5);
    let mut buf = vec![0.0; len];
    let s = unsafe { hopdyn_hop_sequence(h, 0.0, 1.0, 4, buf.as_mut_ptr(), buf.len(), &mut len) };
    assert_eq!(s, HopdynStatus::Ok);
    assert_eq!(buf[0], 1.0);
    assert!(buf.windows(2).all(|w| w[1] < w[0]));
    unsafe { hopdyn_params_free(h) };
}

#[test]
fn critical_and_stance() {
    let h = hopdyn_params_default();
    let mut a = 0.0;
    let mut k = HopdynCriticalKind::NeverAccumulates;
    let mut o = HopdynStanceOutcome::default();
    unsafe {
        assert_eq!(hopdyn_critical_alpha(h, 1.0, &mut a, &mut k), HopdynStatus::Ok);
        assert_eq!(hopdyn_stance(h, 6.0, 10.0, &mut o), HopdynStatus::Ok);
        assert_eq!(hopdyn_stance(h, 6.0, 80.0, &mut o), HopdynStatus::InvalidInput);
        hopdyn_params_free(h);
    }
    assert_eq!(k, HopdynCriticalKind::Value);
    assert!(a > 0.3 && a < 0.5, "{a}");
    let sum = o.e_vertical + o.e_horizontal + o.e_rotational + o.e_foot_loss;
    assert!((sum - 1.0).abs() < 1e-3);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/hopdyn.h")).unwrap();
    for name in [
        "hopdyn_last_error",
        "hopdyn_version",
        "hopdyn_params_default",
        "hopdyn_params_from_json",
        "hopdyn_params_free",
        "hopdyn_params_with_masses",
        "hopdyn_params_masses",
        "hopdyn_terminal_velocity",
        "hopdyn_delta_rd",
        "hopdyn_required_alpha_r",
        "hopdyn_critical_alpha",
        "hopdyn_hop_sequence",
        "hopdyn_stance",
        "typedef struct HopdynParams HopdynParams",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    let v = unsafe { CStr::from_ptr(hopdyn_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
