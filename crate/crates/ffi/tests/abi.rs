use std::ffi::{CStr, CString};
use std::ptr;

use irrigation_ffi::*;

fn last_error() -> String {
    let p = irr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn json_round_trip_and_energy() {
    unsafe {
        let mut flow = ptr::null_mut();
        assert_eq!(irr_flow_square_to_dirac(2, &mut flow), IrrStatus::Ok);
        let (mut nodes, mut edges) = (0, 0);
        assert_eq!(irr_flow_size(flow, &mut nodes, &mut edges), IrrStatus::Ok);
        assert!(nodes > 16 && edges > 0);

        let mut json = ptr::null_mut();
        assert_eq!(irr_flow_to_json(flow, &mut json), IrrStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(irr_flow_from_json(json, &mut back), IrrStatus::Ok);
        irr_string_free(json);

        let (mut a, mut b) = (IrrEnergy::default(), IrrEnergy::default());
        assert_eq!(irr_flow_energy(flow, &mut a), IrrStatus::Ok);
        assert_eq!(irr_flow_energy(back, &mut b), IrrStatus::Ok);
        assert_eq!(a.internal, b.internal);
        assert!((a.internal - a.perimeter - a.kinetic).abs() < 1e-12);

        let mut bad = usize::MAX;
        assert_eq!(irr_flow_validate(back, &mut bad), IrrStatus::Ok);
        assert_eq!(bad, 0);
        irr_flow_free(flow);
        irr_flow_free(back);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut flow = ptr::null_mut();
        let junk = CString::new("{not json").unwrap();
        assert_eq!(irr_flow_from_json(junk.as_ptr(), &mut flow), IrrStatus::Malformed);
        assert!(!last_error().is_empty());
        assert!(flow.is_null());

        assert_eq!(irr_flow_from_json(ptr::null(), &mut flow), IrrStatus::NullPointer);
        let mut e = IrrEnergy::default();
        assert_eq!(irr_flow_energy(ptr::null(), &mut e), IrrStatus::NullPointer);
        assert_eq!(irr_flow_v(1.0, -1.0, 2.0, 0.1, &mut flow), IrrStatus::Malformed);

        let bytes = [0xffu8, 0xfe, 0];
        assert_eq!(
            irr_flow_from_json(bytes.as_ptr().cast(), &mut flow),
            IrrStatus::InvalidUtf8
        );
        irr_flow_free(ptr::null_mut());
        irr_string_free(ptr::null_mut());
    }
}

#[test]
fn optimized_v_is_equipartitioned() {
    unsafe {
        let mut v = ptr::null_mut();
        assert_eq!(irr_flow_v(0.5, 0.3, 1.0, 0.1, &mut v), IrrStatus::Ok);
        let mut opts = irr_optimize_options_default();
        opts.fix_boundary = true;
        opts.fix_root = true;
        opts.boundary_term = false;
        opts.max_iters = 2000;
        opts.grad_tol = 1e-9;
        let mut out = ptr::null_mut();
        let s = irr_optimize(v, &opts, &mut out);
        assert!(matches!(s, IrrStatus::Ok | IrrStatus::NotConverged));
        assert!(!out.is_null());
        let (mut e0, mut e1) = (IrrEnergy::default(), IrrEnergy::default());
        irr_flow_energy(v, &mut e0);
        irr_flow_energy(out, &mut e1);
        assert!(e1.internal <= e0.internal);
        let mut lam = f64::NAN;
        assert_eq!(irr_flow_max_equipartition(out, &mut lam), IrrStatus::Ok);
        assert!(lam.abs() < 1e-6, "{lam}");
        irr_flow_free(v);
        irr_flow_free(out);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(irr_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/irrigation.h")).unwrap();
    for f in [
        "irr_flow_from_json",
        "irr_flow_to_json",
        "irr_flow_free",
        "irr_string_free",
        "irr_flow_energy",
        "irr_optimize",
        "irr_last_error",
        "typedef struct IrrFlow IrrFlow",
    ] {
        assert!(h.contains(f), "{f}");
    }
}
