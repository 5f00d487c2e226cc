use std::ffi::{c_char, CStr};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tns_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(tns_last_error()) }.to_string_lossy().into_owned()
}

fn config(chi: usize) -> *mut TnsConfigHandle {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { tns_config_new(chi, &mut cfg) }, TnsStatus::Ok);
    cfg
}

#[test]
fn free_energy_at_infinite_temperature() {
    let cfg = config(2);
    let mut out = TnsFreeEnergy::default();
    let st = unsafe { tns_free_energy(cfg, 2, 4, 0.0, 0.0, &mut out) };
    assert_eq!(st, TnsStatus::Ok, "{}", last_error());
    assert!((out.log_z_per_site - 2f64.ln()).abs() < 1e-10);
    assert!((out.log_z - 256.0 * 2f64.ln()).abs() < 1e-8);
    unsafe { tns_config_free(cfg) };
}

#[test]
fn free_energy_approaches_onsager() {
    let cfg = config(4);
    let beta = 0.35;
    let mut out = TnsFreeEnergy::default();
    assert_eq!(unsafe { tns_free_energy(cfg, 2, 6, beta, 0.0, &mut out) }, TnsStatus::Ok);
    let want = tns_onsager_log_z_per_site(beta);
    assert!(((out.log_z_per_site - want) / want).abs() < 1e-5);
    unsafe { tns_config_free(cfg) };
}

#[test]
fn observables_have_physical_signs() {
    let cfg = config(4);
    unsafe { assert_eq!(tns_config_set_variant(cfg, TnsVariant::Modified as i32), TnsStatus::Ok) };
    let (mut u, mut m) = (0.0, 0.0);
    let st = unsafe { tns_observables(cfg, 2, 4, 0.6, 0.05, &mut u, &mut m) };
    assert_eq!(st, TnsStatus::Ok, "{}", last_error());
    assert!(u < -1.8 && u > -2.0, "{u}");
    // the field must beat the finite size, βBN ≫ 1
    assert!(m > 0.9, "{m}");
    // outputs are optional
    assert_eq!(unsafe { tns_observables(cfg, 2, 3, 0.6, 1e-4, ptr::null_mut(), &mut m) }, TnsStatus::Ok);
    unsafe { tns_config_free(cfg) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { tns_config_new(0, &mut cfg) }, TnsStatus::InvalidArgument);
    assert!(cfg.is_null());
    assert!(last_error().contains("chi"));

    let cfg = config(2);
    assert_eq!(unsafe { tns_config_set_variant(cfg, 7) }, TnsStatus::InvalidArgument);
    assert_eq!(unsafe { tns_config_set_variant(ptr::null_mut(), 0) }, TnsStatus::NullPointer);
    let mut out = TnsFreeEnergy::default();
    assert_eq!(unsafe { tns_free_energy(cfg, 5, 2, 0.3, 0.0, &mut out) }, TnsStatus::InvalidArgument);
    assert_eq!(unsafe { tns_free_energy(cfg, 2, 2, 0.3, 0.0, ptr::null_mut()) }, TnsStatus::NullPointer);
    assert_eq!(unsafe { tns_config_set_boundary_rank(cfg, 0) }, TnsStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe {
        tns_config_free(cfg);
        tns_config_free(ptr::null_mut());
        tns_tensor_free(ptr::null_mut());
    }
}

fn tensor(shape: &[usize], data: &[f64], legs: &[&CStr]) -> *mut TnsTensorHandle {
    let names: Vec<*const c_char> = legs.iter().map(|s| s.as_ptr()).collect();
    let mut t = ptr::null_mut();
    let st = unsafe { tns_tensor_new(shape.len(), shape.as_ptr(), data.as_ptr(), names.as_ptr(), &mut t) };
    assert_eq!(st, TnsStatus::Ok, "{}", last_error());
    t
}

#[test]
fn tensor_contraction_round_trip() {
    // (2x3) · (3x2) matrix product over the shared leg
    let a = tensor(&[2, 3], &[1., 2., 3., 4., 5., 6.], &[c"i", c"k"]);
    let b = tensor(&[3, 2], &[1., 0., 0., 1., 1., 1.], &[c"k", c"j"]);
    let (la, lb) = ([c"k".as_ptr()], [c"k".as_ptr()]);
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { tns_contract(a, b, 1, la.as_ptr(), lb.as_ptr(), &mut c) }, TnsStatus::Ok);
    unsafe {
        assert_eq!(tns_tensor_rank(c), 2);
        assert_eq!(tns_tensor_len(c), 4);
        let mut shape = [0usize; 2];
        assert_eq!(tns_tensor_shape(c, shape.as_mut_ptr(), 2), TnsStatus::Ok);
        assert_eq!(shape, [2, 2]);
        let mut data = [0.0; 4];
        assert_eq!(tns_tensor_data(c, data.as_mut_ptr(), 4), TnsStatus::Ok);
        assert_eq!(data, [4., 5., 10., 11.]);
        assert_eq!(tns_tensor_data(c, data.as_mut_ptr(), 3), TnsStatus::InvalidArgument);
        assert_eq!(tns_tensor_rank(ptr::null()), 0);
    }
    // mismatched leg dimensions
    let bad = [c"i".as_ptr()];
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { tns_contract(a, b, 1, bad.as_ptr(), lb.as_ptr(), &mut d) }, TnsStatus::ShapeMismatch);
    assert!(d.is_null());
    unsafe {
        tns_tensor_free(a);
        tns_tensor_free(b);
        tns_tensor_free(c);
    }
}

#[test]
fn duplicate_leg_labels_are_rejected() {
    let names = [c"a".as_ptr(), c"a".as_ptr()];
    let mut t = ptr::null_mut();
    let st = unsafe { tns_tensor_new(2, [2usize, 2].as_ptr(), [0.0; 4].as_ptr(), names.as_ptr(), &mut t) };
    assert_eq!(st, TnsStatus::InvalidArgument);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(tns_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tns.h")
}

#[test]
fn header_declares_the_interface() {
    let h = std::fs::read_to_string(header()).unwrap();
    for sym in [
        "tns_last_error",
        "tns_config_new",
        "tns_free_energy",
        "tns_observables",
        "tns_tensor_new",
        "tns_contract",
        "TNS_STATUS_SHAPE_MISMATCH",
        "TNS_VARIANT_MODIFIED",
        "typedef struct TnsConfigHandle TnsConfigHandle;",
    ] {
        assert!(h.contains(sym), "header lacks {sym}");
    }
}

/// Compiles and runs a small C program against the header and the static
/// library. Skipped when no C compiler or no static archive is around.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(Path::parent).unwrap();
    let archive = lib_dir.join("libtns_ffi.a");
    if !archive.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no archive at {} or no cc", archive.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <math.h>
#include <stdio.h>
#include "tns.h"
int main(void) {
    TnsConfigHandle *cfg = NULL;
    if (tns_config_new(2, &cfg) != TNS_STATUS_OK) return 2;
    TnsFreeEnergy r;
    if (tns_free_energy(cfg, 2, 3, 0.0, 0.0, &r) != TNS_STATUS_OK) return 3;
    tns_config_free(cfg);
    if (tns_config_new(0, &cfg) != TNS_STATUS_INVALID_ARGUMENT) return 4;
    printf("%.12f %s\n", r.log_z_per_site, tns_last_error());
    return fabs(r.log_z_per_site - log(2.0)) < 1e-10 ? 0 : 5;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("main");
    let cc = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&archive)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stdout));
}
