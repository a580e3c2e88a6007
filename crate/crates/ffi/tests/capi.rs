use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use polybesov_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let mut need = 0usize;
    unsafe {
        pb_last_error_message(ptr::null_mut(), 0, &mut need);
        let mut buf = vec![0 as c_char; need];
        assert_eq!(pb_last_error_message(buf.as_mut_ptr(), buf.len(), &mut need), PbStatus::Ok);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn surface_field_and_norms() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(pb_surface_load(c("fichera").as_ptr(), &mut s), PbStatus::Ok);
        let mut n = 0;
        assert_eq!(pb_surface_num_patches(s, &mut n), PbStatus::Ok);
        assert_eq!(n, 24);

        let mut f = ptr::null_mut();
        assert_eq!(pb_field_analyze_model(s, c("const:2").as_ptr(), c("haar").as_ptr(), 3, &mut f), PbStatus::Ok);
        let mut count = 0;
        assert_eq!(pb_field_num_wavelets(f, &mut count), PbStatus::Ok);
        assert_eq!(count, 24 * 3 * (1 + 4 + 16 + 64));
        // constants have no wavelet part, so every n-term error is zero
        let ns = [0usize, 5, 50];
        let mut errs = [1.0; 3];
        assert_eq!(pb_nterm_errors(f, 0.5, 2.0, ns.as_ptr(), 3, errs.as_mut_ptr()), PbStatus::Ok);
        assert_eq!(errs, [0.0; 3]);

        let mut v = 0.0;
        assert_eq!(pb_besov_norm(s, f, 0.5, 2.0, f64::INFINITY, &mut v), PbStatus::Ok);
        assert!(v > 0.0);
        assert_eq!(pb_besov_norm(s, f, 0.0, 1.0, 1.0, &mut v), PbStatus::NotAdmissible);
        assert!(last_error().contains("not admissible"), "{}", last_error());

        pb_field_free(f);
        pb_surface_free(s);
    }
}

#[test]
fn field_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = c(dir.path().join("f.pbc").to_str().unwrap());
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(pb_surface_load(c("cube").as_ptr(), &mut s), PbStatus::Ok);
        let mut f = ptr::null_mut();
        assert_eq!(pb_field_analyze_model(s, c("exp:1,0,0").as_ptr(), c("linear").as_ptr(), 2, &mut f), PbStatus::Ok);
        assert_eq!(pb_field_save(f, path.as_ptr()), PbStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(pb_field_load(path.as_ptr(), &mut g), PbStatus::Ok);
        let (mut a, mut b) = (0.0, 1.0);
        assert_eq!(pb_besov_norm(s, f, 1.0, 2.0, 2.0, &mut a), PbStatus::Ok);
        assert_eq!(pb_besov_norm(s, g, 1.0, 2.0, 2.0, &mut b), PbStatus::Ok);
        assert_eq!(a, b);
        let mut h = ptr::null_mut();
        assert_eq!(pb_field_load(c("/nonexistent/f.pbc").as_ptr(), &mut h), PbStatus::Io);
        assert!(h.is_null());
        pb_field_free(f);
        pb_field_free(g);
        pb_surface_free(s);
    }
}

#[test]
fn rates_and_bad_input() {
    unsafe {
        let mut r = 0.0;
        assert_eq!(pb_predicted_rate(1.0, 2.0, 2.0, 0.0, 2.0, &mut r), PbStatus::Ok);
        assert_eq!(r, 0.5);
        assert_eq!(pb_predicted_rate(1.0, 2.0, 2.0, 0.0, 2.0, ptr::null_mut()), PbStatus::NullPointer);
        let mut s = ptr::null_mut();
        assert_eq!(pb_surface_load(c("/no/such/surface.json").as_ptr(), &mut s), PbStatus::Io);
        assert_eq!(pb_surface_load(c("cube").as_ptr(), &mut s), PbStatus::Ok);
        let mut f = ptr::null_mut();
        assert_eq!(pb_field_analyze_model(s, c("nope:1").as_ptr(), c("haar").as_ptr(), 2, &mut f), PbStatus::InvalidArgument);
        assert!(last_error().contains("nope"));
        pb_surface_free(s);
    }
}

#[test]
fn bem_constant_data() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(pb_surface_load(c("cube").as_ptr(), &mut s), PbStatus::Ok);
        let mut sys = ptr::null_mut();
        assert_eq!(pb_bem_assemble(s, 2, &mut sys), PbStatus::Ok);
        let mut n = 0;
        assert_eq!(pb_bem_len(sys, &mut n), PbStatus::Ok);
        assert_eq!(n, 96);
        let g = vec![1.0; n];
        let mut u = vec![0.0; n];
        let mut res = 1.0;
        assert_eq!(pb_bem_solve(sys, g.as_ptr(), n, u.as_mut_ptr(), &mut res), PbStatus::Ok);
        assert!(res < 1e-10);
        assert!(u.iter().all(|v| (v - 1.0).abs() < 2e-2));
        assert_eq!(pb_bem_solve(sys, g.as_ptr(), n - 1, u.as_mut_ptr(), &mut res), PbStatus::InvalidArgument);
        pb_bem_free(sys);
        pb_surface_free(s);
    }
}

#[test]
fn header_lists_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/polybesov.h")).unwrap();
    for name in ["pb_surface_load", "pb_field_analyze_model", "pb_besov_norm", "pb_nterm_errors", "pb_bem_solve", "PB_STATUS_OK"] {
        assert!(h.contains(name), "{name}");
    }
}

/// Compiles the C smoke program against the header and the shared library, when a C compiler exists.
#[test]
fn c_program_links_and_runs() {
    let Ok(exe) = std::env::current_exe() else { return };
    // target/<profile>/deps/capi-* -> target/<profile>
    let profile_dir: PathBuf = exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libpolybesov_ffi.so");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no shared library or C compiler");
        return;
    }
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg("-L")
        .arg(&profile_dir)
        .arg("-lpolybesov_ffi")
        .arg("-lm")
        .arg(format!("-Wl,-rpath,{}", profile_dir.display()))
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("patches 6"));
}
