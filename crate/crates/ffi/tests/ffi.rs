use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use multiflock_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mf_last_error()) }.to_string_lossy().into_owned()
}

fn preset(name: &str) -> *mut MfScenario {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { mf_scenario_from_preset(c(name).as_ptr(), &mut s) }, MfStatus::Ok);
    s
}

#[test]
fn preset_state_round_trip() {
    let s = preset("two_islands");
    let mut st = ptr::null_mut();
    unsafe {
        assert_eq!(mf_state_initial(s, &mut st), MfStatus::Ok);
        let (mut dim, mut flocks, mut t) = (0usize, 0usize, -1.0f64);
        assert_eq!(mf_state_info(st, &mut dim, &mut flocks, &mut t), MfStatus::Ok);
        assert_eq!((dim, flocks, t), (2, 2, 0.0));
        let mut n = 0usize;
        assert_eq!(mf_state_flock_len(st, 1, &mut n), MfStatus::Ok);
        assert_eq!(n, 8);
        let mut v0 = vec![0.0; dim * n];
        assert_eq!(mf_state_velocities(st, 1, v0.as_mut_ptr(), v0.len()), MfStatus::Ok);
        assert_eq!(mf_state_advance(st, s, 1.0), MfStatus::Ok);
        assert_eq!(mf_state_info(st, &mut dim, &mut flocks, &mut t), MfStatus::Ok);
        assert!((t - 1.0).abs() < 1e-12);
        let mut v1 = vec![0.0; dim * n];
        assert_eq!(mf_state_velocities(st, 1, v1.as_mut_ptr(), v1.len()), MfStatus::Ok);
        assert_ne!(v0, v1);
        let mut x = vec![0.0; dim * n];
        assert_eq!(mf_state_positions(st, 1, x.as_mut_ptr(), x.len()), MfStatus::Ok);
        assert!(x.iter().all(|v| v.is_finite()));
        mf_state_free(st);
        mf_scenario_free(s);
    }
}

#[test]
fn errors_are_reported() {
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(mf_scenario_from_preset(c("nope").as_ptr(), &mut s), MfStatus::Config);
        assert!(last_error().contains("unknown preset"));
        assert!(s.is_null());
        assert_eq!(mf_scenario_from_toml(c("name = 1").as_ptr(), &mut s), MfStatus::Config);
        assert_eq!(mf_scenario_from_toml(ptr::null(), &mut s), MfStatus::NullPointer);
        assert_eq!(mf_scenario_from_preset(c("two_islands").as_ptr(), ptr::null_mut()), MfStatus::NullPointer);

        let s = preset("two_islands");
        let mut n = 0usize;
        assert_eq!(mf_state_flock_len(ptr::null(), 0, &mut n), MfStatus::NullPointer);
        let mut st = ptr::null_mut();
        assert_eq!(mf_state_initial(s, &mut st), MfStatus::Ok);
        assert_eq!(mf_state_flock_len(st, 7, &mut n), MfStatus::OutOfRange);
        let mut small = [0.0; 3];
        assert_eq!(mf_state_positions(st, 0, small.as_mut_ptr(), small.len()), MfStatus::OutOfRange);
        assert_eq!(mf_state_advance(st, s, -1.0), MfStatus::OutOfRange);
        assert_eq!(mf_scenario_set(s, c("coupling.epsilon").as_ptr(), c("-1").as_ptr()), MfStatus::Validation);
        assert!(last_error().contains("epsilon"));
        mf_state_free(st);

        let h = preset("hydro_global");
        assert_eq!(mf_state_initial(h, &mut st), MfStatus::Unsupported);
        mf_scenario_free(h);
        mf_scenario_free(s);
        mf_scenario_free(ptr::null_mut());
        mf_state_free(ptr::null_mut());
    }
}

#[test]
fn set_and_serialize() {
    let s = preset("two_islands");
    unsafe {
        assert_eq!(mf_scenario_set(s, c("coupling.epsilon").as_ptr(), c("0.25").as_ptr()), MfStatus::Ok);
        assert_eq!(last_error(), "");
        let mut text = ptr::null_mut();
        assert_eq!(mf_scenario_to_toml(s, &mut text), MfStatus::Ok);
        let body = CStr::from_ptr(text).to_str().unwrap().to_string();
        mf_string_free(text);
        assert!(body.contains("epsilon = 0.25"));
        let mut again = ptr::null_mut();
        assert_eq!(mf_scenario_from_toml(c(&body).as_ptr(), &mut again), MfStatus::Ok);
        mf_scenario_free(again);
        mf_scenario_free(s);
        assert!(!CStr::from_ptr(mf_version()).to_bytes().is_empty());
    }
}

#[test]
fn run_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let s = preset("two_islands");
    unsafe {
        assert_eq!(mf_scenario_set(s, c("integrator.t_end").as_ptr(), c("2.0").as_ptr()), MfStatus::Ok);
        let mut code = -1;
        let path = c(dir.path().to_str().unwrap());
        assert_eq!(mf_run(s, path.as_ptr(), 1, &mut code), MfStatus::Ok);
        assert_eq!(code, 0);
        mf_scenario_free(s);
    }
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/multiflock.h")).unwrap();
    for name in [
        "MF_STATUS_OK",
        "typedef struct MfScenario MfScenario",
        "typedef struct MfState MfState",
        "mf_last_error",
        "mf_scenario_from_toml",
        "mf_scenario_from_preset",
        "mf_scenario_set",
        "mf_run",
        "mf_state_advance",
        "mf_state_positions",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Compiles and links a small C program against the static library when a C
/// compiler is available.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else { return };
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libmultiflock_ffi.a");
    if !lib.exists() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "multiflock.h"
int main(void) {
    MfScenario *s = NULL;
    MfState *st = NULL;
    size_t dim = 0, flocks = 0;
    double t = 0.0;
    if (mf_scenario_from_preset("two_islands", &s) != MF_STATUS_OK) return 2;
    if (mf_state_initial(s, &st) != MF_STATUS_OK) return 3;
    if (mf_state_advance(st, s, 0.5) != MF_STATUS_OK) return 4;
    if (mf_state_info(st, &dim, &flocks, &t) != MF_STATUS_OK) return 5;
    if (mf_scenario_from_preset("missing", &s) != MF_STATUS_CONFIG) return 6;
    printf("%zu %zu %.3f\n", dim, flocks, t);
    mf_state_free(st);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "2 2 0.500");
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
