use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use gridvolt_ffi::*;

fn fixture(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = gv_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut GvScenario {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { gv_scenario_load(fixture(name).as_ptr(), &mut s) }, GvStatus::Ok);
    s
}

fn problem_of(s: *const GvScenario) -> *mut GvProblem {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { gv_scenario_problem(s, 0, &mut p) }, GvStatus::Ok);
    p
}

/// Tridiagonal Bbus of a uniform chain, row-major.
fn chain_bbus(n: usize, y: f64) -> Vec<f64> {
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        b[i * n + i] = if i + 1 == n { y } else { 2.0 * y };
        if i + 1 < n {
            b[i * n + i + 1] = -y;
            b[(i + 1) * n + i] = -y;
        }
    }
    b
}

fn new_problem(n: usize, gamma: f64, lo: f64, hi: f64) -> (*mut GvProblem, GvStatus) {
    let b = chain_bbus(n, 20.0);
    let w: Vec<f64> = (0..n).map(|j| 20.0 - 0.05 * (j as f64 + 1.0)).collect();
    let mu = vec![1.0; n];
    let (l, h) = (vec![lo; n], vec![hi; n]);
    let mut p = ptr::null_mut();
    let st = unsafe {
        gv_problem_new(n, b.as_ptr(), w.as_ptr(), mu.as_ptr(), gamma, l.as_ptr(), h.as_ptr(), &mut p)
    };
    (p, st)
}

#[test]
fn scenario_solve_matches_reference() {
    let s = load("two_bus.toml");
    assert_eq!(unsafe { gv_scenario_n(s) }, 1);
    assert_eq!(unsafe { gv_scenario_timesteps(s) }, 1);
    let p = problem_of(s);
    let n = unsafe { gv_problem_n(p) };

    let (mut eta, mut l) = (0.0, 0.0);
    let (mut a_max, mut b_max) = (0.0, 0.0);
    unsafe {
        assert_eq!(gv_problem_spectrum(p, &mut eta, &mut l), GvStatus::Ok);
        assert_eq!(gv_problem_step_bounds(p, &mut a_max, &mut b_max), GvStatus::Ok);
    }
    assert!(eta > 0.0 && (eta - l).abs() <= 1e-12 * l);

    let (mut q, mut v, mut lam) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut report = GvSolveReport::default();
    let st = unsafe {
        gv_solve_static(p, ptr::null(), ptr::null(), q.as_mut_ptr(), v.as_mut_ptr(), lam.as_mut_ptr(), n, &mut report)
    };
    assert_eq!(st, GvStatus::Ok);
    assert_eq!(report.alpha, 0.5 * a_max);
    assert_eq!(report.beta, 0.5 * b_max);
    assert!(report.r_v.max(report.r_q).max(report.r_lambda) < 1e-8);

    let (mut rq, mut rv) = (vec![0.0; n], vec![0.0; n]);
    let st = unsafe { gv_reference_solve(p, rq.as_mut_ptr(), rv.as_mut_ptr(), ptr::null_mut(), n) };
    assert_eq!(st, GvStatus::Ok);
    assert!((q[0] - rq[0]).abs() <= 1e-6);
    assert!((v[0] - rv[0]).abs() <= 1e-6);

    let (mut at_opt, mut at_zero) = (0.0, 0.0);
    unsafe {
        assert_eq!(gv_problem_objective(p, rq.as_ptr(), n, &mut at_opt), GvStatus::Ok);
        assert_eq!(gv_problem_objective(p, [0.0].as_ptr(), n, &mut at_zero), GvStatus::Ok);
        gv_problem_free(p);
        gv_scenario_free(s);
    }
    assert!(at_opt <= at_zero);
}

#[test]
fn errors_are_reported() {
    let mut s = ptr::null_mut();
    let missing = CString::new("/nonexistent/scenario.toml").unwrap();
    assert_eq!(unsafe { gv_scenario_load(missing.as_ptr(), &mut s) }, GvStatus::Input);
    assert!(s.is_null());
    assert!(last_error().contains("/nonexistent/scenario.toml"));

    assert_eq!(unsafe { gv_scenario_load(ptr::null(), &mut s) }, GvStatus::InvalidArgument);
    assert_eq!(unsafe { gv_scenario_problem(ptr::null(), 0, ptr::null_mut()) }, GvStatus::InvalidArgument);
    assert_eq!(unsafe { gv_scenario_n(ptr::null()) }, 0);

    let sc = load("two_bus.toml");
    assert!(gv_last_error_message().is_null());
    let p = problem_of(sc);
    let mut q = [0.0; 3];
    let st = unsafe { gv_reference_solve(p, q.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), 3) };
    assert_eq!(st, GvStatus::InvalidArgument);
    assert!(last_error().contains("dimension 1"));
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { gv_scenario_problem(sc, 99, &mut out) }, GvStatus::Input);

    let dir = tempfile::tempdir().unwrap();
    let d = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { gv_simulate(sc, 7, d.as_ptr(), ptr::null_mut()) }, GvStatus::InvalidArgument);
    unsafe {
        gv_problem_free(p);
        gv_scenario_free(sc);
        gv_problem_free(ptr::null_mut());
    }
}

#[test]
fn problem_from_arrays() {
    let (p, st) = new_problem(4, 0.5, -0.3, 0.3);
    assert_eq!(st, GvStatus::Ok);
    assert_eq!(unsafe { gv_problem_n(p) }, 4);
    let (mut eta, mut l) = (0.0, 0.0);
    unsafe { gv_problem_spectrum(p, &mut eta, &mut l) };
    assert!(0.0 < eta && eta < l);

    let mut q = vec![0.0; 4];
    let mut rq = vec![0.0; 4];
    let mut opts = gv_solve_options_default();
    opts.max_iters = 5_000_000;
    unsafe {
        assert_eq!(
            gv_solve_static(p, &opts, ptr::null(), q.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), 4, ptr::null_mut()),
            GvStatus::Ok
        );
        assert_eq!(gv_reference_solve(p, rq.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), 4), GvStatus::Ok);
    }
    for (a, b) in q.iter().zip(&rq) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        assert!((-0.3..=0.3).contains(a));
    }

    opts.max_iters = 10;
    let st = unsafe {
        gv_solve_static(p, &opts, rq.as_ptr(), q.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), 4, ptr::null_mut())
    };
    assert!(matches!(st, GvStatus::Ok | GvStatus::NotConverged));
    opts.max_iters = 3;
    let st = unsafe {
        gv_solve_static(p, &opts, ptr::null(), q.as_mut_ptr(), ptr::null_mut(), ptr::null_mut(), 4, ptr::null_mut())
    };
    assert_eq!(st, GvStatus::NotConverged);
    unsafe { gv_problem_free(p) };
}

#[test]
fn invalid_problems() {
    let (_, st) = new_problem(3, -1.0, -1.0, 1.0);
    assert_eq!(st, GvStatus::Input);
    let (_, st) = new_problem(3, 0.5, 1.0, -1.0);
    assert_eq!(st, GvStatus::Input);

    let b = [1.0, 2.0, 2.0, 1.0];
    let ones = [1.0; 2];
    let mut p = ptr::null_mut();
    let st = unsafe {
        gv_problem_new(2, b.as_ptr(), ones.as_ptr(), ones.as_ptr(), 0.5, ones.as_ptr(), ones.as_ptr(), &mut p)
    };
    assert_ne!(st, GvStatus::Ok);
    assert!(p.is_null());
    assert!(last_error().contains("positive definite"));

    let (p, st) = new_problem(2, 0.0, -1.0, 1.0);
    assert_eq!(st, GvStatus::Ok);
    assert_eq!(unsafe { gv_problem_step_bounds(p, ptr::null_mut(), ptr::null_mut()) }, GvStatus::Input);
    let st = unsafe {
        gv_solve_static(p, ptr::null(), ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), 2, ptr::null_mut())
    };
    assert_eq!(st, GvStatus::Input);
    unsafe { gv_problem_free(p) };
}

#[test]
fn oversized_step_diverges() {
    let (p, st) = new_problem(3, 0.5, f64::NEG_INFINITY, f64::INFINITY);
    assert_eq!(st, GvStatus::Ok);
    let (mut a_max, mut b_max) = (0.0, 0.0);
    unsafe { gv_problem_step_bounds(p, &mut a_max, &mut b_max) };
    let mut opts = gv_solve_options_default();
    opts.alpha = 50.0 * a_max;
    opts.beta = 0.5 * b_max;
    let st = unsafe {
        gv_solve_static(p, &opts, ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), 3, ptr::null_mut())
    };
    assert_eq!(st, GvStatus::Numerical);
    assert!(last_error().contains("diverged"));
    unsafe { gv_problem_free(p) };
}

#[test]
fn simulate_writes_outputs() {
    let s = load("two_bus.toml");
    let dir = tempfile::tempdir().unwrap();
    let mut means = Vec::new();
    for k in [GV_STRATEGY_SCENARIO, GV_STRATEGY_HVC, GV_STRATEGY_DISTRIBUTED_ONLY, GV_STRATEGY_NO_CONTROL] {
        let out = dir.path().join(format!("s{k}"));
        let c = CString::new(out.to_str().unwrap()).unwrap();
        let mut mean = f64::NAN;
        assert_eq!(unsafe { gv_simulate(s, k, c.as_ptr(), &mut mean) }, GvStatus::Ok);
        for f in ["trace.csv", "timesteps.csv", "summary.json"] {
            assert!(out.join(f).is_file(), "{f}");
        }
        assert!(mean.is_finite());
        means.push(mean);
    }
    assert_eq!(means[0], means[1]);
    assert!(means[1] <= means[3]);
    unsafe { gv_scenario_free(s) };
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(gv_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/gridvolt.h")
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "gridvolt.h"

int main(int argc, char **argv) {
    GvScenario *s = NULL;
    if (gv_scenario_load(argv[1], &s) != GV_STATUS_OK) return 10;
    GvProblem *p = NULL;
    if (gv_scenario_problem(s, 0, &p) != GV_STATUS_OK) return 11;
    double q[1], ref[1];
    GvSolveOptions o = gv_solve_options_default();
    GvSolveReport r;
    if (gv_solve_static(p, &o, NULL, q, NULL, NULL, 1, &r) != GV_STATUS_OK) return 12;
    if (gv_reference_solve(p, ref, NULL, NULL, 1) != GV_STATUS_OK) return 13;
    if (gv_scenario_load("/nonexistent.toml", &s) != GV_STATUS_INPUT) return 14;
    if (gv_last_error_message() == NULL) return 15;
    printf("%.9e %.9e %llu\n", q[0], ref[0], (unsigned long long)r.iterations);
    gv_problem_free(p);
    return argc == 2 ? 0 : 16;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    if !have_cc() {
        eprintln!("cc not found; skipping");
        return;
    }
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libgridvolt_ffi.a");
    if !lib.is_file() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let cc = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));

    let scenario = fixture("two_bus.toml");
    let run = Command::new(&bin).arg(scenario.to_str().unwrap()).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let out = String::from_utf8(run.stdout).unwrap();
    let nums: Vec<f64> = out.split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert!((nums[0] - nums[1]).abs() <= 1e-6, "{out}");
    assert!(nums[2] >= 1.0);
}

#[test]
fn header_compiles_as_cpp() {
    if Command::new("c++").arg("--version").output().is_err() {
        eprintln!("c++ not found; skipping");
        return;
    }
    let out = Command::new("c++")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c++"])
        .arg(header())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
