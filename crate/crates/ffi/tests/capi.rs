use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use relearn_ffi::*;

const SCALAR: [f64; 4] = [0.5, 1.0, 1.0, 1.0];

fn last_error() -> String {
    let p = relearn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn scalar_riccati_through_the_c_abi() {
    let [a, b, q, r] = SCALAR;
    let (mut p, mut k) = (0.0, 0.0);
    let s = unsafe { relearn_dare(1, 1, &a, &b, &q, &r, &mut p, &mut k) };
    assert_eq!(s, RelearnStatus::Ok);
    let root = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
    assert!((p - root).abs() < 1e-9, "{p}");
    assert!((k + 0.265564).abs() < 1e-6, "{k}");

    let mut j = 0.0;
    let mut g = 1.0;
    unsafe {
        assert_eq!(relearn_lqr_cost(1, 1, &a, &b, &q, &r, &k, &mut j), RelearnStatus::Ok);
        assert_eq!(relearn_lqr_gradient(1, 1, &a, &b, &q, &r, &k, &mut g), RelearnStatus::Ok);
    }
    assert!((j - 0.5 * p).abs() < 1e-9);
    assert!(g.abs() < 1e-9);
}

#[test]
fn row_major_layout() {
    // A = [[0.9, 0.2], [0, 0.8]], B = [[0], [1]]
    let a = [0.9, 0.2, 0.0, 0.8];
    let b = [0.0, 1.0];
    let q = [1.0, 0.0, 0.0, 1.0];
    let r = [1.0];
    let mut p = [0.0; 4];
    let mut k = [0.0; 2];
    let s = unsafe { relearn_dare(2, 1, a.as_ptr(), b.as_ptr(), q.as_ptr(), r.as_ptr(), p.as_mut_ptr(), k.as_mut_ptr()) };
    assert_eq!(s, RelearnStatus::Ok);
    assert!((p[1] - p[2]).abs() < 1e-12);
    // closed loop A + B K must be Schur
    let acl = [0.9, 0.2, k[0], 0.8 + k[1]];
    let tr = acl[0] + acl[3];
    let det = acl[0] * acl[3] - acl[1] * acl[2];
    let disc = tr * tr - 4.0 * det;
    let rho = if disc >= 0.0 {
        ((tr.abs() + disc.sqrt()) / 2.0).abs()
    } else {
        det.sqrt()
    };
    assert!(rho < 1.0, "{rho}");
}

#[test]
fn errors_are_reported() {
    let [a, b, q, r] = SCALAR;
    let mut j = 0.0;
    let k = 2.0; // 0.5 + 2 is unstable
    let s = unsafe { relearn_lqr_cost(1, 1, &a, &b, &q, &r, &k, &mut j) };
    assert_eq!(s, RelearnStatus::NotStabilizing);
    assert!(last_error().contains("not stabilizing"));

    let s = unsafe { relearn_lqr_cost(1, 1, ptr::null(), &b, &q, &r, &k, &mut j) };
    assert_eq!(s, RelearnStatus::NullPointer);

    let neg = -1.0;
    let (mut p, mut kk) = (0.0, 0.0);
    let s = unsafe { relearn_dare(1, 1, &a, &b, &q, &neg, &mut p, &mut kk) };
    assert_eq!(s, RelearnStatus::InvalidArgument);

    let mut exp = ptr::null_mut();
    let bad = CString::new("plant = 1").unwrap();
    let s = unsafe { relearn_experiment_from_toml(bad.as_ptr(), &mut exp) };
    assert_eq!(s, RelearnStatus::Config);
    assert!(exp.is_null());
    let name = CString::new("nope").unwrap();
    assert_eq!(unsafe { relearn_experiment_bundled(name.as_ptr(), 10, &mut exp) }, RelearnStatus::Config);
}

#[test]
fn experiment_handles() {
    let name = CString::new("aircraft_static").unwrap();
    let mut exp = ptr::null_mut();
    assert_eq!(unsafe { relearn_experiment_bundled(name.as_ptr(), 500, &mut exp) }, RelearnStatus::Ok);
    let (mut n, mut m) = (0, 0);
    assert_eq!(unsafe { relearn_experiment_dims(exp, &mut n, &mut m) }, RelearnStatus::Ok);
    assert_eq!((n, m), (4, 2));

    let mut buf = [0 as std::ffi::c_char; 65];
    assert_eq!(unsafe { relearn_experiment_hash(exp, buf.as_mut_ptr(), 65) }, RelearnStatus::Ok);
    let hash = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert_eq!(hash.len(), 64);
    assert_eq!(unsafe { relearn_experiment_hash(exp, buf.as_mut_ptr(), 10) }, RelearnStatus::InvalidArgument);

    let mut traj = ptr::null_mut();
    assert_eq!(unsafe { relearn_experiment_run(exp, false, &mut traj) }, RelearnStatus::Ok);
    assert_eq!(unsafe { relearn_trajectory_len(traj) }, 500);

    let mut data = ptr::null();
    let mut len = 0;
    unsafe {
        assert_eq!(relearn_trajectory_series(traj, RelearnSeries::RhoTrue, &mut data, &mut len), RelearnStatus::Ok);
        let rho = std::slice::from_raw_parts(data, len);
        assert!(rho.iter().all(|&v| v < 1.0));
        assert_eq!(relearn_trajectory_states(traj, &mut data, &mut len), RelearnStatus::Ok);
        assert_eq!(len, 500 * 4);
    }

    let json = unsafe { relearn_trajectory_summary_json(traj) };
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { relearn_string_free(json) };
    assert!(text.contains(&hash));

    // drifting run on a config without drift is a configuration error
    let mut t2 = ptr::null_mut();
    assert_eq!(unsafe { relearn_experiment_run(exp, true, &mut t2) }, RelearnStatus::Config);
    assert!(t2.is_null());

    unsafe {
        relearn_trajectory_free(traj);
        relearn_experiment_free(exp);
        relearn_trajectory_free(ptr::null_mut());
        relearn_experiment_free(ptr::null_mut());
    }
    assert_eq!(unsafe { relearn_trajectory_len(ptr::null()) }, 0);
}

#[test]
fn divergent_run_keeps_partial_trajectory() {
    let text = relearn::config::AIRCRAFT_STATIC.replace("horizon = 300000", "horizon = 1000")
        + "\n";
    let mut cfg = relearn::config::ExperimentConfig::from_toml(&text).unwrap();
    cfg.algo.blowup = 1.0;
    let toml = CString::new(cfg.to_toml().unwrap()).unwrap();
    let mut exp = ptr::null_mut();
    assert_eq!(unsafe { relearn_experiment_from_toml(toml.as_ptr(), &mut exp) }, RelearnStatus::Ok);
    let mut traj = ptr::null_mut();
    assert_eq!(unsafe { relearn_experiment_run(exp, false, &mut traj) }, RelearnStatus::Divergence);
    assert!(!traj.is_null());
    assert_eq!(unsafe { relearn_trajectory_len(traj) }, 0);
    assert!(last_error().contains("diverged"));
    unsafe {
        relearn_trajectory_free(traj);
        relearn_experiment_free(exp);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(relearn_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/relearn.h")
}

#[test]
fn generated_header_declares_the_api() {
    let h = std::fs::read_to_string(header()).unwrap();
    for sym in [
        "relearn_dare",
        "relearn_lqr_cost",
        "relearn_lqr_gradient",
        "relearn_experiment_from_toml",
        "relearn_experiment_run",
        "relearn_trajectory_series",
        "relearn_trajectory_free",
        "typedef struct RelearnExperiment RelearnExperiment;",
        "RELEARN_STATUS_DIVERGENCE = 7",
    ] {
        assert!(h.contains(sym), "missing {sym}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler found; header compile check not run");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"relearn.h\"\nint main(void) { double p, k, a = 0.5, b = 1, q = 1, r = 1;\n\
         return relearn_dare(1, 1, &a, &b, &q, &r, &p, &k) == RELEARN_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
