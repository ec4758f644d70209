//! Binary-level contracts: point-file fidelity, parse diagnostics with
//! line numbers, and the exit-code convention (0 success, 1 usage or
//! file problems, 2 numerical breakdown).

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cfpnp::points::{PointSet2D, PointSet3D};
use cfpnp_cli::pointio::{read_points2d, read_points3d, write_points2d, write_points3d};
use nalgebra::{Vector2, Vector3};
use tempfile::tempdir;

fn cfpnp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfpnp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn point_files_round_trip_every_bit() {
    let dir = tempdir().expect("tempdir");
    // Values chosen to stress the writer: non-terminating binary
    // fractions, extreme magnitudes, subnormals, and a signed zero.
    let awkward = [
        1.0 / 3.0,
        -2.0 / 7.0,
        1.234567890123456e300,
        -9.87654321e-300,
        5e-324,
        -0.0,
        std::f64::consts::PI,
        6.02214076e23,
        -1.7976931348623157e308,
    ];
    let mut p3 = Vec::new();
    let mut p2 = Vec::new();
    for (i, &v) in awkward.iter().enumerate() {
        let w = awkward[(i + 1) % awkward.len()];
        let u = awkward[(i + 2) % awkward.len()];
        p3.push(Vector3::new(v, w, u));
        p2.push(Vector2::new(v, w));
    }
    let labels: Vec<i64> = (0..p3.len() as i64).map(|i| i * 7 - 3).collect();
    let labeled = PointSet3D::with_labels(p3.clone(), labels.clone()).expect("labels");
    let plain = PointSet3D::new(p3);
    let flat = PointSet2D::new(p2);

    let f3l = dir.path().join("labeled.txt");
    let f3 = dir.path().join("plain.txt");
    let f2 = dir.path().join("flat.txt");
    write_points3d(&f3l, &labeled, "round trip").expect("write");
    write_points3d(&f3, &plain, "round trip").expect("write");
    write_points2d(&f2, &flat, "round trip").expect("write");

    let back3l = read_points3d(&f3l).expect("read");
    let back3 = read_points3d(&f3).expect("read");
    let back2 = read_points2d(&f2).expect("read");

    assert_eq!(back3l.labels.as_deref(), Some(labels.as_slice()));
    assert!(back3.labels.is_none());
    for (a, b) in labeled.points.iter().zip(&back3l.points) {
        for k in 0..3 {
            assert_eq!(a[k].to_bits(), b[k].to_bits(), "{a} vs {b}");
        }
    }
    for (a, b) in flat.points.iter().zip(&back2.points) {
        assert_eq!(a.x.to_bits(), b.x.to_bits());
        assert_eq!(a.y.to_bits(), b.y.to_bits());
    }
}

#[test]
fn parse_errors_point_at_the_offending_line() {
    let dir = tempdir().expect("tempdir");
    let path = dir.path().join("broken.txt");

    // Comments and blank lines still count toward line numbers.
    fs::write(&path, "# header\n\n1.0 2.0 10.0\n1.0 oops 11.0\n").expect("write");
    let err = read_points3d(&path).expect_err("bad token").to_string();
    assert!(err.contains("line 4"), "{err}");
    assert!(err.contains("oops"), "{err}");

    fs::write(&path, "1.0 2.0 10.0\n3.0 4.0\n").expect("write");
    let err = read_points3d(&path).expect_err("short row").to_string();
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("got 2"), "{err}");

    fs::write(&path, "1.0 2.0 10.0 1.5\n").expect("write");
    let err = read_points3d(&path).expect_err("fractional label").to_string();
    assert!(err.contains("line 1"), "{err}");

    fs::write(&path, "100.0 100.0\n# fine\n200.0 200.0 300.0\n").expect("write");
    let err = read_points2d(&path).expect_err("wide row").to_string();
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn exit_codes_separate_usage_from_breakdown() {
    let dir = tempdir().expect("tempdir");
    let targets = dir.path().join("targets.txt");
    fs::write(&targets, "100.0 100.0\n200.0 200.0\n").expect("write");

    // Missing required argument: clap reports it on stderr, code 1.
    let out = cfpnp(dir.path(), &["register", "--source", "x.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("--targets"), "{}", stderr_of(&out));

    let out = cfpnp(dir.path(), &["nosuchcommand"]);
    assert_eq!(out.status.code(), Some(1));

    let out = cfpnp(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));

    // Unreadable and unparseable files: code 1, message names the spot.
    let out = cfpnp(
        dir.path(),
        &["register", "--source", "absent.txt", "--targets", "targets.txt"],
    );
    assert_eq!(out.status.code(), Some(1));

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "# header\n1.0 2.0 10.0\n1.0 oops 11.0\n").expect("write");
    let out =
        cfpnp(dir.path(), &["register", "--source", "bad.txt", "--targets", "targets.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("line 3"), "{}", stderr_of(&out));

    // Geometry the solver cannot start from: code 2.
    let behind = dir.path().join("behind.txt");
    fs::write(&behind, "1.0 2.0 -5.0\n-1.0 0.5 -6.0\n0.3 0.2 -4.0\n").expect("write");
    let out = cfpnp(
        dir.path(),
        &["register", "--source", "behind.txt", "--targets", "targets.txt"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("behind the camera"), "{}", stderr_of(&out));
}

#[test]
fn register_reproduces_generated_scene() {
    let dir = tempdir().expect("tempdir");
    let out = cfpnp(
        dir.path(),
        &["gen-scene", "--kind", "square", "--points", "8", "--out-dir", "."],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    for name in ["scene.json", "source.txt", "targets.txt"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }

    // The generated scene stores its own ground truth, so the register
    // report carries exact pose errors.
    let out = cfpnp(
        dir.path(),
        &["register", "--scene", "scene.json", "--out-dir", "reg-scene"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("reg-scene/result.json")).expect("report"),
    )
    .expect("json");
    let metrics = &report["metrics"];
    assert!(metrics["rotation_error_deg"].as_f64().expect("angle") < 1e-3);
    assert!(metrics["translation_error"].as_f64().expect("dist") < 1e-3);
    assert!(metrics["median_tre"].as_f64().expect("tre") < 1e-3);
    assert!(dir.path().join("reg-scene/trace.csv").exists());

    // The text files alone carry enough precision for the same result.
    let out = cfpnp(
        dir.path(),
        &[
            "register",
            "--source",
            "source.txt",
            "--targets",
            "targets.txt",
            "--out-dir",
            "reg-files",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("reg-files/result.json")).expect("report"),
    )
    .expect("json");
    assert!(report["metrics"]["median_tre"].as_f64().expect("tre") < 1e-3);
    assert!(report["metrics"]["rotation_error_deg"].is_null());
}
