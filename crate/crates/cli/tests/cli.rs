use std::path::Path;
use std::process::{Command, Output};

use qattn_cli::RunRecord;
use qattn_core::{generate, Instance, InstanceSpec};

fn qattn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qattn"))
        .args(args)
        .current_dir(dir)
        .env("QATTN_FIXED_CLOCK", "1")
        .output()
        .unwrap()
}

fn run(dir: &Path, inst: &str, method: &str) -> RunRecord {
    let out = qattn(dir, &["run", inst, "--method", method, "--seed", "1"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn generate_run_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = qattn(
        dir.path(),
        &[
            "generate", "--n", "256", "--k", "4", "--eta", "0.01", "--seed", "7", "--out",
            "inst.bin",
        ],
    );
    assert!(out.status.success());
    assert!(dir.path().join("inst.bin").exists());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["is_good"], true);

    let brute = run(dir.path(), "inst.bin", "brute");
    let err = brute.error.unwrap();
    assert!(err.lhs_no_v <= 3.0 * 0.01);
    assert_eq!(brute.support_match, Some(true));

    let analytic = run(dir.path(), "inst.bin", "grover-analytic");
    assert_eq!(analytic.support_match, Some(true));

    let a = run(dir.path(), "inst.bin", "hsr");
    let b = run(dir.path(), "inst.bin", "hsr");
    assert_eq!(a.checksum, b.checksum);
    assert_eq!(a.support_match, Some(true));

    let out = qattn(dir.path(), &["verify", "inst.bin"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text
        .lines()
        .filter(|l| l.starts_with("PASS"))
        .any(|l| l.contains("P5")));
    assert!(!text.contains("FAIL"));
    assert!(text.ends_with("RESULT pass\n"));
}

#[test]
fn eta_zero_verifies_with_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qattn(
        dir.path(),
        &[
            "generate", "--n", "64", "--k", "3", "--eta", "0", "--out", "z.bin",
        ],
    );
    assert!(out.status.success());
    let out = qattn(dir.path(), &["verify", "z.bin"]);
    assert_eq!(out.status.code(), Some(0));
    let rec = run(dir.path(), "z.bin", "brute");
    let err = rec.error.unwrap();
    assert_eq!(
        (err.lhs_no_v, err.lhs_with_v, err.entry_err),
        (0.0, 0.0, 0.0)
    );
}

#[test]
fn verify_refuses_a_bad_instance() {
    let dir = tempfile::tempdir().unwrap();
    let spec = InstanceSpec::gram(32, 2, 0.01, 3);
    let mut inst = generate(&spec).unwrap();
    let j = (0..32).find(|j| !inst.truth.rows[0].contains(j)).unwrap();
    inst.q.set(0, j, -2.0 * spec.eta).unwrap();
    let inst = Instance::from_bytes(&inst.to_bytes().unwrap()).unwrap();
    inst.save(dir.path().join("bad.bin")).unwrap();

    let out = qattn(dir.path(), &["verify", "bad.bin"]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("eta"), "{text}");
    assert!(text.starts_with("REFUSED"), "{text}");
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["generate", "--n", "1", "--out", "x.bin"],
        vec!["generate", "--tau", "0.1", "--n", "256", "--out", "x.bin"],
        vec!["run", "missing.bin", "--method", "brute"],
        vec!["frobnicate"],
    ] {
        assert_eq!(qattn(dir.path(), &args).status.code(), Some(1), "{args:?}");
    }
    let out = qattn(dir.path(), &["generate", "--n", "16", "--out", "x.bin"]);
    assert!(out.status.success());
    assert_eq!(
        qattn(dir.path(), &["run", "x.bin", "--method", "magic"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn bench_csv_has_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = qattn(
        dir.path(),
        &[
            "bench",
            "--grid",
            "n=2^6..2^8;k=4;d=8;method=brute,sparse",
            "--seed",
            "2",
        ],
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("n,k,d,method,seed,oracle_calls,flops,wall_ms,support_match")
    );
    assert_eq!(
        text.lines().filter(|l| !l.starts_with('#')).count(),
        1 + 3 * 2
    );
    assert!(text.contains("# summary"));
}
