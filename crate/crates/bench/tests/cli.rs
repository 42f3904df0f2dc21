use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmhead-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn check_passes_on_small_instance() {
    let out = bench(&["check", "--dims", "2x3x4x5", "--seed", "42"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).lines().last() == Some("PASS"));
}

#[test]
fn check_single_tile_config() {
    let out = bench(&[
        "check",
        "--dims",
        "3x4x4x9",
        "--tile",
        "4x2",
        "--threads",
        "2",
        "--deterministic",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("C=4,bt=2,t=2,det"));
}

#[test]
fn injected_fault_fails_with_location() {
    let out = bench(&["check", "--dims", "2x3x4x5", "--inject-fault", "1,3,0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("worst at (b=1, v=3)"));
}

#[test]
fn guard_refuses_large_dims_without_force() {
    let out = bench(&["check", "--dims", "64x512x2x1024"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["check", "--dims", "2x3x4"][..],
        &["check", "--tile", "0x1"],
        &["bench", "--values", "16,8"],
        &["bench", "--strategies", "turbo"],
        &["cost", "--dtype-bytes", "3"],
        &["gradcheck", "--h", "0"],
        &["frobnicate"],
    ] {
        assert_eq!(bench(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn gradcheck_scalar_and_small() {
    for dims in ["1x1x1x1", "2x3x4x5"] {
        let out = bench(&["gradcheck", "--dims", dims]);
        assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
        assert!(stdout(&out).contains("skipped="));
    }
}

#[test]
fn cost_reports_16_gb_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cost.csv");
    let out = bench(&[
        "cost",
        "--dims",
        "512x512x768x30522",
        "--csv",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("16002318336 (16.00 GB)"), "{text}");
    let csv = std::fs::read_to_string(path).unwrap();
    let fused: Vec<&str> = csv
        .lines()
        .filter(|l| l.starts_with("fully_fused,"))
        .collect();
    assert_eq!(fused.len(), 1);
    assert_eq!(&fused[0].split(',').collect::<Vec<_>>()[4..6], ["0", "0"]);
    // pooled output of the eager plan at 2-byte activations
    assert!(csv
        .lines()
        .any(|l| l.starts_with("eager,max,") && l.split(',').nth(3) == Some("31254528")));
}

#[test]
fn bench_to_stdout_single_row() {
    let out = bench(&[
        "bench",
        "--dims",
        "2x4x8x32",
        "--values",
        "4",
        "--strategies",
        "hybrid",
        "--repeats",
        "1",
        "--warmup",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("hybrid,2,4,8,32,"));
}
