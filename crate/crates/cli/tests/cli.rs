use std::path::Path;
use std::process::{Command, Output};

fn bgret(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgret"))
        .current_dir(dir)
        .env_remove("BGRET_WORKERS")
        .args(args)
        .output()
        .expect("spawn bgret")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn pipeline_recovers_signal() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&bgret(d, &["--seed", "3", "gen-signal", "--n", "16"])), 0);
    assert_eq!(code(&bgret(d, &["--seed", "4", "gen-background", "--n", "16", "--k", "48"])), 0);
    assert_eq!(
        code(&bgret(d, &["forward", "--sample", "out/signal.csv", "--background", "out/background.csv"])),
        0
    );
    let o = bgret(
        d,
        &[
            "solve", "--intensity", "out/intensity.csv", "--background", "out/background.csv", "--n", "16",
            "--truth", "out/signal.csv", "--max-iter", "3000",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["relative_error"].as_f64().unwrap() < 1e-8, "{v}");
    for f in ["estimate.csv", "trace.csv", "solve.manifest.json"] {
        assert!(d.join("out").join(f).exists(), "{f}");
    }

    let m = bgret(d, &["metrics", "--estimate", "out/estimate.csv", "--truth", "out/signal.csv"]);
    assert_eq!(code(&m), 0);
    let v: serde_json::Value = serde_json::from_slice(&m.stdout).unwrap();
    assert_eq!(v["success"], true);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bgret(dir.path(), &["no-such-command"])), 1);
    assert_eq!(code(&bgret(dir.path(), &["sweep", "--k-ratios", "3:1:0.5"])), 1);
    assert_eq!(code(&bgret(dir.path(), &["verify", "uniqueness", "--d", "3"])), 1);
    assert_eq!(code(&bgret(dir.path(), &["--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = bgret(d, &["metrics", "--estimate", "missing.csv", "--truth", "missing.csv"]);
    assert_eq!(code(&o), 2);
    std::fs::write(d.join("bad.csv"), "1.0\nabc\n").unwrap();
    std::fs::write(d.join("ok.csv"), "1.0\n2.0\n").unwrap();
    let o = bgret(d, &["metrics", "--estimate", "bad.csv", "--truth", "ok.csv"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2"));
    std::fs::write(d.join("bad.toml"), "method = \"BDR\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&bgret(d, &["--config", "bad.toml", "gen-signal"])), 2);
}

#[test]
fn failed_check_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // A background this small leaves the linear system underdetermined.
    let o = bgret(dir.path(), &["verify", "uniqueness", "--n", "4", "--k", "8", "--d", "1", "--draws", "3"]);
    assert_eq!(code(&o), 3);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pass"], false);
    assert!(dir.path().join("out/verify-uniqueness.json").exists());
}

#[test]
fn verify_lmatrix_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = bgret(dir.path(), &["verify", "lmatrix", "--n", "4", "--k", "12", "--draws", "10"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn sweep_is_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |out: &str, workers: &str| {
        let o = bgret(
            d,
            &[
                "--out", out, "--workers", workers, "--seed", "11", "--no-timing", "sweep", "--n", "12", "--k-ratios",
                "2,3", "--trials", "4", "--max-iter", "100",
            ],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(d.join(out).join("results.csv")).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "3"));
    let cells = std::fs::read_to_string(d.join("a/cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 3);
    assert!(d.join("a/sweep.manifest.json").exists());
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "method = \"PGD\"\ntrials = 2\nseed = 5\nn = 10\nk_ratio = 3.0\nmax_iter = 50\n[paths]\nout = \"cfg-out\"\n",
    )
    .unwrap();
    let o = bgret(d, &["--config", "run.toml", "--no-timing", "sweep"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("cfg-out/sweep.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["method"], "PGD");
    assert_eq!(m["config"]["trials"], 2);
    assert_eq!(m["config"]["n"][0], 10);
    assert!(m["inputs"].as_object().unwrap().contains_key("run.toml"));
}
