use std::path::Path;
use std::process::{Command, Output};

fn sellopt(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sellopt"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("SELLOPT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn json(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

#[test]
fn solve_writes_policy_thresholds_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = sellopt(
        &["solve", "--kernel", "quadratic_tilt", "--T", "2", "--delta", "1"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let k1: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("k1 = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((k1 - 0.75).abs() < 1e-3);

    let thresholds = json(dir.path(), "thresholds.json");
    let hash = thresholds["provenance"]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(thresholds["provenance"]["tool"], "sellopt");
    assert_eq!(
        json(dir.path(), "diagnostics.json")["provenance"]["config_hash"],
        hash.as_str()
    );
    let policy = read(dir.path(), "policy.csv");
    assert!(policy.starts_with("# sellopt ") && policy.lines().next().unwrap().ends_with(&hash));
    assert_eq!(
        policy.lines().nth(1).unwrap(),
        "t,theta,distortion,psi,continuation,sell,value"
    );
    assert!(read(dir.path(), "config.toml").contains(&hash));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--kernel",
        "shrinking_uniform",
        "--T",
        "3",
        "--delta",
        "0.9",
        "--n-theta",
        "101",
        "--n-distortion",
        "30",
        "--paths",
        "5000",
        "--seed",
        "11",
    ];
    assert_eq!(code(&sellopt(&args, a.path())), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_sellopt"))
        .args(args)
        .arg("--out")
        .arg(b.path())
        .env("SELLOPT_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    for f in ["transcripts.csv", "summary.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
}

#[test]
fn check_passes_for_a_certified_policy() {
    let dir = tempfile::tempdir().unwrap();
    let o = sellopt(
        &[
            "check",
            "--kernel",
            "shrinking_uniform",
            "--T",
            "2",
            "--delta",
            "0.5",
            "--points",
            "30",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(dir.path(), "ic_report.json");
    for c in report["data"]["report"]["checks"].as_array().unwrap() {
        assert_eq!(c["status"], "pass", "{c}");
    }
}

#[test]
fn failed_myopic_check_exits_one() {
    // Independent values with δ = 1: waiting for a higher draw beats selling
    // at ψ just above the mean.
    let dir = tempfile::tempdir().unwrap();
    let o = sellopt(
        &[
            "check",
            "--kernel",
            "independent",
            "--T",
            "3",
            "--delta",
            "1",
            "--points",
            "20",
            "--myopic",
            "--skip",
            "best_response,expost_ir",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(json(dir.path(), "ic_report.json")["data"]["myopic"]["status"], "fail");
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sellopt(&["solve"], dir.path())), 2);
    assert_eq!(code(&sellopt(&["solve", "--kernel", "nope"], dir.path())), 2);
    assert_eq!(
        code(&sellopt(&["solve", "--kernel", "power", "--delta", "1.5"], dir.path())),
        2
    );
    assert_eq!(
        code(&sellopt(
            &["solve", "--kernel", "ar1", "--param", "gamma=2"],
            dir.path()
        )),
        2
    );
    assert_eq!(
        code(&sellopt(&["solve", "--kernel", "power", "--bogus"], dir.path())),
        2
    );
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[solve]\nhorizn = 2\n").unwrap();
    assert_eq!(
        code(&sellopt(&["solve", "--config", cfg.to_str().unwrap()], dir.path())),
        2
    );
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[kernel]\nname = \"quadratic_tilt\"\n\n[solve]\nhorizon = 2\ndelta = 0.0\nn_theta = 201\nn_distortion = 20\n",
    )
    .unwrap();
    let o = sellopt(
        &["solve", "--config", cfg.to_str().unwrap(), "--delta", "0.5"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let k1: f64 = String::from_utf8_lossy(&o.stdout)
        .lines()
        .find_map(|l| l.strip_prefix("k1 = ").map(str::to_string))
        .unwrap()
        .parse()
        .unwrap();
    assert!((k1 - 3.0 / 5.0).abs() < 1e-3, "{k1}");
    assert!(read(dir.path(), "config.toml").contains("delta = 0.5"));
}

#[test]
fn sweep_reports_comparative_statics() {
    let dir = tempfile::tempdir().unwrap();
    let o = sellopt(
        &[
            "sweep",
            "--kernel",
            "quadratic_tilt",
            "--T",
            "2",
            "--axis",
            "delta",
            "--values",
            "0,0.5,1",
            "--n-theta",
            "201",
            "--n-distortion",
            "20",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let sweep = json(dir.path(), "sweep.json");
    let ks: Vec<f64> = sweep["data"]["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["k1"].as_f64().unwrap())
        .collect();
    for (k, d) in ks.iter().zip([0.0, 0.5, 1.0]) {
        assert!((k - 3.0 / (6.0 - 2.0 * d)).abs() < 1e-3);
    }
    for f in [
        "sweep_revenue.dat",
        "sweep_k1.dat",
        "sweep_p_sale_first.dat",
        "sweep.csv",
    ] {
        assert!(read(dir.path(), f).starts_with("# sellopt "), "{f}");
    }
}

#[test]
fn list_kernels_prints_the_catalog() {
    let o = Command::new(env!("CARGO_BIN_EXE_sellopt"))
        .args(["list-kernels", "--json"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let names: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|k| k["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        ["shrinking_uniform", "power", "quadratic_tilt", "independent", "ar1"]
    );
}
