//! End-to-end runs of the `cfdetect` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cfdetect_harness::config::{Algorithm, ExperimentSpec};
use cfdetect_harness::experiment::run_trials;
use cfdetect_harness::roc::RocCurve;
use cfdetect_harness::sweep::load_summary;
use tempfile::TempDir;

fn cfdetect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfdetect"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cfdetect(args);
    assert!(
        out.status.success(),
        "cfdetect {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_spec(algorithm: Algorithm) -> ExperimentSpec {
    let mut spec = ExperimentSpec::desk(algorithm);
    spec.system.aps = 2;
    spec.system.antennas = 2;
    spec.system.users = 12;
    spec.system.pilot_len = 8;
    spec.system.epsilon = 0.3;
    spec.run.trials = 6;
    spec.run.threshold_count = 20;
    spec.run.master_seed = Some(42);
    spec
}

fn write_spec(dir: &Path, name: &str, spec: &ExperimentSpec) -> String {
    let path = dir.join(name);
    fs::write(&path, spec.to_toml()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read_scores(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["user", "score"]);
    r.records()
        .enumerate()
        .map(|(n, rec)| {
            let rec = rec.unwrap();
            assert_eq!(rec[0].parse::<usize>().unwrap(), n);
            rec[1].parse().unwrap()
        })
        .collect()
}

#[test]
fn selftest_passes() {
    let out = ok(&["selftest"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{text}");
}

#[test]
fn sweep_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = write_spec(dir.path(), "small.toml", &small_spec(Algorithm::Map));
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "sweep",
            "--config",
            &config,
            "--trials",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        let summary = dir
            .path()
            .join(format!("{}.summary.csv", name.trim_end_matches(".csv")));
        (fs::read(&out).unwrap(), fs::read(summary).unwrap())
    };
    let (roc_a, sum_a) = run("a.csv");
    let (roc_b, sum_b) = run("b.csv");
    assert_eq!(roc_a, roc_b);
    assert_eq!(sum_a, sum_b);
    assert!(roc_a.starts_with(b"threshold,pmd,pfa\n"));
    assert!(sum_a.starts_with(b"param,equal_error,ci95\n"));

    let roc = RocCurve::load(&dir.path().join("a.csv")).unwrap();
    let rows = load_summary(&dir.path().join("a.summary.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].equal_error, roc.equal_error.rate);
}

#[test]
fn sweep_over_a_parameter_writes_one_curve_per_value() {
    let dir = TempDir::new().unwrap();
    let mut spec = small_spec(Algorithm::Cov);
    spec.run.sweep = Some(cfdetect_harness::config::SweepSettings {
        param: "L".into(),
        values: vec![6.0, 10.0],
    });
    let config = write_spec(dir.path(), "sweep.toml", &spec);
    let out = dir.path().join("roc.csv");
    ok(&["sweep", "--config", &config, "--out", out.to_str().unwrap()]);
    for name in ["roc_L6.csv", "roc_L10.csv"] {
        RocCurve::load(&dir.path().join(name)).unwrap();
    }
    let rows = load_summary(&dir.path().join("roc.summary.csv")).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.param.as_str()).collect();
    assert_eq!(labels, ["L=6", "L=10"]);
}

#[test]
fn detect_reproduces_the_first_trial() {
    let dir = TempDir::new().unwrap();
    for algorithm in Algorithm::ALL {
        let mut spec = small_spec(algorithm);
        spec.perturbation.pathloss_error_db = 3.0;
        spec.run.trials = 1;
        let config = write_spec(dir.path(), "one.toml", &spec);
        let data = dir.path().join(format!("data_{algorithm}"));
        ok(&["simulate", "--config", &config, "--out", data.to_str().unwrap()]);
        let scores = dir.path().join(format!("scores_{algorithm}.csv"));
        ok(&[
            "detect",
            "--algo",
            algorithm.name(),
            "--data",
            data.to_str().unwrap(),
            "--config",
            &config,
            "--out",
            scores.to_str().unwrap(),
        ]);
        let want = run_trials(&spec).unwrap();
        assert_eq!(read_scores(&scores), want.records[0].scores, "{algorithm}");
    }
}

/// One AP with two antennas, two users with unit orthogonal pilots. The
/// objective then splits per user into `ln q + p/q` with `q = σ² + a·β`
/// and `p` the user's diagonal entry of the sample covariance, minimized
/// at `a = max(0, (p − σ²)/β)`.
fn hand_built_dataset(dir: &Path, known_beta: [f64; 2]) {
    fs::create_dir_all(dir).unwrap();
    fs::write(
        dir.join("meta"),
        r#"[system]
K = 1
M = 2
N = 2
L = 2
epsilon = 0.5
snr_target_db = 6.0
max_tx_power_dbm = 23.0
noise_power_dbm = -109.0
area_km = 1.0
rician_fraction = 0.0
rician_factor_max = 0.6
seed = 7

[trial]
index = 0

[knowledge]
pathloss_error_db = 3.0
noise_error_std_dbm = 0.0
noise_power = 1.0
assumed_noise_power = 1.0
"#,
    )
    .unwrap();
    fs::write(dir.join("pilots.csv"), "1,0,0,0\n0,0,1,0\n").unwrap();
    // |row 0|² = 5 → p = 2.5; |row 1|² = 0.25 → p = 0.125 < σ².
    fs::write(dir.join("Y_0.csv"), "2,0,0,1\n0.5,0,0,0\n").unwrap();
    fs::write(dir.join("truth.csv"), "user,active,beta_0\n0,1,2\n1,0,2\n").unwrap();
    fs::write(
        dir.join("knowledge.csv"),
        format!("user,beta_0\n0,{}\n1,{}\n", known_beta[0], known_beta[1]),
    )
    .unwrap();
}

#[test]
fn cov_detection_uses_the_dataset_knowledge() {
    let dir = TempDir::new().unwrap();
    for (known, want) in [([2.0, 2.0], 0.75), ([4.0, 1.0], 0.375)] {
        let data = dir.path().join(format!("hand_{}", known[0]));
        hand_built_dataset(&data, known);
        let out = dir.path().join(format!("cov_{}.csv", known[0]));
        ok(&[
            "detect",
            "--algo",
            "cov",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        let scores = read_scores(&out);
        assert!((scores[0] - want).abs() <= 1e-6 * want, "{scores:?} vs {want}");
        assert_eq!(scores[1], 0.0);
    }
}

#[test]
fn detect_threshold_column() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("hand");
    hand_built_dataset(&data, [2.0, 2.0]);
    let out = dir.path().join("decided.csv");
    ok(&[
        "detect",
        "--algo",
        "cov",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--rho",
        "0.1",
    ]);
    let text = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "user,score,active");
    assert!(lines[1].ends_with(",1") && lines[2].ends_with(",0"), "{text}");
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[system]\nK = \"four\"\n").unwrap();
    let invalid = write_spec(dir.path(), "invalid.toml", &{
        let mut s = small_spec(Algorithm::Ghvi);
        s.run.trials = 0;
        s
    });
    let out = dir.path().join("x.csv");
    let out = out.to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["selftest", "--no-such-flag"],
        vec!["frobnicate"],
        vec!["sweep", "--config", bad.to_str().unwrap(), "--out", out],
        vec!["sweep", "--config", &invalid, "--out", out],
        vec!["sweep", "--config", "/nonexistent/cfg.toml", "--out", out],
        vec!["detect", "--algo", "cov", "--data", "/nonexistent/data", "--out", out],
        vec!["detect", "--algo", "nope", "--data", ".", "--out", out],
        vec!["simulate", "--config", &invalid, "--out", out],
    ];
    for args in cases {
        let o = cfdetect(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty(), "{args:?} gave no diagnostic");
    }
}
