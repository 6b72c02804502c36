use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[problem]
kind = "quadratic"
spectrum = [1.0, 4.0]

[oracle]
kind = "gaussian"
sigma = 0.5

[schedule]
alpha_c = 1.0
alpha_a = 0.7
mu_m = 1.0

[run]
method = "msgd"
horizon = 2000
replicas = 16
seed = 21
x0 = [3.0, -2.0]
checkpoints = "log"
per_decade = 4
lyapunov = true
"#;

fn sgdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdlab")).args(args).output().expect("binary runs")
}

fn text(out: &[u8]) -> String {
    String::from_utf8_lossy(out).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn classify_examples() {
    let out = sgdlab(&["classify", "--alpha-c", "1", "--alpha-a", "0.4"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("thm22_condition: true"));

    let out = sgdlab(&["classify", "--alpha-c", "1", "--alpha-a", "1.2"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("diverges: false"));

    let out = sgdlab(&["classify", "--alpha-c", "1", "--alpha-a", "0.7", "--mu-m", "1", "--mu-b", "0.2", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["class"]["damping_admissible"], true);
    assert_eq!(v["class"]["l_mu"], 0.0);

    assert_eq!(sgdlab(&["classify", "--alpha-c", "0", "--alpha-a", "0.5"]).status.code(), Some(2));
    assert_eq!(sgdlab(&["classify", "--alpha-a", "0.5"]).status.code(), Some(2));
}

#[test]
fn experiment_writes_outputs_and_replays_from_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let first = tmp.path().join("first");
    let out = sgdlab(&["experiment", &cfg, "--out", first.to_str().unwrap(), "--plot", "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    for f in ["estimates.csv", "summary.json", "manifest.json", "curve.svg"] {
        assert!(first.join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["replicas_used"], 16);
    assert!(summary["descent_fit"]["status"].is_string());

    let second = tmp.path().join("second");
    let manifest = first.join("manifest.json");
    let out = sgdlab(&[
        "experiment",
        "--from-manifest",
        manifest.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let a = std::fs::read(first.join("estimates.csv")).unwrap();
    let b = std::fs::read(second.join("estimates.csv")).unwrap();
    assert_eq!(a, b);

    let svg = tmp.path().join("replot.svg");
    let out = sgdlab(&["plot", first.join("estimates.csv").to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let body = std::fs::read_to_string(svg).unwrap();
    assert_eq!(body.matches("<polyline").count(), 2);
}

#[test]
fn zero_noise_gives_zero_standard_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let dir = tmp.path().join("out");
    let out = sgdlab(&["experiment", &cfg, "--set", "oracle.sigma=0", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("estimates.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!((cols[2], cols[4]), (0.0, 0.0), "{line}");
    }
}

#[test]
fn config_errors_exit_two_without_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let dir = tmp.path().join("out");
    let out = sgdlab(&["experiment", &cfg, "--set", "schedule.mu_m=0", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("mu_m"), "{}", text(&out.stderr));
    assert!(!dir.exists());

    let out = sgdlab(&["experiment", "missing.toml", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_three_and_removes_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let dir = tmp.path().join("out");
    let out = sgdlab(&[
        "experiment",
        &cfg,
        "--set",
        "run.method=vsgd",
        "--set",
        "schedule.alpha_a=0",
        "--set",
        "schedule.mu_m=0",
        "--set",
        "run.lyapunov=false",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    assert!(!dir.exists());
}

#[test]
fn plot_rejects_bad_csv() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "checkpoint,mean_grad_sq,se_grad_sq,mean_gap,se_gap\n").unwrap();
    assert_eq!(sgdlab(&["plot", empty.to_str().unwrap()]).status.code(), Some(2));
    let wrong = tmp.path().join("wrong.csv");
    std::fs::write(&wrong, "a,b\n1,2\n").unwrap();
    assert_eq!(sgdlab(&["plot", wrong.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn json_outputs_parse() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = sgdlab(&["lyapunov", &cfg, "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["rows"].as_array().is_some_and(|r| !r.is_empty()));
    assert!(v["mode"]["zeta"].as_f64().is_some_and(|z| z > 0.0));

    let out = sgdlab(&["run", &cfg, "--json", "--set", "run.horizon=30"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.as_array().is_some_and(|r| r.iter().all(|x| x["Ht"].is_number())));

    let out = sgdlab(&["sweep", &cfg, "--alpha-a", "0.6,0.9", "--mu-b", "0,0.2", "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
}
