use std::path::Path;
use std::process::{Command, Output};

use ltac::diagnostics::StepsizeReport;
use ltac::runner::{EvalReport, METRICS_COLUMNS};

fn ltac(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltac"))
        .args(args)
        .current_dir(cwd)
        .env_remove("LTAC_SEED")
        .output()
        .expect("binary runs")
}

fn quadratic_config(dir: &Path) -> String {
    let cfg = r#"{
        "graph": {"type": "ring", "n": 3},
        "train": {"K": 10, "oracle": "quadratic", "alpha": 0.05, "beta": 0.3},
        "diag": {"wall_clock": false}
    }"#;
    let path = dir.join("cfg.json");
    std::fs::write(&path, cfg).unwrap();
    path.to_string_lossy().into_owned()
}

/// Tiny actor-critic run: small nets, short chains.
const SMALL_AC: [&str; 12] = [
    "--set", "train.K=3",
    "--set", "policy.hidden=8",
    "--set", "critic.width=8",
    "--set", "sampler.burn_in=5",
    "--set", "diag.wall_clock=false",
    "--set", "diag.B_eval=4",
];

#[test]
fn train_writes_three_files_with_k_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quadratic_config(tmp.path());
    let out = ltac(&["train", "--config", &cfg, "--seed", "7", "--out", "runs/a"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("runs/a");
    for f in ["metrics.csv", "history.json", "config_echo.json"] {
        assert!(dir.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), METRICS_COLUMNS.join(","));
    assert_eq!(lines.count(), 10);
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("config_echo.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 7);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--seed", "5"];
    args.extend(SMALL_AC);
    let a = ltac(&[&args[..], &["--out", "a"]].concat(), tmp.path());
    let b = ltac(&[&args[..], &["--out", "b", "--set", "train.parallel=false"]].concat(), tmp.path());
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("metrics.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let c = ltac(&[&args[..], &["--out", "c", "--set", "seed=6"]].concat(), tmp.path());
    assert!(c.status.success());
    // --seed wins over the config value.
    assert_eq!(read("a"), read("c"));
}

#[test]
fn env_seed_overrides_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |out: &str, env_seed: Option<&str>, cfg_seed: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ltac"));
        cmd.args(["train", "--out", out, "--set", &format!("seed={cfg_seed}")]).args(SMALL_AC);
        cmd.current_dir(tmp.path()).env_remove("LTAC_SEED");
        if let Some(s) = env_seed {
            cmd.env("LTAC_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(tmp.path().join(out).join("metrics.csv")).unwrap()
    };
    assert_eq!(run("x", Some("11"), "0"), run("y", None, "11"));
    assert_ne!(run("z", None, "0"), run("w", None, "11"));
}

#[test]
fn bad_config_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ltac(&["train", "--set", "train.tau=0", "--out", "r"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.tau"));
    let out = ltac(&["train", "--set", "critic.widht=3", "--out", "r"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("widht"));
}

#[test]
fn stepsize_report_warns_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ltac(&["stepsize", "--out", "s"], tmp.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("warning: beta = 0.01 is below"), "{stdout}");
    let text = std::fs::read_to_string(tmp.path().join("s/stepsize.json")).unwrap();
    let report: StepsizeReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report.alpha_bar_3, 0.25);
    assert!(!report.beta_in_window);
    assert_eq!(serde_json::to_string_pretty(&report).unwrap(), text);
}

#[test]
fn eval_rolls_out_trained_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", "run"];
    args.extend(SMALL_AC);
    assert!(ltac(&args, tmp.path()).status.success());
    let history = tmp.path().join("run/history.json");
    let h = history.to_str().unwrap();
    let a = ltac(&["eval", "--history", h, "--episodes", "4", "--max-steps", "25"], tmp.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let path = tmp.path().join("run/trajectories.json");
    let first = std::fs::read(&path).unwrap();
    let report: EvalReport = serde_json::from_slice(&first).unwrap();
    assert_eq!(report.episodes.len(), 4);
    for ep in &report.episodes {
        assert!(ep.positions.len() <= 26);
        assert_eq!(ep.success, ep.total_distance.iter().any(|d| *d < 0.15));
    }
    let again = ltac(&["eval", "--history", h, "--stochastic", "--seed", "3", "--out", "st"], tmp.path());
    assert!(again.status.success());
    let again2 = ltac(&["eval", "--history", h, "--stochastic", "--seed", "3", "--out", "st2"], tmp.path());
    assert!(again2.status.success());
    assert_eq!(
        std::fs::read(tmp.path().join("st/trajectories.json")).unwrap(),
        std::fs::read(tmp.path().join("st2/trajectories.json")).unwrap()
    );
}

#[test]
fn eval_without_policy_snapshot_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quadratic_config(tmp.path());
    assert!(ltac(&["train", "--config", &cfg, "--out", "q"], tmp.path()).status.success());
    let out = ltac(&["eval", "--history", "q/history.json"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("snapshot"));
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let small = ["--set", "policy.hidden=8", "--set", "critic.width=8", "--set", "sampler.burn_in=5"];
    let ok = ltac(&[&["verify"][..], &small].concat(), tmp.path());
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = ltac(&[&["verify", "--inject-fault", "flip-bridge-sign"][..], &small].concat(), tmp.path());
    assert_eq!(bad.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL mean preservation")), "{stdout}");
}
