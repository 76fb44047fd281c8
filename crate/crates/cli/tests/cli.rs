use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const PLANTED: &str = r#"
schema_version = 1
seed = 5

[bandit]
n_rounds = 60

[stage2]
n_samples = 8
n_initial = 3
pool_size = 300

[environment]
family = "planted"
theta_star = [0.5, 0.9, 0.9, 0.1, 0.1]
"#;

fn autosem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autosem"))
        .current_dir(dir)
        .env_remove("AUTOSEM_OUT")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn workspace(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn valid_run_writes_every_artifact() {
    let ws = workspace(PLANTED);
    let out = autosem(ws.path(), &["run", "run.toml", "--out", "r"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let run = ws.path().join("r");
    for name in ["run_config.toml", "report.json", "stage1.log.jsonl", "stage2.log.jsonl", "utilities.csv"] {
        assert!(run.join(name).is_file(), "{name}");
    }
    let report = report(&run);
    let ids = report["selection"]["selected_task_ids"].as_array().unwrap();
    assert_eq!(ids[0], 0);
    assert_eq!(report["selected_tasks"], report["selection"]["selected_task_ids"]);
    assert_eq!(report["n_evaluations"], 8);
    assert_eq!(fs::read_to_string(run.join("stage1.log.jsonl")).unwrap().lines().count(), 60);
    assert_eq!(fs::read_to_string(run.join("stage2.log.jsonl")).unwrap().lines().count(), 8);
}

#[test]
fn invalid_gamma_is_a_config_error() {
    let ws = workspace("schema_version = 1\n[bandit]\ngamma = 1.5\n");
    let out = autosem(ws.path(), &["run", "run.toml", "--out", "r"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("gamma"), "{}", stderr(&out));
    assert!(!ws.path().join("r").exists());
    let out = autosem(ws.path(), &["validate-config", "run.toml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_keys_are_rejected() {
    let ws = workspace("schema_version = 1\n[stage2]\nbudget = 4\n");
    let out = autosem(ws.path(), &["validate-config", "run.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("budget"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_two() {
    let ws = workspace(PLANTED);
    assert_eq!(code(&autosem(ws.path(), &["run"])), 2);
    assert_eq!(code(&autosem(ws.path(), &["run", "missing.toml"])), 2);
    assert_eq!(code(&autosem(ws.path(), &["run", "run.toml", "--mode", "both"])), 2);
    assert_eq!(code(&autosem(ws.path(), &["frobnicate"])), 2);
}

#[test]
fn validated_config_round_trips() {
    let ws = workspace(PLANTED);
    let first = autosem(ws.path(), &["validate-config", "run.toml"]);
    assert_eq!(code(&first), 0);
    fs::write(ws.path().join("normal.toml"), &first.stdout).unwrap();
    let second = autosem(ws.path(), &["validate-config", "normal.toml"]);
    assert_eq!(code(&second), 0);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn mode_override_is_recorded() {
    let ws = workspace(PLANTED);
    let out = autosem(ws.path(), &["run", "run.toml", "--out", "r", "--mode", "no_stage1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = report(&ws.path().join("r"));
    assert_eq!(report["mode"], "no_stage1");
    assert_eq!(report["config"]["mode"], "no_stage1");
    assert_eq!(report["selected_tasks"].as_array().unwrap().len(), 5);
    let config = fs::read_to_string(ws.path().join("r/run_config.toml")).unwrap();
    assert!(config.contains("mode = \"no_stage1\""));
    assert_eq!(fs::read_to_string(ws.path().join("r/stage1.log.jsonl")).unwrap(), "");
}

#[test]
fn non_empty_run_dir_needs_force() {
    let ws = workspace(PLANTED);
    assert_eq!(code(&autosem(ws.path(), &["run", "run.toml", "--out", "r"])), 0);
    let out = autosem(ws.path(), &["run", "run.toml", "--out", "r"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--force"));
    assert_eq!(code(&autosem(ws.path(), &["run", "run.toml", "--out", "r", "--force"])), 0);
}

#[test]
fn output_root_comes_from_config_or_environment() {
    let ws = workspace(&format!("{PLANTED}\n[output]\nroot = \"results\"\nname = \"trial\"\n"));
    assert_eq!(code(&autosem(ws.path(), &["run", "run.toml"])), 0);
    assert!(ws.path().join("results/trial/report.json").is_file());

    let elsewhere = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_autosem"))
        .current_dir(ws.path())
        .env("AUTOSEM_OUT", elsewhere.path())
        .args(["run", "run.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(elsewhere.path().join("trial/report.json").is_file());
}

#[test]
fn seed_fan_out_writes_one_dir_per_seed() {
    let ws = workspace(PLANTED);
    let out = autosem(ws.path(), &["run", "run.toml", "--out", "sweep", "--seeds", "0..3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut seeds = Vec::new();
    for k in 0..3 {
        let report = report(&ws.path().join(format!("sweep/seed-{k}")));
        assert_eq!(report["config"]["seed"], k);
        seeds.push(report["resolved"]["bandit"]["rng_seed"].as_u64().unwrap());
    }
    seeds.dedup();
    assert_eq!(seeds.len(), 3);
    assert_eq!(code(&autosem(ws.path(), &["replay", "sweep/seed-1"])), 0);
}

fn write_log(dir: &Path, arms: &[(f64, f64)]) {
    let pairs: Vec<String> = arms.iter().map(|(a, b)| format!("[{a},{b}]")).collect();
    let record = format!(
        "{{\"round\":1,\"sampled_thetas\":{:?},\"selected_arm\":0,\"reward\":1,\"metric\":0.5,\"arms_after\":[{}]}}\n",
        vec![0.5; arms.len()],
        pairs.join(",")
    );
    fs::write(dir.join("stage1.log.jsonl"), record).unwrap();
}

#[test]
fn plot_utilities_writes_grid_per_task() {
    let ws = workspace(PLANTED);
    write_log(ws.path(), &[(3.0, 1.0), (1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]);
    let out = autosem(ws.path(), &["plot-utilities", "stage1.log.jsonl", "--grid", "100"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("task_id,theta,density"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 500);
    for row in rows.iter().filter(|r| r[0] != 0.0) {
        assert!((row[2] - 1.0).abs() < 1e-12);
    }
    for row in rows.iter().filter(|r| r[0] == 0.0) {
        assert!((row[2] - 3.0 * row[1] * row[1]).abs() < 1e-12);
    }

    let out = autosem(ws.path(), &["plot-utilities", ".", "--grid", "10", "--out", "u.csv"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(ws.path().join("u.csv")).unwrap().lines().count(), 51);
}

#[test]
fn plot_utilities_rejects_bad_logs() {
    let ws = workspace(PLANTED);
    fs::write(ws.path().join("empty.jsonl"), "").unwrap();
    fs::write(ws.path().join("junk.jsonl"), "{\"round\": \n").unwrap();
    assert_eq!(code(&autosem(ws.path(), &["plot-utilities", "empty.jsonl"])), 2);
    assert_eq!(code(&autosem(ws.path(), &["plot-utilities", "junk.jsonl"])), 2);
    assert_eq!(code(&autosem(ws.path(), &["plot-utilities", "absent.jsonl"])), 2);
}

#[test]
fn replay_detects_a_flipped_reward() {
    let ws = workspace(PLANTED);
    assert_eq!(code(&autosem(ws.path(), &["run", "run.toml", "--out", "r"])), 0);
    let out = autosem(ws.path(), &["replay", "r/stage1.log.jsonl"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let path = ws.path().join("r/stage1.log.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let line = &mut lines[9];
    let flipped = if line.contains("\"reward\":1") {
        line.replace("\"reward\":1", "\"reward\":0")
    } else {
        line.replace("\"reward\":0", "\"reward\":1")
    };
    assert_ne!(*line, flipped);
    *line = flipped;
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = autosem(ws.path(), &["replay", "r"]);
    assert_eq!(code(&out), 1);
    let msg = stderr(&out);
    assert!(msg.contains("stage 1") && msg.contains("round 10"), "{msg}");
}

#[test]
fn replay_without_logs_is_a_usage_error() {
    let ws = workspace(PLANTED);
    fs::create_dir(ws.path().join("empty")).unwrap();
    assert_eq!(code(&autosem(ws.path(), &["replay", "empty"])), 2);
}

#[test]
fn environment_failure_keeps_logs() {
    let ws = workspace(
        "schema_version = 1\n[environment]\nfamily = \"shared-linear\"\nlearning_rate = 1e6\n",
    );
    let out = autosem(ws.path(), &["run", "run.toml", "--out", "r"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(ws.path().join("r/stage1.log.jsonl").is_file());
    assert!(ws.path().join("r/stage2.log.jsonl").is_file());
    assert!(!ws.path().join("r/report.json").exists());
}
