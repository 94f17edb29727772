//! End-to-end tests of the command-line pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_playlist-sim")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn playlist-sim")
}

fn small_config(dir: &Path, out_dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    let text = format!(
        r#"seed = 42
output_dir = "{}"

[data.synthetic]
sessions = 200
session_length = 20
tracks = 200
feature_dim = 6
clusters = 4
cluster_spread = 1.0
intra_cluster_sd = 0.5
context_size = 5
latent_dim = 4
preference = "context_cluster"
pref_scale = 3.0
bias = -0.5
rho = 0.2
seed = 5

[env]
context_size = 5
pool_size = 15
horizon = 15

[cwm]
hidden = [16]
lr = 0.003
epochs = 4
batch_size = 128
patience = 3
clip = 5.0
seed = 1

[swm]
hidden = [10]
lr = 0.005
epochs = 3
batch_size = 16
patience = 3
clip = 5.0
seed = 2

[agent]
gamma = 0.95
epsilon_start = 1.0
epsilon_end = 0.05
epsilon_fraction = 0.5
target_sync_period = 50
batch_size = 16
buffer_capacity = 5000
warmup = 100
lr = 0.001
clip = 5.0
hidden = [32]
episodes = 12
seed = 3

[eval]
episodes = 15
bootstrap_samples = 100
level = 0.95
bins = 10
seed = 7
"#,
        out_dir.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn full_pipeline_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = small_config(dir.path(), &out);
    let config = config.to_str().unwrap();

    let synth = run(&["--config", config, "synth"]);
    assert!(synth.status.success(), "synth: {}", String::from_utf8_lossy(&synth.stderr));
    assert!(out.join("data/sessions.csv").exists());
    assert!(out.join("data/features.csv").exists());
    assert!(out.join("data/manifest.json").exists());
    assert!(out.join("config_used.toml").exists());

    let cwm = run(&["--config", config, "train-user-model", "--model", "cwm"]);
    assert!(cwm.status.success(), "cwm: {}", String::from_utf8_lossy(&cwm.stderr));
    assert!(out.join("checkpoints/cwm.ckpt").exists());
    assert!(out.join("logs/cwm_train.csv").exists());

    let swm = run(&["--config", config, "train-user-model", "--model", "swm"]);
    assert!(swm.status.success(), "swm: {}", String::from_utf8_lossy(&swm.stderr));
    assert!(out.join("checkpoints/swm.ckpt").exists());

    let agent = run(&["--config", config, "train-agent"]);
    assert!(agent.status.success(), "agent: {}", String::from_utf8_lossy(&agent.stderr));
    assert!(out.join("checkpoints/agent.ckpt").exists());
    assert!(out.join("logs/agent_train.csv").exists());

    let eval = run(&["--config", config, "evaluate"]);
    assert!(eval.status.success(), "evaluate: {}", String::from_utf8_lossy(&eval.stderr));
    let summary = std::fs::read_to_string(out.join("reports/eval_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 5, "header plus one row per policy:\n{summary}");
    for policy in ["random", "cosine", "gmpc", "agent"] {
        assert!(summary.contains(policy), "missing {policy} row");
    }
    assert!(out.join("reports/histograms.csv").exists());
}

#[test]
fn ingest_validates_and_counts_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = small_config(dir.path(), &out);
    let config = config.to_str().unwrap();

    // produce a dataset, then damage two rows
    let synth = run(&["--config", config, "synth"]);
    assert!(synth.status.success());
    let sessions_path = out.join("data/sessions.csv");
    let text = std::fs::read_to_string(&sessions_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[1] = lines[1].replace("true", "maybe").replace("false", "maybe");
    lines[2] = lines[2].replacen(',', ",not_a_number_position,", 1);
    std::fs::write(&sessions_path, lines.join("\n")).unwrap();

    let ingest = run(&[
        "--config",
        config,
        "ingest",
        "--sessions",
        sessions_path.to_str().unwrap(),
        "--features",
        out.join("data/features.csv").to_str().unwrap(),
    ]);
    assert!(ingest.status.success(), "{}", String::from_utf8_lossy(&ingest.stderr));
    let stdout = String::from_utf8_lossy(&ingest.stdout);
    assert!(stdout.contains("rejected rows: 2"), "stdout: {stdout}");
    assert!(out.join("data/manifest.json").exists());
}

#[test]
fn missing_column_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let sessions = dir.path().join("sessions.csv");
    std::fs::write(
        &sessions,
        "session_id,session_position,session_length,track_id,skip_1,skip_3,not_skipped\n",
    )
    .unwrap();
    let features = dir.path().join("features.csv");
    std::fs::write(&features, "track_id,f0\na,0.5\n").unwrap();

    let out = run(&[
        "--output-dir",
        dir.path().join("run").to_str().unwrap(),
        "ingest",
        "--sessions",
        sessions.to_str().unwrap(),
        "--features",
        features.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("skip_2"));
}

#[test]
fn unknown_policy_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--output-dir",
        dir.path().join("run").to_str().unwrap(),
        "evaluate",
        "--policies",
        "bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_model_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--output-dir",
        dir.path().join("run").to_str().unwrap(),
        "train-user-model",
        "--model",
        "transformer",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn agent_training_without_cwm_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = small_config(dir.path(), &out);
    let result = run(&["--config", config.to_str().unwrap(), "train-agent"]);
    assert_eq!(result.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&result.stderr).contains("cwm"));
}

#[test]
fn agent_training_is_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = small_config(dir.path(), &out);
    let config = config.to_str().unwrap();

    assert!(run(&["--config", config, "train-user-model", "--model", "cwm"]).status.success());
    assert!(run(&["--config", config, "train-agent"]).status.success());
    let first = std::fs::read(out.join("checkpoints/agent.ckpt")).unwrap();
    let first_log = std::fs::read(out.join("logs/agent_train.csv")).unwrap();

    assert!(run(&["--config", config, "train-agent"]).status.success());
    let second = std::fs::read(out.join("checkpoints/agent.ckpt")).unwrap();
    let second_log = std::fs::read(out.join("logs/agent_train.csv")).unwrap();
    assert_eq!(first, second, "agent checkpoints differ between reruns");
    assert_eq!(first_log, second_log, "agent training logs differ between reruns");
}
