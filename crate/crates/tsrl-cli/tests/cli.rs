//! End-to-end tests of the `tsrl` binary and file formats.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use tsrl_cli::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CheckpointState};
use tsrl_cli::config::RunConfig;
use tsrl_core::agent::Agent;
use tsrl_core::qnet::{QNetwork, TrunkLayer, Variant};

fn tsrl_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tsrl"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("spawn tsrl");
    assert!(
        output.status.success(),
        "expected success\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn run_err(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("spawn tsrl");
    assert!(
        !output.status.success(),
        "expected failure\nstdout: {}",
        String::from_utf8_lossy(&output.stdout)
    );
    output
}

fn tiny_config_json(steps: u64, seed: u64, out_dir: &Path) -> String {
    format!(
        r#"{{
  "algo": "singleframe",
  "frames": 2,
  "fc_width": 16,
  "trunk": [
    {{"out_channels": 4, "kernel": [5, 5], "stride": 3}},
    {{"out_channels": 4, "kernel": [3, 3], "stride": 2}}
  ],
  "total_steps": {steps},
  "eval_every": 0,
  "seed": {seed},
  "agent": {{"batch_size": 8, "train_start": 16, "replay": {{"capacity": 256}}}},
  "out_dir": {out:?}
}}"#,
        steps = steps,
        seed = seed,
        out = out_dir.to_string_lossy()
    )
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn train_tiny(dir: &Path, run_name: &str, steps: u64, seed: u64) -> PathBuf {
    let run_dir = dir.join(run_name);
    let config = write_config(dir, &format!("{}.json", run_name), &tiny_config_json(steps, seed, &run_dir));
    run_ok(tsrl_bin().arg("train").arg("--config").arg(&config));
    run_dir
}

#[test]
fn invalid_configs_fail_with_field_level_messages() {
    let dir = tempfile::tempdir().unwrap();
    let bad_field = write_config(dir.path(), "bad_field.json", r#"{"learning_rate": 0.1}"#);
    let output = run_err(tsrl_bin().arg("train").arg("--config").arg(&bad_field));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("learning_rate"), "stderr: {}", stderr);

    let bad_value = write_config(dir.path(), "bad_value.json", r#"{"agent": {"gamma": 2.0}}"#);
    let output = run_err(tsrl_bin().arg("train").arg("--config").arg(&bad_value));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("gamma"), "stderr: {}", stderr);

    let output = run_err(tsrl_bin().arg("train").arg("--config").arg(dir.path().join("missing.json")));
    assert!(!output.stderr.is_empty());
}

#[test]
fn zero_step_train_writes_header_only_metrics_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = train_tiny(dir.path(), "zero", 0, 3);
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics, "step,episode,episode_return,loss_mean,epsilon,wall_seconds\n");
    assert!(run_dir.join("run.json").exists());
    assert!(run_dir.join("checkpoint.json").exists());
}

#[test]
fn same_seed_runs_are_byte_identical_outside_wall_seconds() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_tiny(dir.path(), "det_a", 90, 5);
    let b = train_tiny(dir.path(), "det_b", 90, 5);

    let strip_wall = |path: &Path| {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|line| line.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let a_text = strip_wall(&a.join("metrics.csv"));
    let b_text = strip_wall(&b.join("metrics.csv"));
    assert!(a_text.lines().count() > 1, "runs should log episodes");
    assert_eq!(a_text, b_text);
}

#[test]
fn seed_and_algo_overrides_reach_the_run_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let default_dir = dir.path().join("unused");
    let config = write_config(dir.path(), "base.json", &tiny_config_json(0, 1, &default_dir));
    let out = dir.path().join("overridden");
    run_ok(
        tsrl_bin()
            .arg("train")
            .arg("--config")
            .arg(&config)
            .arg("--seed")
            .arg("42")
            .arg("--algo")
            .arg("framestack")
            .arg("--out")
            .arg(&out),
    );
    assert!(!default_dir.exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 42);
    assert_eq!(manifest["config"]["algo"], "framestack");

    let output = run_err(tsrl_bin().arg("train").arg("--config").arg(&config).arg("--algo").arg("dqn"));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("dqn"), "stderr: {}", stderr);
}

#[test]
fn tsrl_run_manifest_records_default_shifted_channels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = write_config(
        dir.path(),
        "tsrl.json",
        &format!(r#"{{"total_steps": 0, "eval_every": 0, "out_dir": {:?}}}"#, out.to_string_lossy()),
    );
    run_ok(tsrl_bin().arg("train").arg("--config").arg(&config));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["shifted_channels"], serde_json::json!([5, 10, 10]));
    assert_eq!(manifest["config"]["shift_divisor"], 3);
    assert_eq!(manifest["param_count"], 170_467);
}

#[test]
fn eval_prints_the_mean_and_repeats_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = train_tiny(dir.path(), "eval_run", 60, 7);
    let checkpoint = run_dir.join("checkpoint.json");

    let first = run_ok(
        tsrl_bin().arg("eval").arg("--checkpoint").arg(&checkpoint).arg("--episodes").arg("5").arg("--seed").arg("21"),
    );
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("mean_return"), "stdout: {}", stdout);
    assert!(stdout.contains("over 5 episodes"), "stdout: {}", stdout);
    let first_csv = std::fs::read_to_string(run_dir.join("eval.csv")).unwrap();
    assert!(first_csv.starts_with("episode,return\n1,"));
    assert_eq!(first_csv.lines().count(), 6);

    run_ok(
        tsrl_bin().arg("eval").arg("--checkpoint").arg(&checkpoint).arg("--episodes").arg("5").arg("--seed").arg("21"),
    );
    let second_csv = std::fs::read_to_string(run_dir.join("eval.csv")).unwrap();
    assert_eq!(first_csv, second_csv);
}

#[test]
fn aggregate_prints_a_table_and_rejects_empty_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_tiny(dir.path(), "agg_a", 60, 1);
    let b = train_tiny(dir.path(), "agg_b", 60, 2);

    let forward = run_ok(tsrl_bin().arg("aggregate").arg(&a).arg(&b));
    let table = String::from_utf8_lossy(&forward.stdout).into_owned();
    assert!(table.contains("algorithm"), "stdout: {}", table);
    assert!(table.contains("singleframe"), "stdout: {}", table);

    let backward = run_ok(tsrl_bin().arg("aggregate").arg(&b).arg(&a));
    assert_eq!(table, String::from_utf8_lossy(&backward.stdout));

    let empty = train_tiny(dir.path(), "agg_empty", 0, 3);
    run_err(tsrl_bin().arg("aggregate").arg(&empty));
    run_err(tsrl_bin().arg("aggregate"));
}

#[test]
fn plot_writes_svg_with_expected_line_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_tiny(dir.path(), "plot_a", 60, 1);
    let out = dir.path().join("curves.svg");
    run_ok(tsrl_bin().arg("plot").arg(&a).arg("--out").arg(&out));
    let svg = std::fs::read_to_string(&out).unwrap();
    assert_eq!(svg.matches("class=\"raw\"").count(), 1);
    assert_eq!(svg.matches("class=\"smooth\"").count(), 1);
    assert!(svg.contains("</svg>"));

    run_err(tsrl_bin().arg("plot").arg(dir.path().join("nope")).arg("--out").arg(&out));
    run_err(tsrl_bin().arg("plot").arg("--out").arg(&out));
}

#[test]
fn gradcheck_exits_zero_and_reports_every_component() {
    let output = run_ok(tsrl_bin().arg("gradcheck"));
    let stdout = String::from_utf8_lossy(&output.stdout);
    for component in [
        "conv2d",
        "linear",
        "relu",
        "huber",
        "temporal-shift",
        "qnet-tsrl",
        "qnet-framestack",
        "qnet-flare",
        "qnet-singleframe",
    ] {
        assert!(stdout.contains(component), "missing {} in: {}", component, stdout);
    }
    assert!(!stdout.contains("FAIL"), "stdout: {}", stdout);
}

#[test]
fn unknown_subcommands_and_missing_args_fail() {
    run_err(tsrl_bin().arg("explode"));
    run_err(tsrl_bin().arg("train"));
    run_err(tsrl_bin().arg("eval").arg("--episodes").arg("1").arg("--seed").arg("0"));
}

fn arbitrary_run_config() -> impl Strategy<Value = RunConfig> {
    let variant = prop_oneof![
        Just(Variant::Tsrl),
        Just(Variant::FrameStack),
        Just(Variant::Flare),
        Just(Variant::SingleFrame),
    ];
    let layer = (1usize..5, prop_oneof![Just(3usize), Just(5usize)], 1usize..4).prop_map(
        |(out_channels, k, stride)| TrunkLayer { out_channels, kernel: (k, k), stride },
    );
    (
        variant,
        1usize..4,
        proptest::collection::vec(layer, 1..3),
        1usize..17,
        1usize..9,
        0u64..1000,
    )
        .prop_map(|(algo, frames, trunk, fc_width, shift_divisor, seed)| {
            let mut config: RunConfig = serde_json::from_str("{}").unwrap();
            config.algo = algo;
            config.frames = frames;
            config.trunk = trunk;
            config.fc_width = fc_width;
            config.shift_divisor = shift_divisor;
            config.seed = seed;
            config
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Every save yields contiguous offsets whose counts sum to the blob size,
    // and loading restores each parameter bit for bit.
    #[test]
    fn checkpoints_round_trip_over_random_geometries(config in arbitrary_run_config()) {
        prop_assume!(config.validate().is_ok());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");

        let agent = Agent::<f32>::new(
            config.network_config().unwrap(),
            config.agent.clone(),
            config.seed,
        )
        .unwrap();
        let (explore, replay) = agent.rng_snapshots();
        let state = CheckpointState {
            config: config.clone(),
            env_steps: 0,
            train_steps: 0,
            explore,
            replay,
        };
        save_checkpoint(&path, &agent.online, &state).unwrap();

        let manifest: CheckpointManifest =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let mut offset = 0u64;
        for entry in &manifest.params {
            prop_assert_eq!(entry.offset, offset);
            prop_assert_eq!(entry.count, entry.shape.iter().product::<usize>() as u64);
            offset += entry.count * 4;
        }
        prop_assert_eq!(manifest.blob_len, offset);
        let blob_len = std::fs::metadata(dir.path().join(&manifest.blob_file)).unwrap().len();
        prop_assert_eq!(blob_len, manifest.blob_len);

        let loaded = load_checkpoint(&path).unwrap();
        let rebuilt: QNetwork<f32> = loaded.net;
        prop_assert_eq!(rebuilt.params.len(), agent.online.params.len());
        for (a, b) in rebuilt.params.iter().zip(agent.online.params.iter()) {
            prop_assert_eq!(a.value.data(), b.value.data());
        }
    }
}
