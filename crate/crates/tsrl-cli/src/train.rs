//! `train`: run one seeded training job into a run directory.
//!
//! A run directory ends up holding `run.json` (the resolved config and derived
//! network facts), `metrics.csv` (one row per episode), periodic
//! `ckpt_<step>.json/.bin` pairs, and the final `checkpoint.json/.bin`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsrl_core::agent::{Agent, MetricsRow, TrainObserver};
use tsrl_core::error::Error;
use tsrl_core::qnet::Variant;
use tsrl_core::Result;

use crate::checkpoint::{self, save_checkpoint, CheckpointState};
use crate::config::RunConfig;
use crate::metrics::MetricsWriter;

/// Decorrelates the environment's stream from the agent's seed streams.
const ENV_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Facts derived from the resolved config, echoed for later tooling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub param_count: usize,
    /// Channels that actually shift at each trunk level; empty unless the
    /// variant performs temporal shifts.
    pub shifted_channels: Vec<usize>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::External(format!("{}: {}", path.display(), e)))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))
    }
}

/// Overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub algo: Option<Variant>,
    pub out: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub rows: Vec<MetricsRow>,
}

impl TrainOutcome {
    /// Mean return over the final `window` episodes (all of them if fewer).
    pub fn recent_mean_return(&self, window: usize) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        let tail = &self.rows[self.rows.len().saturating_sub(window)..];
        tail.iter().map(|r| r.episode_return).sum::<f64>() / tail.len() as f64
    }
}

struct RunObserver<'a> {
    writer: MetricsWriter,
    run_dir: &'a Path,
    config: &'a RunConfig,
}

impl TrainObserver<f32> for RunObserver<'_> {
    fn on_episode(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.write_row(row)
    }

    fn on_snapshot(&mut self, step: u64, agent: &Agent<f32>) -> Result<()> {
        let path = checkpoint::periodic_path(self.run_dir, step);
        save_checkpoint(&path, &agent.online, &snapshot_state(agent, self.config))
    }
}

fn snapshot_state(agent: &Agent<f32>, config: &RunConfig) -> CheckpointState {
    let (explore, replay) = agent.rng_snapshots();
    CheckpointState {
        config: config.clone(),
        env_steps: agent.env_steps(),
        train_steps: agent.train_steps(),
        explore,
        replay,
    }
}

/// Resolve the config, run training, and write the run directory.
pub fn cmd_train(config_path: &Path, overrides: &TrainOverrides) -> Result<TrainOutcome> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(algo) = overrides.algo {
        config.algo = algo;
    }
    if let Some(out) = &overrides.out {
        config.out_dir = Some(out.clone());
    }
    config.out_dir = Some(config.resolved_out_dir());
    config.validate()?;
    run_training(&config)
}

/// Training body, callable with an already-resolved config.
pub fn run_training(config: &RunConfig) -> Result<TrainOutcome> {
    let net_config = config.network_config()?;
    let run_dir = config.resolved_out_dir();
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| Error::External(format!("{}: {}", run_dir.display(), e)))?;

    let shifted_channels = match config.algo {
        Variant::Tsrl => net_config.shifted_channels()?,
        _ => Vec::new(),
    };
    let manifest = RunManifest {
        config: config.clone(),
        param_count: net_config.param_count()?,
        shifted_channels,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::External(format!("run manifest encode: {}", e)))?;
    let manifest_path = run_dir.join("run.json");
    std::fs::write(&manifest_path, manifest_json)
        .map_err(|e| Error::External(format!("{}: {}", manifest_path.display(), e)))?;

    let mut agent = Agent::<f32>::new(net_config, config.agent.clone(), config.seed)?;
    let mut env = config.env.build(config.seed ^ ENV_SEED_SALT)?;

    let writer = MetricsWriter::create(&run_dir.join("metrics.csv"))?;
    let mut observer = RunObserver { writer, run_dir: &run_dir, config };
    let rows = agent.train_loop(&mut env, config.total_steps, config.eval_every, &mut observer)?;

    save_checkpoint(
        &checkpoint::final_path(&run_dir),
        &agent.online,
        &snapshot_state(&agent, config),
    )?;
    Ok(TrainOutcome { run_dir, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::read_metrics;

    fn quick_config(dir: &Path) -> RunConfig {
        let mut config: RunConfig = serde_json::from_str("{}").unwrap();
        config.algo = Variant::SingleFrame;
        config.frames = 2;
        config.fc_width = 16;
        config.trunk = vec![
            tsrl_core::qnet::TrunkLayer { out_channels: 4, kernel: (5, 5), stride: 3 },
            tsrl_core::qnet::TrunkLayer { out_channels: 4, kernel: (3, 3), stride: 2 },
        ];
        config.total_steps = 60;
        config.eval_every = 30;
        config.agent.batch_size = 8;
        config.agent.train_start = 16;
        config.agent.replay.capacity = 256;
        config.out_dir = Some(dir.join("run"));
        config
    }

    #[test]
    fn training_writes_the_full_run_directory() {
        let dir = tempfile::tempdir().unwrap();
        let config = quick_config(dir.path());
        let outcome = run_training(&config).unwrap();

        assert_eq!(outcome.run_dir, dir.path().join("run"));
        let metrics = read_metrics(&outcome.run_dir.join("metrics.csv")).unwrap();
        assert_eq!(metrics.rows.len(), 4, "60 steps of 15-step episodes");
        assert_eq!(metrics.rows.len(), outcome.rows.len());

        let manifest = RunManifest::load(&outcome.run_dir.join("run.json")).unwrap();
        assert_eq!(manifest.config.algo, Variant::SingleFrame);
        assert!(manifest.shifted_channels.is_empty());
        assert!(manifest.param_count > 0);

        assert!(outcome.run_dir.join("checkpoint.json").exists());
        assert!(outcome.run_dir.join("checkpoint.bin").exists());
        assert!(checkpoint::periodic_path(&outcome.run_dir, 30).exists());
        assert!(checkpoint::periodic_path(&outcome.run_dir, 60).exists());
    }

    #[test]
    fn tsrl_manifest_records_shifted_channels() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config(dir.path());
        config.algo = Variant::Tsrl;
        config.shift_divisor = 3;
        config.total_steps = 0;
        run_training(&config).unwrap();
        let manifest = RunManifest::load(&dir.path().join("run").join("run.json")).unwrap();
        assert_eq!(manifest.shifted_channels, vec![1, 1]);
    }

    #[test]
    fn zero_steps_leaves_a_header_only_metrics_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config(dir.path());
        config.total_steps = 0;
        let outcome = run_training(&config).unwrap();
        assert!(outcome.rows.is_empty());
        let text = std::fs::read_to_string(outcome.run_dir.join("metrics.csv")).unwrap();
        assert_eq!(text, format!("{}\n", crate::metrics::HEADER));
        assert!(outcome.run_dir.join("checkpoint.json").exists());
        assert!(outcome.recent_mean_return(20).is_nan());
    }

    #[test]
    fn repeat_runs_differ_only_in_wall_seconds() {
        let dir = tempfile::tempdir().unwrap();
        let mut first = quick_config(dir.path());
        first.out_dir = Some(dir.path().join("a"));
        let mut second = first.clone();
        second.out_dir = Some(dir.path().join("b"));

        run_training(&first).unwrap();
        run_training(&second).unwrap();

        let a = read_metrics(&dir.path().join("a").join("metrics.csv")).unwrap();
        let b = read_metrics(&dir.path().join("b").join("metrics.csv")).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (x, y) in a.rows.iter().zip(b.rows.iter()) {
            assert_eq!(x.step, y.step);
            assert_eq!(x.episode, y.episode);
            assert_eq!(x.episode_return, y.episode_return);
            assert!(x.loss_mean == y.loss_mean || (x.loss_mean.is_nan() && y.loss_mean.is_nan()));
            assert_eq!(x.epsilon, y.epsilon);
        }
    }

    #[test]
    fn overrides_take_precedence_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config(dir.path());
        config.total_steps = 0;
        let config_path = dir.path().join("config.json");
        std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();

        let overrides = TrainOverrides {
            seed: Some(9),
            algo: Some(Variant::FrameStack),
            out: Some(dir.path().join("override")),
        };
        let outcome = cmd_train(&config_path, &overrides).unwrap();
        assert_eq!(outcome.run_dir, dir.path().join("override"));
        let manifest = RunManifest::load(&outcome.run_dir.join("run.json")).unwrap();
        assert_eq!(manifest.config.seed, 9);
        assert_eq!(manifest.config.algo, Variant::FrameStack);
    }
}
