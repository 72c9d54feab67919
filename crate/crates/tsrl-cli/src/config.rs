//! Run configuration: one JSON file describes an entire training run.
//!
//! Every field has a default, so `{}` is a valid config; unknown fields are
//! rejected so typos fail loudly instead of silently using a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsrl_core::agent::AgentConfig;
use tsrl_core::env::{CatchConfig, CatchEnv, Environment};
use tsrl_core::error::Error;
use tsrl_core::qnet::{default_trunk, NetworkConfig, TrunkLayer, Variant};
use tsrl_core::Result;

/// Environment selection plus its knobs. Only `catch` exists today; the
/// name is kept explicit so configs stay self-describing.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub name: String,
    pub catch: CatchConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection { name: "catch".to_string(), catch: CatchConfig::default() }
    }
}

impl EnvSection {
    pub fn validate(&self) -> Result<()> {
        if self.name != "catch" {
            return Err(Error::Config(format!(
                "env.name: unknown environment {:?}, expected \"catch\"",
                self.name
            )));
        }
        self.catch.validate()
    }

    pub fn build(&self, seed: u64) -> Result<CatchEnv> {
        self.validate()?;
        CatchEnv::new(self.catch.clone(), seed)
    }
}

/// Everything a training run needs, serializable as JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Network variant: tsrl, framestack, flare, or singleframe.
    pub algo: Variant,
    pub env: EnvSection,
    /// Frames per observation window.
    pub frames: usize,
    /// Channel fraction shifted per temporal-shift block (tsrl only).
    pub shift_divisor: usize,
    pub trunk: Vec<TrunkLayer>,
    pub fc_width: usize,
    pub agent: AgentConfig,
    pub total_steps: u64,
    pub eval_episodes: u64,
    /// Environment steps between periodic checkpoints; 0 keeps only the final one.
    pub eval_every: u64,
    pub seed: u64,
    /// Output directory; defaults to `runs/<algo>-seed<seed>`.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algo: Variant::Tsrl,
            env: EnvSection::default(),
            frames: 4,
            shift_divisor: 3,
            trunk: default_trunk(),
            fc_width: 128,
            agent: AgentConfig::default(),
            total_steps: 50_000,
            eval_episodes: 100,
            eval_every: 10_000,
            seed: 0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::External(format!("config {}: {}", path.display(), e))
        })?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("config {}: {}", path.display(), e))
        })?;
        config.validate()?;
        Ok(config)
    }

    /// The network geometry this run trains. The input plane and action count
    /// come from the environment so the config cannot contradict it.
    pub fn network_config(&self) -> Result<NetworkConfig> {
        let probe = self.env.build(0)?;
        let net = NetworkConfig {
            variant: self.algo,
            frames: self.frames,
            input_hw: probe.frame_shape(),
            actions: probe.action_count(),
            trunk: self.trunk.clone(),
            fc_width: self.fc_width,
            shift_divisor: self.shift_divisor,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.network_config()?;
        self.agent.validate()?;
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".to_string()));
        }
        Ok(())
    }

    /// Output directory after defaulting.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match &self.out_dir {
            Some(dir) => dir.clone(),
            None => PathBuf::from(format!("runs/{}-seed{}", self.algo.name(), self.seed)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_is_the_default_config() {
        let config: RunConfig = serde_json::from_str("{}").unwrap();
        config.validate().unwrap();
        assert_eq!(config.algo, Variant::Tsrl);
        assert_eq!(config.frames, 4);
        assert_eq!(config.shift_divisor, 3);
        assert_eq!(config.total_steps, 50_000);
        assert_eq!(config.seed, 0);
        assert_eq!(config.env.name, "catch");
        assert_eq!(config.resolved_out_dir(), PathBuf::from("runs/tsrl-seed0"));
    }

    #[test]
    fn unknown_fields_are_rejected_by_name() {
        let err = serde_json::from_str::<RunConfig>("{\"learning_rate\": 0.1}").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{}", err);

        let err = serde_json::from_str::<RunConfig>("{\"agent\": {\"gama\": 0.5}}").unwrap_err();
        assert!(err.to_string().contains("gama"), "{}", err);
    }

    #[test]
    fn nested_sections_deserialize() {
        let text = r#"{
            "algo": "flare",
            "frames": 3,
            "agent": {"gamma": 0.9, "adam": {"learning_rate": 0.001}},
            "env": {"catch": {"paddle_speed": 1}},
            "eval_every": 0,
            "total_steps": 123
        }"#;
        let config: RunConfig = serde_json::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.algo, Variant::Flare);
        assert_eq!(config.frames, 3);
        assert_eq!(config.agent.gamma, 0.9);
        assert_eq!(config.agent.adam.learning_rate, 0.001);
        assert_eq!(config.env.catch.paddle_speed, 1);
        assert_eq!(config.total_steps, 123);
    }

    #[test]
    fn network_config_matches_environment_geometry() {
        let config = RunConfig::default();
        let net = config.network_config().unwrap();
        assert_eq!(net.input_hw, (32, 32));
        assert_eq!(net.actions, 3);
        assert_eq!(net.frames, 4);
        assert_eq!(net.shifted_channels().unwrap(), vec![5, 10, 10]);
    }

    #[test]
    fn validation_rejects_bad_sections() {
        let mut config = RunConfig::default();
        config.env.name = "pong".to_string();
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("pong"), "{}", err);

        let mut config = RunConfig::default();
        config.eval_episodes = 0;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.shift_divisor = 0;
        assert!(config.validate().is_err());

        let mut config = RunConfig::default();
        config.agent.gamma = 1.5;
        assert!(config.validate().is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let mut config = RunConfig::default();
        config.algo = Variant::FrameStack;
        config.seed = 7;
        config.out_dir = Some(PathBuf::from("/tmp/x"));
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.algo, Variant::FrameStack);
        assert_eq!(back.seed, 7);
        assert_eq!(back.out_dir, Some(PathBuf::from("/tmp/x")));
    }
}
