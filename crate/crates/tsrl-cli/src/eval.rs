//! `eval`: greedy-policy evaluation of a saved checkpoint.
//!
//! Episode `i` reseeds the environment with `seed + i`, so a checkpoint
//! evaluated twice with the same seed produces identical results.

use std::path::{Path, PathBuf};

use tsrl_core::agent::greedy_returns;
use tsrl_core::error::Error;
use tsrl_core::Result;

use crate::checkpoint::load_checkpoint;

pub struct EvalOutcome {
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub csv_path: PathBuf,
}

/// Roll out `episodes` greedy episodes and write `eval.csv` (`episode,return`)
/// next to the checkpoint manifest.
pub fn cmd_eval(checkpoint: &Path, episodes: u64, seed: u64) -> Result<EvalOutcome> {
    let loaded = load_checkpoint(checkpoint)?;
    let mut env = loaded.manifest.config.env.build(seed)?;
    let returns = greedy_returns(&loaded.net, &mut env, episodes, seed)?;
    let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;

    let dir = checkpoint.parent().unwrap_or_else(|| Path::new("."));
    let csv_path = dir.join("eval.csv");
    let mut text = String::from("episode,return\n");
    for (i, r) in returns.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, r));
    }
    std::fs::write(&csv_path, text)
        .map_err(|e| Error::External(format!("{}: {}", csv_path.display(), e)))?;
    Ok(EvalOutcome { returns, mean_return, csv_path })
}
