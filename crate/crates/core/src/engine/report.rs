use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::searchspace::ArchChoice;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Architecture the shared weights were trained on this episode.
    pub trained: ArchChoice,
    /// Mean child dice loss over the episode's steps; absent in surrogate mode.
    pub train_loss: Option<f64>,
    pub rollouts: Vec<ArchChoice>,
    pub rewards: Vec<f64>,
    pub mean_reward: f64,
    pub max_reward: f64,
    /// Mean per-decision entropy of the sampled rollouts.
    pub entropy: f64,
    pub controller_loss: f64,
    pub baseline: f64,
    /// Greedy architecture after this episode's controller update.
    pub greedy: ArchChoice,
    pub duration_secs: f64,
}

impl EpisodeLog {
    /// Copy with wall-clock timing cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> EpisodeLog {
        EpisodeLog {
            duration_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Frequency of the most common greedy architecture over the last `window` logs.
pub fn convergence_report(logs: &[EpisodeLog], window: usize) -> Result<f64> {
    if window == 0 || window > logs.len() {
        return Err(Error::Argument(format!(
            "window {window} must lie in 1..={}",
            logs.len()
        )));
    }
    let mut counts: HashMap<&ArchChoice, usize> = HashMap::new();
    for l in &logs[logs.len() - window..] {
        *counts.entry(&l.greedy).or_default() += 1;
    }
    let modal = counts.values().copied().max().unwrap_or(0);
    Ok(modal as f64 / window as f64)
}

pub fn mean_over(logs: &[EpisodeLog], f: impl Fn(&EpisodeLog) -> f64) -> f64 {
    logs.iter().map(f).sum::<f64>() / logs.len().max(1) as f64
}

pub fn to_jsonl(logs: &[EpisodeLog]) -> Result<String> {
    let mut out = String::new();
    for l in logs {
        out.push_str(&serde_json::to_string(l)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn to_csv(logs: &[EpisodeLog]) -> String {
    let mut out = String::from("episode,mean_reward,max_reward,entropy\n");
    for l in logs {
        let _ = writeln!(out, "{},{},{},{}", l.episode, l.mean_reward, l.max_reward, l.entropy);
    }
    out
}

/// Writes `episodes.jsonl` and `episodes.csv` into `dir`.
pub fn write_logs(dir: &Path, logs: &[EpisodeLog]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jsonl = dir.join("episodes.jsonl");
    fs::write(&jsonl, to_jsonl(logs)?).map_err(|e| Error::io(&jsonl, e))?;
    let csv = dir.join("episodes.csv");
    fs::write(&csv, to_csv(logs)).map_err(|e| Error::io(&csv, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<EpisodeLog>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}
