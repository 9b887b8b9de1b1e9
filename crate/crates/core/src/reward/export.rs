//! Line-delimited corpora for supervised fine-tuning and group rollouts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{GroupAdvantage, RewardBreakdown};
use crate::error::{Error, Result};
use crate::memory::StrategyMemory;
use crate::workflow::Trajectory;

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

/// A context prompt paired with the lowest-error teacher response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub schema_version: u32,
    pub entry_id: u64,
    pub origin_index: usize,
    pub prompt: String,
    pub response: String,
    pub achieved_mse: f64,
}

/// One prompt with `G` sampled responses and their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub schema_version: u32,
    pub origin_index: usize,
    pub prompt: String,
    pub responses: Vec<String>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
}

/// One record per memory entry, in entry order.
pub fn sft_records(memory: &StrategyMemory) -> Vec<SftRecord> {
    memory
        .entries()
        .iter()
        .map(|e| SftRecord {
            schema_version: CORPUS_SCHEMA_VERSION,
            entry_id: e.id,
            origin_index: e.origin_index,
            prompt: e.trajectory.prompt.clone(),
            response: e.trajectory.response.clone(),
            achieved_mse: e.achieved_mse,
        })
        .collect()
}

/// Builds a rollout record from a group of trajectories of the same window.
/// The prompt is the first attempt's context of the first trajectory; each
/// response is the last attempt of its trajectory.
pub fn rollout_record(group: &[Trajectory], rewards: &[RewardBreakdown], advantage: &GroupAdvantage) -> Result<RolloutRecord> {
    if group.is_empty() || group.len() != rewards.len() || group.len() != advantage.advantages.len() {
        return Err(Error::Export(format!(
            "group of {} trajectories with {} rewards and {} advantages",
            group.len(),
            rewards.len(),
            advantage.advantages.len()
        )));
    }
    let origin = group[0].origin_index;
    if group.iter().any(|t| t.origin_index != origin) {
        return Err(Error::Export("rollout group mixes windows".into()));
    }
    let prompt = group[0]
        .attempts
        .first()
        .map(|a| a.prompt.clone())
        .ok_or_else(|| Error::Export("trajectory has no policy attempt".into()))?;
    let responses = group.iter().map(|t| t.attempts.last().map(|a| a.response.clone()).unwrap_or_default()).collect();
    Ok(RolloutRecord {
        schema_version: CORPUS_SCHEMA_VERSION,
        origin_index: origin,
        prompt,
        responses,
        rewards: rewards.iter().map(|r| r.total).collect(),
        advantages: advantage.advantages.clone(),
        reward_mean: advantage.mean,
        reward_std: advantage.std,
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let export = |e: std::io::Error| Error::Export(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(export)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(export)?;
    }
    w.flush().map_err(export)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::Export(format!("{}: {e}", path.display())))?;
    let mut out = vec![];
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Export(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}
