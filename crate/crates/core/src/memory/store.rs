//! Strategy memory: stored `<x, A*, O*, tau*>` tuples with similarity
//! retrieval and append/merge updates.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::distance::{DistanceConfig, ZScored};
use crate::error::{Error, Result};
use crate::serde_nan;
use crate::toolkit::DiagnosticEvidence;
use crate::workflow::ToolSchedule;

pub const MEMORY_SCHEMA_VERSION: u32 = 1;
pub const ENTRIES_FILE: &str = "memory.jsonl";
pub const MANIFEST_FILE: &str = "memory.manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePolicy {
    #[default]
    Append,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    /// Retrieval threshold on similarity.
    pub eta: f64,
    /// Retrieval count.
    pub top_k: usize,
    pub update_policy: UpdatePolicy,
    /// Similarity at which a merge fuses into the nearest entry.
    pub eta_merge: f64,
    /// Exploration paths per training instance.
    pub k_explore: usize,
    /// Probability of toggling each optional tool on an exploration path.
    pub toggle_probability: f64,
    pub seed: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            top_k: 3,
            update_policy: UpdatePolicy::Append,
            eta_merge: 0.9,
            k_explore: 4,
            toggle_probability: 0.5,
            seed: 0,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.toggle_probability) {
            return Err(Error::Config("memory.toggle_probability must be in [0, 1]".into()));
        }
        if self.k_explore == 0 {
            return Err(Error::Config("memory.k_explore must be positive".into()));
        }
        if !self.eta.is_finite() || !self.eta_merge.is_finite() {
            return Err(Error::Config("memory thresholds must be finite".into()));
        }
        Ok(())
    }
}

/// The best trajectory found for an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTrajectory {
    /// Full forecasting context given to the forecaster.
    pub prompt: String,
    pub response: String,
    pub forecast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub id: u64,
    pub origin_index: usize,
    #[serde(with = "serde_nan::matrix")]
    pub lookback: Array2<f64>,
    pub target_channel: usize,
    pub schedule: ToolSchedule,
    pub evidence: DiagnosticEvidence,
    pub trajectory: StoredTrajectory,
    pub achieved_mse: f64,
}

impl MemoryEntry {
    pub fn target(&self) -> Vec<f64> {
        self.lookback.column(self.target_channel).to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub entry: MemoryEntry,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: Vec<f64>,
    /// Sorted by similarity, descending; ties keep insertion order.
    pub hits: Vec<RetrievalHit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum UpdateOutcome {
    Appended { id: u64 },
    /// Fused into an existing entry; `replaced` tells whether the incoming
    /// trajectory won on MSE.
    Merged { id: u64, replaced: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    config: MemoryConfig,
    distance: DistanceConfig,
    entry_count: usize,
    next_id: u64,
}

/// Readers may share a memory freely; updates need `&mut`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyMemory {
    config: MemoryConfig,
    distance: DistanceConfig,
    entries: Vec<MemoryEntry>,
    next_id: u64,
    index: Vec<ZScored>,
}

impl StrategyMemory {
    pub fn new(config: MemoryConfig, distance: DistanceConfig) -> Self {
        Self { config, distance, entries: vec![], next_id: 0, index: vec![] }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn distance(&self) -> &DistanceConfig {
        &self.distance
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries with similarity at least `eta`, best `k` first.
    pub fn retrieve(&self, query: &[f64], k: usize, eta: f64) -> Result<RetrievalResult> {
        let q = ZScored::new(query);
        let mut scored = Vec::with_capacity(self.entries.len());
        for (i, z) in self.index.iter().enumerate() {
            let s = self.distance.similarity(&q, z)?;
            if s >= eta {
                scored.push((i, s));
            }
        }
        // stable sort keeps insertion order among equal similarities
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(RetrievalResult {
            query: query.to_vec(),
            hits: scored
                .into_iter()
                .map(|(i, similarity)| RetrievalHit { entry: self.entries[i].clone(), similarity })
                .collect(),
        })
    }

    /// Retrieval with the configured `K` and `eta`.
    pub fn retrieve_default(&self, query: &[f64]) -> Result<RetrievalResult> {
        self.retrieve(query, self.config.top_k, self.config.eta)
    }

    fn check(&self, entry: &MemoryEntry) -> Result<()> {
        if !entry.achieved_mse.is_finite() || entry.achieved_mse < 0.0 {
            return Err(Error::Memory(format!("achieved_mse {} is not a valid loss", entry.achieved_mse)));
        }
        if entry.target_channel >= entry.lookback.ncols() {
            return Err(Error::Memory("target channel out of range".into()));
        }
        if let Some(first) = self.entries.first() {
            if first.lookback.dim() != entry.lookback.dim() {
                return Err(Error::Memory(format!(
                    "lookback shape {:?} differs from stored {:?}",
                    entry.lookback.dim(),
                    first.lookback.dim()
                )));
            }
        }
        Ok(())
    }

    fn append(&mut self, mut entry: MemoryEntry) -> UpdateOutcome {
        entry.id = self.next_id;
        self.next_id += 1;
        self.index.push(ZScored::new(&entry.target()));
        self.entries.push(entry);
        UpdateOutcome::Appended { id: self.next_id - 1 }
    }

    /// Inserts `entry` under `policy`. The incoming `id` is ignored; appended
    /// entries get the next free identifier.
    ///
    /// Merge fuses into the most similar entry when its similarity reaches
    /// `eta_merge`: the lookbacks are averaged elementwise and the lower-MSE
    /// trajectory is kept. Otherwise the entry is appended.
    pub fn update(&mut self, entry: MemoryEntry, policy: UpdatePolicy, eta_merge: f64) -> Result<UpdateOutcome> {
        self.check(&entry)?;
        if policy == UpdatePolicy::Append || self.entries.is_empty() {
            return Ok(self.append(entry));
        }
        let q = ZScored::new(&entry.target());
        let mut best: Option<(usize, f64)> = None;
        for (i, z) in self.index.iter().enumerate() {
            let s = self.distance.similarity(&q, z)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) if s >= eta_merge => {
                let stored = &mut self.entries[i];
                stored.lookback = Zip::from(&stored.lookback).and(&entry.lookback).map_collect(|a, b| {
                    match (a.is_nan(), b.is_nan()) {
                        (false, false) => 0.5 * (a + b),
                        (true, false) => *b,
                        _ => *a,
                    }
                });
                let replaced = entry.achieved_mse < stored.achieved_mse;
                if replaced {
                    stored.origin_index = entry.origin_index;
                    stored.schedule = entry.schedule;
                    stored.evidence = entry.evidence;
                    stored.trajectory = entry.trajectory;
                    stored.achieved_mse = entry.achieved_mse;
                }
                let id = stored.id;
                self.index[i] = ZScored::new(&self.entries[i].target());
                Ok(UpdateOutcome::Merged { id, replaced })
            }
            _ => Ok(self.append(entry)),
        }
    }

    /// Update with the configured policy and merge threshold.
    pub fn insert(&mut self, entry: MemoryEntry) -> Result<UpdateOutcome> {
        let (policy, eta_merge) = (self.config.update_policy, self.config.eta_merge);
        self.update(entry, policy, eta_merge)
    }

    /// One JSON object per line, in insertion order.
    pub fn entries_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = vec![];
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    /// Writes the entry file and the sidecar manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(ENTRIES_FILE))?);
        w.write_all(&self.entries_jsonl()?)?;
        w.flush()?;
        let manifest = Manifest {
            schema_version: MEMORY_SCHEMA_VERSION,
            config: self.config.clone(),
            distance: self.distance,
            entry_count: self.entries.len(),
            next_id: self.next_id,
        };
        let mut m = serde_json::to_vec_pretty(&manifest)?;
        m.push(b'\n');
        std::fs::write(dir.join(MANIFEST_FILE), m)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
        if manifest.schema_version != MEMORY_SCHEMA_VERSION {
            return Err(Error::Memory(format!("unsupported memory schema {}", manifest.schema_version)));
        }
        let mut memory = StrategyMemory::new(manifest.config, manifest.distance);
        let reader = BufReader::new(File::open(dir.join(ENTRIES_FILE))?);
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: MemoryEntry = serde_json::from_str(&line)
                .map_err(|e| Error::Memory(format!("{}:{}: {e}", ENTRIES_FILE, n + 1)))?;
            memory.check(&entry)?;
            if memory.entries.iter().any(|x| x.id == entry.id) {
                return Err(Error::Memory(format!("duplicate entry id {}", entry.id)));
            }
            memory.index.push(ZScored::new(&entry.target()));
            memory.entries.push(entry);
        }
        if memory.entries.len() != manifest.entry_count {
            return Err(Error::Memory(format!(
                "manifest lists {} entries, file has {}",
                manifest.entry_count,
                memory.entries.len()
            )));
        }
        memory.next_id = manifest.next_id;
        Ok(memory)
    }
}
