//! One function per CLI verb. Every verb reads the config and writes only
//! under the output directory (calibrate also rewrites the config file).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anchorcast::ingest::{read_csv_file, IngestReport};
use anchorcast::memory::{assemble, explore_instance, BuildReport, StrategyMemory};
use anchorcast::metrics::{observed_mae, observed_mse};
use anchorcast::model_pool::{build_case_library, cluster_purity, load_library, save_library, CaseLibrary};
use anchorcast::reward::{
    baseline_losses, calibrate, compute_reward, group_advantages, rollout_record, sft_records, write_jsonl,
};
use anchorcast::series::{chronological_split, split_windows, windows_in_range, SplitWindows};
use anchorcast::toolkit::ToolId;
use anchorcast::workflow::{
    ArchMode, Engine, MockPolicy, PolicyAdapter, PromptTemplates, RemotePolicy, RunOptions, Trajectory,
};
use anchorcast::{Mode, TimeSeries, Window};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AdapterKind, RunConfig};
use crate::error::{CliError, Context};

pub const DATASET_FILE: &str = "dataset.json";
pub const LIBRARY_FILE: &str = "library.bin";
pub const MEMORY_DIR: &str = "memory";
pub const EXPORT_DIR: &str = "export";
pub const API_KEY_ENV: &str = "ANCHORCAST_API_KEY";
const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// Settings shared by every verb after flag overrides.
pub struct Ctx {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub output: PathBuf,
    pub debug_transcripts: bool,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.output.join(name)
    }

    fn ensure_output(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.output).map_err(|e| CliError::io(&self.output, e))
    }

    fn thread_pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.run.workers)
            .build()
            .map_err(|e| CliError::Usage(format!("worker pool: {e}")))
    }

    fn policy(&self) -> Box<dyn PolicyAdapter> {
        match self.config.adapter.kind {
            AdapterKind::Mock => Box::new(MockPolicy::new(self.config.adapter.mock.clone())),
            AdapterKind::Remote => Box::new(RemotePolicy::http(
                self.config.adapter.remote.clone(),
                std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
                self.debug_transcripts,
            )),
        }
    }

    fn templates(&self) -> Result<PromptTemplates, CliError> {
        match &self.config.adapter.prompts {
            Some(p) => PromptTemplates::load(p).context(|| format!("prompt templates {}", p.display())),
            None => Ok(PromptTemplates::builtin()),
        }
    }

    fn dataset(&self) -> Result<DatasetSnapshot, CliError> {
        let path = self.path(DATASET_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config { path, message: format!("bad dataset snapshot: {e}") })
    }

    fn library(&self) -> Result<CaseLibrary, CliError> {
        let path = self.path(LIBRARY_FILE);
        load_library(&path).context(|| format!("loading {}", path.display()))
    }

    fn windows(&self, series: &TimeSeries) -> Result<SplitWindows, CliError> {
        let w = &self.config.window;
        split_windows(series, &self.config.split_spec(w.stride), w.lookback, w.horizon)
            .context(|| "windowing the dataset".into())
    }
}

/// The ingested series as seen by every later verb.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetSnapshot {
    pub schema_version: u32,
    /// File name of the source CSV.
    pub source: String,
    pub series: TimeSeries,
    pub labels: Option<Vec<String>>,
    pub report: IngestReport,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ingest(ctx: &Ctx, csv: Option<&Path>) -> Result<(), CliError> {
    let path = csv.map(Path::to_path_buf).unwrap_or_else(|| ctx.config.data.path.clone());
    let ingested = read_csv_file(&path, &ctx.config.roles()).context(|| format!("ingesting {}", path.display()))?;
    ctx.ensure_output()?;
    println!("rows: {}", ingested.report.rows);
    for c in &ingested.report.channels {
        println!("{:<10} {:<24} dropout {:.4}", c.role, c.name, c.dropout);
    }
    if !ingested.report.ignored_columns.is_empty() {
        println!("ignored columns: {}", ingested.report.ignored_columns.join(", "));
    }
    let snapshot = DatasetSnapshot {
        schema_version: SNAPSHOT_SCHEMA_VERSION,
        source: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        series: ingested.series,
        labels: ingested.labels,
        report: ingested.report,
    };
    write_json(&ctx.path(DATASET_FILE), &snapshot)?;
    write_json(&ctx.path("ingest_report.json"), &snapshot.report)
}

#[derive(Serialize)]
struct ClusterRow {
    cluster: usize,
    members: usize,
    best_model: String,
    purity: Option<f64>,
}

pub fn build_library(ctx: &Ctx) -> Result<(), CliError> {
    let data = ctx.dataset()?;
    let (train, _, _) =
        chronological_split(&data.series, &ctx.config.split_spec(1)).context(|| "splitting the dataset".into())?;
    let library = build_case_library(&train, &ctx.config.library_config(), &ctx.config.pool())
        .context(|| format!("building the case library from {} training rows", train.len()))?;
    let purity = data.labels.as_ref().map(|labels| cluster_purity(&library, |origin| labels[origin - 1].clone()));
    let ids = library.model_ids();
    let rows: Vec<ClusterRow> = library
        .clusters()
        .iter()
        .enumerate()
        .map(|(i, c)| ClusterRow {
            cluster: i,
            members: c.member_count,
            best_model: c
                .model_losses
                .iter()
                .zip(&ids)
                .min_by(|a, b| a.0.total_cmp(b.0))
                .map(|(_, m)| m.clone())
                .unwrap_or_default(),
            purity: purity.as_ref().map(|p| p[i]),
        })
        .collect();
    for r in &rows {
        print!("cluster {:>3}  members {:>5}  best {}", r.cluster, r.members, r.best_model);
        match r.purity {
            Some(p) => println!("  purity {p:.3}"),
            None => println!(),
        }
    }
    ctx.ensure_output()?;
    let path = ctx.path(LIBRARY_FILE);
    save_library(&library, &path).context(|| format!("writing {}", path.display()))?;
    write_json(&ctx.path("library_report.json"), &rows)
}

pub fn build_memory(ctx: &Ctx) -> Result<(), CliError> {
    let data = ctx.dataset()?;
    let library = ctx.library()?;
    let windows = ctx.windows(&data.series)?.train;
    let policy = ctx.policy();
    let templates = ctx.templates()?;
    // Exploration always runs the full workflow, whatever `--arch` says.
    let workflow = anchorcast::workflow::WorkflowConfig { arch: ArchMode::Full, ..ctx.config.workflow.clone() };
    let engine = Engine {
        library: &library,
        memory: None,
        policy: policy.as_ref(),
        toolkit: &ctx.config.toolkit,
        config: &workflow,
        templates: &templates,
    };
    let cfg = &ctx.config.memory;
    let explored = ctx.thread_pool()?.install(|| {
        windows
            .par_iter()
            .enumerate()
            .map(|(i, w)| explore_instance(&engine, w, cfg, i))
            .collect::<anchorcast::Result<Vec<_>>>()
    });
    let explored = explored.context(|| "exploring training instances".into())?;
    let (memory, report): (StrategyMemory, BuildReport) =
        assemble(&windows, explored, cfg, library.distance()).context(|| "assembling the strategy memory".into())?;
    println!("instances {}  stored {}  skipped {}", report.instances, report.stored, report.skipped.len());
    let dir = ctx.path(MEMORY_DIR);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    memory.save(&dir).context(|| format!("writing {}", dir.display()))?;
    write_json(&ctx.path("memory_report.json"), &report)
}

fn load_memory(ctx: &Ctx) -> Result<Option<StrategyMemory>, CliError> {
    let dir = ctx.path(MEMORY_DIR);
    if !dir.join(anchorcast::memory::MANIFEST_FILE).exists() {
        return Ok(None);
    }
    StrategyMemory::load(&dir).context(|| format!("loading {}", dir.display())).map(Some)
}

/// One line of the trajectory log.
#[derive(Debug, Serialize, Deserialize)]
pub struct LogRecord {
    pub origin_index: usize,
    pub status: String,
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub error: Option<String>,
    #[serde(with = "nan_as_null")]
    pub truth: Vec<f64>,
    pub trajectory: Option<Trajectory>,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

/// Aggregates over one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub arch: ArchMode,
    pub mode: Mode,
    pub adapter: AdapterKind,
    pub windows: usize,
    pub completed: usize,
    pub failed: usize,
    /// Mean of per-window MSE over completed windows with observed truth.
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub baseline_mse: Option<f64>,
    pub fallback_rate: Option<f64>,
    pub policy_calls: usize,
    pub degraded: bool,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

fn record_for(window: &Window, result: anchorcast::Result<Trajectory>) -> LogRecord {
    let truth = window.target_future().unwrap_or_default();
    match result {
        Ok(t) => {
            let fin = t.final_values().unwrap_or(&[]);
            LogRecord {
                origin_index: window.origin_index(),
                status: "ok".into(),
                mse: observed_mse(fin, &truth),
                mae: observed_mae(fin, &truth),
                error: None,
                truth,
                trajectory: Some(t),
            }
        }
        Err(e) => {
            let partial = match e {
                anchorcast::Error::Workflow { ref partial, .. } => partial.as_deref().cloned(),
                _ => None,
            };
            LogRecord {
                origin_index: window.origin_index(),
                status: "error".into(),
                mse: None,
                mae: None,
                error: Some(e.to_string()),
                truth,
                trajectory: partial,
            }
        }
    }
}

pub fn summarize(records: &[LogRecord], arch: ArchMode, mode: Mode, adapter: AdapterKind) -> Summary {
    let ok: Vec<&LogRecord> = records.iter().filter(|r| r.status == "ok").collect();
    let traj = || ok.iter().filter_map(|r| r.trajectory.as_ref().map(|t| (r, t)));
    let failed = records.len() - ok.len();
    Summary {
        arch,
        mode,
        adapter,
        windows: records.len(),
        completed: ok.len(),
        failed,
        mse: mean(ok.iter().filter_map(|r| r.mse)),
        mae: mean(ok.iter().filter_map(|r| r.mae)),
        baseline_mse: mean(traj().filter_map(|(r, t)| observed_mse(&t.baseline.as_ref()?.values, &r.truth))),
        fallback_rate: (!ok.is_empty())
            .then(|| traj().filter(|(_, t)| t.fallback).count() as f64 / ok.len() as f64),
        policy_calls: records.iter().filter_map(|r| r.trajectory.as_ref()).map(|t| t.policy_calls).sum(),
        degraded: failed > 0,
    }
}

/// Per-tool activation counts over completed windows.
pub fn tool_usage(records: &[LogRecord]) -> Vec<(ToolId, usize, f64)> {
    let done: Vec<&Trajectory> =
        records.iter().filter(|r| r.status == "ok").filter_map(|r| r.trajectory.as_ref()).collect();
    let mut counts: BTreeMap<ToolId, usize> = ToolId::ALL.iter().map(|t| (*t, 0)).collect();
    for t in &done {
        let mut seen = t.activated_tools();
        seen.sort();
        seen.dedup();
        for tool in seen {
            *counts.entry(tool).or_default() += 1;
        }
    }
    ToolId::ALL
        .iter()
        .map(|t| {
            let c = counts[t];
            (*t, c, if done.is_empty() { 0.0 } else { c as f64 / done.len() as f64 })
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let csv_err = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.into_iter().collect::<Vec<_>>()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn run_dir_name(arch: ArchMode, mode: Mode) -> String {
    format!("run-{arch}-{mode}")
}

pub fn run(ctx: &Ctx) -> Result<Summary, CliError> {
    let data = ctx.dataset()?;
    let library = ctx.library()?;
    let mode = ctx.config.run.mode;
    let arch = ctx.config.workflow.arch;
    let split = ctx.windows(&data.series)?;
    let windows = match mode {
        Mode::Test => split.test,
        Mode::Train => split.train,
    };
    let memory = if arch == ArchMode::AnchorerOnly { None } else { load_memory(ctx)? };
    if arch != ArchMode::AnchorerOnly && memory.is_none() {
        eprintln!("note: no strategy memory under {}; planning without retrieval", ctx.output.display());
    }
    let policy = ctx.policy();
    let templates = ctx.templates()?;
    let engine = Engine {
        library: &library,
        memory: memory.as_ref(),
        policy: policy.as_ref(),
        toolkit: &ctx.config.toolkit,
        config: &ctx.config.workflow,
        templates: &templates,
    };
    let records: Vec<LogRecord> = ctx.thread_pool()?.install(|| {
        windows
            .par_iter()
            .map(|w| {
                // Test runs never see the future; train runs may.
                let input = if mode == Mode::Test { w.without_future() } else { w.clone() };
                record_for(w, engine.run(&input, mode, &RunOptions::default()))
            })
            .collect()
    });

    let dir = ctx.path(&run_dir_name(arch, mode));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    write_results(&dir, &records)?;
    let summary = summarize(&records, arch, mode, ctx.config.adapter.kind);
    write_json(&dir.join("summary.json"), &summary)?;
    let text = summary_text(&summary);
    fs::write(dir.join("summary.txt"), &text).map_err(|e| CliError::io(&dir, e))?;
    print!("{text}");
    let usage = tool_usage(&records);
    write_csv(
        &dir.join("tool_usage.csv"),
        &["tool", "count", "frequency"],
        usage.iter().map(|(t, c, f)| vec![t.name().to_string(), c.to_string(), format!("{f:?}")]),
    )?;
    let log = dir.join("trajectories.jsonl");
    write_jsonl(&log, &records).context(|| format!("writing {}", log.display()))?;
    if summary.failed > 0 {
        return Err(CliError::Degraded { failed: summary.failed, total: summary.windows, report: dir.join("results.csv") });
    }
    Ok(summary)
}

fn write_results(dir: &Path, records: &[LogRecord]) -> Result<(), CliError> {
    let header = [
        "origin_index",
        "status",
        "mse",
        "mae",
        "baseline_mse",
        "produced_by",
        "attempts",
        "policy_calls",
        "fallback",
        "error",
    ];
    let rows = records.iter().map(|r| {
        let t = r.trajectory.as_ref();
        vec![
            r.origin_index.to_string(),
            r.status.clone(),
            opt(r.mse),
            opt(r.mae),
            opt(t.and_then(|t| observed_mse(&t.baseline.as_ref()?.values, &r.truth))),
            t.and_then(|t| t.final_forecast.as_ref())
                .map(|f| format!("{:?}", f.produced_by()).to_lowercase())
                .unwrap_or_default(),
            t.map(|t| t.attempts.len().to_string()).unwrap_or_default(),
            t.map(|t| t.policy_calls.to_string()).unwrap_or_default(),
            t.map(|t| t.fallback.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ]
    });
    write_csv(&dir.join("results.csv"), &header, rows)
}

pub fn summary_text(s: &Summary) -> String {
    let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
    let mut out = String::new();
    out.push_str(&format!("arch          {}\n", s.arch));
    out.push_str(&format!("mode          {}\n", s.mode));
    out.push_str(&format!("windows       {} ({} completed, {} failed)\n", s.windows, s.completed, s.failed));
    out.push_str(&format!("mse           {}\n", f(s.mse)));
    out.push_str(&format!("mae           {}\n", f(s.mae)));
    out.push_str(&format!("baseline mse  {}\n", f(s.baseline_mse)));
    out.push_str(&format!("fallback rate {}\n", f(s.fallback_rate)));
    out.push_str(&format!("policy calls  {}\n", s.policy_calls));
    if s.degraded {
        out.push_str("DEGRADED: some windows failed, see results.csv\n");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Sft,
    Rollouts,
}

pub fn export(ctx: &Ctx, kind: ExportKind) -> Result<PathBuf, CliError> {
    let dir = ctx.path(EXPORT_DIR);
    let memory = load_memory(ctx)?
        .ok_or_else(|| CliError::Usage(format!("no strategy memory under {}; run build-memory first", ctx.output.display())))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    match kind {
        ExportKind::Sft => {
            let path = dir.join("sft.jsonl");
            let records = sft_records(&memory);
            write_jsonl(&path, &records).context(|| format!("writing {}", path.display()))?;
            println!("{} sft records -> {}", records.len(), path.display());
            Ok(path)
        }
        ExportKind::Rollouts => {
            let data = ctx.dataset()?;
            let library = ctx.library()?;
            let windows = ctx.windows(&data.series)?.validation;
            let policy = ctx.policy();
            let templates = ctx.templates()?;
            let engine = Engine {
                library: &library,
                memory: Some(&memory),
                policy: policy.as_ref(),
                toolkit: &ctx.config.toolkit,
                config: &ctx.config.workflow,
                templates: &templates,
            };
            let g = ctx.config.export.group_size as u64;
            let seed = ctx.config.export.seed;
            let reward = &ctx.config.reward;
            let records = ctx.thread_pool()?.install(|| {
                windows
                    .par_iter()
                    .map(|w| {
                        let truth = w.target_future().unwrap_or_default();
                        let input = w.without_future();
                        let group = (0..g)
                            .map(|i| {
                                let opts = RunOptions { schedule: None, sample: Some(seed.wrapping_add(i)) };
                                engine.run(&input, Mode::Test, &opts)
                            })
                            .collect::<anchorcast::Result<Vec<_>>>()?;
                        let rewards =
                            group.iter().map(|t| compute_reward(t, &truth, reward)).collect::<anchorcast::Result<Vec<_>>>()?;
                        let adv = group_advantages(&rewards.iter().map(|r| r.total).collect::<Vec<_>>())?;
                        rollout_record(&group, &rewards, &adv)
                    })
                    .collect::<anchorcast::Result<Vec<_>>>()
            });
            let records = records.context(|| "generating rollouts on validation windows".into())?;
            let path = dir.join("rollouts.jsonl");
            write_jsonl(&path, &records).context(|| format!("writing {}", path.display()))?;
            println!("{} rollout groups of {g} -> {}", records.len(), path.display());
            Ok(path)
        }
    }
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    windows: usize,
    gamma: f64,
    nu: f64,
}

/// Sets the reward's `gamma` and `nu` from anchorer losses on validation
/// windows and writes them back into the config file.
pub fn calibrate_reward(ctx: &Ctx) -> Result<(f64, f64), CliError> {
    let data = ctx.dataset()?;
    let library = ctx.library()?;
    let c = &ctx.config;
    let (train, val, _) = c.split_spec(c.window.stride).segment_lengths(data.series.len());
    let windows = windows_in_range(
        &data.series,
        c.window.lookback,
        c.window.horizon,
        c.calibration.stride,
        train,
        train + val,
    )
    .context(|| "windowing the validation segment".into())?;
    let policy = ctx.policy();
    let templates = ctx.templates()?;
    let workflow = anchorcast::workflow::WorkflowConfig { arch: ArchMode::AnchorerOnly, ..c.workflow.clone() };
    let engine = Engine {
        library: &library,
        memory: None,
        policy: policy.as_ref(),
        toolkit: &c.toolkit,
        config: &workflow,
        templates: &templates,
    };
    let runs = ctx.thread_pool()?.install(|| {
        windows
            .par_iter()
            .map(|w| Ok((engine.run(&w.without_future(), Mode::Test, &RunOptions::default())?, w.target_future().unwrap_or_default())))
            .collect::<anchorcast::Result<Vec<_>>>()
    });
    let runs = runs.context(|| "anchoring validation windows".into())?;
    let losses = baseline_losses(runs.iter().map(|(t, y)| (t, y.as_slice()))).context(|| "baseline losses".into())?;
    let (gamma, nu) = calibrate(&losses).context(|| format!("{} validation windows", windows.len()))?;
    println!("gamma {gamma:?}  nu {nu:?}  from {} validation windows", losses.len());
    ctx.ensure_output()?;
    write_json(&ctx.path("calibration.json"), &CalibrationReport { windows: losses.len(), gamma, nu })?;
    if let Some(path) = &ctx.config_path {
        update_config(path, gamma, nu)?;
    }
    Ok((gamma, nu))
}

/// Rewrites `[reward] gamma` and `nu`, keeping comments and layout.
pub fn update_config(path: &Path, gamma: f64, nu: f64) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut doc: toml_edit::DocumentMut =
        text.parse().map_err(|e: toml_edit::TomlError| CliError::Config { path: path.to_path_buf(), message: e.to_string() })?;
    let reward = doc
        .entry("reward")
        .or_insert(toml_edit::table())
        .as_table_like_mut()
        .ok_or_else(|| CliError::Config { path: path.to_path_buf(), message: "[reward] is not a table".into() })?;
    reward.insert("gamma", toml_edit::value(gamma));
    reward.insert("nu", toml_edit::value(nu));
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(doc.to_string().as_bytes()).map_err(|e| CliError::io(path, e))
}
