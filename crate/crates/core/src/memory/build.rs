//! Strategy memory construction from training instances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::distance::ZScored;
use super::store::{MemoryConfig, MemoryEntry, RetrievalResult, StoredTrajectory, StrategyMemory};
use crate::error::{Error, Result};
use crate::metrics::observed_mse;
use crate::series::Window;
use crate::toolkit::Mode;
use crate::workflow::{render_plan, Engine, PlanRequest, RunOptions, ToolSchedule, Trajectory};

/// Instances that produced no entry, with the reason.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub instances: usize,
    pub stored: usize,
    pub skipped: Vec<SkippedInstance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedInstance {
    pub origin_index: usize,
    pub reason: String,
}

/// A scored exploration path.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub schedule: ToolSchedule,
    pub trajectory: Trajectory,
    pub mse: f64,
}

/// The planner's schedule for `window` in train mode, without retrieval.
pub fn initial_plan(engine: &Engine<'_>, window: &Window) -> Result<ToolSchedule> {
    let view = window.view();
    let has_cov = !view.exogenous().is_empty();
    let universe = ToolSchedule::universe(Mode::Train, has_cov);
    let retrieved = RetrievalResult::default();
    let prompt = render_plan(engine.templates, &view, Mode::Train, &universe, &retrieved, &[]);
    let req = PlanRequest { view, mode: Mode::Train, retrieved: &retrieved, feedback: &[], prompt: &prompt, attempt: 1 };
    let reply = engine.policy.plan(&req)?;
    Ok(ToolSchedule::sanitized(reply.value.optional, reply.value.rationale, Mode::Train, has_cov))
}

/// Schedules for the exploration paths of one instance: the initial plan
/// first, then `k_explore - 1` perturbations drawn from a generator seeded by
/// `(seed, instance)`.
pub fn exploration_schedules(
    initial: &ToolSchedule,
    has_covariates: bool,
    config: &MemoryConfig,
    instance: usize,
) -> Vec<ToolSchedule> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (instance as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut out = vec![initial.clone()];
    for _ in 1..config.k_explore {
        out.push(initial.perturbed(Mode::Train, has_covariates, config.toggle_probability, &mut rng));
    }
    out
}

/// Index of the lowest-MSE candidate; the earliest wins ties.
pub fn best_candidate(candidates: &[Candidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if best.is_none_or(|b| c.mse < candidates[b].mse) {
            best = Some(i);
        }
    }
    best
}

/// Runs every exploration path of one instance and keeps the valid ones.
pub fn explore_instance(
    engine: &Engine<'_>,
    window: &Window,
    config: &MemoryConfig,
    instance: usize,
) -> Result<std::result::Result<Vec<Candidate>, String>> {
    let Some(truth) = window.target_future() else {
        return Err(Error::Memory(format!("instance at {} has no future", window.origin_index())));
    };
    let initial = initial_plan(engine, window)?;
    let has_cov = !window.view().exogenous().is_empty();
    let mut valid = vec![];
    let mut reasons = vec![];
    for schedule in exploration_schedules(&initial, has_cov, config, instance) {
        let options = RunOptions { schedule: Some(schedule.clone()), sample: None };
        let traj = match engine.run(window, Mode::Train, &options) {
            Ok(t) => t,
            Err(e) => {
                reasons.push(e.to_string());
                continue;
            }
        };
        if !traj.is_valid() {
            reasons.push("format or logic validation failed".into());
            continue;
        }
        let Some(mse) = traj.final_values().and_then(|v| observed_mse(v, &truth)) else {
            reasons.push("future has no observed values".into());
            continue;
        };
        valid.push(Candidate { schedule, trajectory: traj, mse });
    }
    if valid.is_empty() {
        reasons.dedup();
        return Ok(Err(format!("no valid trajectory: {}", reasons.join("; "))));
    }
    Ok(Ok(valid))
}

/// Memory entry for the winning candidate of an instance.
pub fn entry_from(window: &Window, best: Candidate) -> Result<MemoryEntry> {
    let attempt = best
        .trajectory
        .accepted()
        .ok_or_else(|| Error::Memory("winning trajectory has no accepted attempt".into()))?;
    let view = window.view();
    Ok(MemoryEntry {
        id: 0,
        origin_index: window.origin_index(),
        lookback: view.matrix().to_owned(),
        target_channel: view.target_index(),
        schedule: best.schedule,
        evidence: best.trajectory.evidence.clone(),
        trajectory: StoredTrajectory {
            prompt: attempt.prompt.clone(),
            response: attempt.response.clone(),
            forecast: best.trajectory.final_values().unwrap_or_default().to_vec(),
        },
        achieved_mse: best.mse,
    })
}

/// Explores every training instance and stores the lowest-MSE valid
/// trajectory of each. The distance scales are calibrated on the instance
/// lookbacks. The engine should carry no memory so paths do not depend on
/// earlier instances.
pub fn build_strategy_memory(
    instances: &[Window],
    engine: &Engine<'_>,
    config: &MemoryConfig,
) -> Result<(StrategyMemory, BuildReport)> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::Memory("no training instances".into()));
    }
    let explored: Vec<_> = instances
        .iter()
        .enumerate()
        .map(|(i, w)| explore_instance(engine, w, config, i))
        .collect::<Result<_>>()?;
    assemble(instances, explored, config, engine.library.distance())
}

/// Sequential insertion of already explored instances, in instance order.
/// Split from exploration so callers may explore in parallel.
pub fn assemble(
    instances: &[Window],
    explored: Vec<std::result::Result<Vec<Candidate>, String>>,
    config: &MemoryConfig,
    base_distance: &super::DistanceConfig,
) -> Result<(StrategyMemory, BuildReport)> {
    if instances.is_empty() {
        return Err(Error::Memory("no training instances".into()));
    }
    let zs: Vec<ZScored> = instances.iter().map(|w| ZScored::new(&w.view().target())).collect();
    let distance = base_distance.calibrated(&zs)?;
    let mut memory = StrategyMemory::new(config.clone(), distance);
    let mut report = BuildReport { instances: instances.len(), ..Default::default() };
    for (w, outcome) in instances.iter().zip(explored) {
        match outcome {
            Ok(mut candidates) => {
                let i = best_candidate(&candidates).expect("non-empty");
                let entry = entry_from(w, candidates.swap_remove(i))?;
                memory.insert(entry)?;
                report.stored += 1;
            }
            Err(reason) => report.skipped.push(SkippedInstance { origin_index: w.origin_index(), reason }),
        }
    }
    Ok((memory, report))
}
