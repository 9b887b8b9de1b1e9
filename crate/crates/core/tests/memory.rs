mod common;

use anchorcast::memory::{
    assemble, best_candidate, build_strategy_memory, Candidate, MemoryConfig, StrategyMemory, UpdatePolicy,
};
use anchorcast::metrics::Forecast;
use anchorcast::model_pool::{build_case_library, cluster_purity, LibraryConfig, ModelSpec};
use anchorcast::reward::{
    compute_reward, group_advantages, read_jsonl, rollout_record, sft_records, write_jsonl, RewardConfig,
    RolloutRecord, SftRecord,
};
use anchorcast::synthetic::two_regimes;
use anchorcast::toolkit::ToolkitConfig;
use anchorcast::workflow::{
    ArchMode, Attempt, Engine, MockPolicy, PolicyAdapter, PromptTemplates, ReflectionResult, RunOptions,
    ToolSchedule, Trajectory, WorkflowConfig,
};
use anchorcast::{Error, Mode, Provenance, TimeSeries};
use common::{block, fixture, Fixture, Script, ScriptedPolicy};

fn build(f: &Fixture, policy: &dyn PolicyAdapter, config: &MemoryConfig) -> anchorcast::Result<(StrategyMemory, anchorcast::memory::BuildReport)> {
    let tk = ToolkitConfig::default();
    let wf = WorkflowConfig::default();
    let templates = PromptTemplates::builtin();
    let engine = Engine { library: &f.library, memory: None, policy, toolkit: &tk, config: &wf, templates: &templates };
    build_strategy_memory(&f.windows.train, &engine, config)
}

#[test]
fn single_path_stores_the_mock_schedule() {
    let f = fixture();
    let cfg = MemoryConfig { k_explore: 1, ..Default::default() };
    let (mem, report) = build(&f, &MockPolicy::default(), &cfg).unwrap();
    assert!(mem.len() <= f.windows.train.len());
    assert_eq!(mem.len() + report.skipped.len(), f.windows.train.len());
    let expected = ToolSchedule::default_for(Mode::Train, false);
    for e in mem.entries() {
        assert_eq!(e.schedule.optional, expected.optional);
        assert!(e.achieved_mse.is_finite());
    }
}

fn candidate(mse: f64, response: &str) -> Candidate {
    let mut t = Trajectory::new(30, Mode::Train, ArchMode::Full, None);
    t.attempts.push(Attempt {
        index: 1,
        schedule: ToolSchedule::mandatory_only("x"),
        prompt: "context".into(),
        response: response.into(),
        parsed: Some(vec![1.0; 24]),
        reflection: ReflectionResult::new(true, true, None),
    });
    t.final_forecast = Some(Forecast::new(vec![1.0; 24], Provenance::Refined).unwrap());
    Candidate { schedule: ToolSchedule::mandatory_only("x"), trajectory: t, mse }
}

#[test]
fn lowest_error_candidate_is_stored_and_exported() {
    let f = fixture();
    let cands = vec![candidate(4.0, "worse"), candidate(1.0, "better")];
    assert_eq!(best_candidate(&cands), Some(1));
    let w = &f.windows.train[..1];
    let cfg = MemoryConfig::default();
    let (mem, _) = assemble(w, vec![Ok(cands)], &cfg, f.library.distance()).unwrap();
    assert_eq!(mem.entries()[0].achieved_mse, 1.0);
    let sft = sft_records(&mem);
    assert_eq!(sft.len(), 1);
    assert_eq!(sft[0].response, "better");
    // ties keep the earlier candidate
    assert_eq!(best_candidate(&[candidate(2.0, "a"), candidate(2.0, "b")]), Some(0));
}

#[test]
fn malformed_candidates_never_enter_memory() {
    let f = fixture();
    let policy = ScriptedPolicy::new(vec![Script::Respond(block(1.0, 23))]);
    let cfg = MemoryConfig { k_explore: 2, ..Default::default() };
    let (mem, report) = build(&f, &policy, &cfg).unwrap();
    assert!(mem.is_empty());
    assert_eq!(report.skipped.len(), f.windows.train.len());
    assert!(report.skipped[0].reason.contains("validation"));
}

#[test]
fn empty_instance_list_is_an_error() {
    let f = fixture();
    let tk = ToolkitConfig::default();
    let wf = WorkflowConfig::default();
    let templates = PromptTemplates::builtin();
    let policy = MockPolicy::default();
    let engine = Engine { library: &f.library, memory: None, policy: &policy, toolkit: &tk, config: &wf, templates: &templates };
    assert!(matches!(build_strategy_memory(&[], &engine, &MemoryConfig::default()), Err(Error::Memory(_))));
}

#[test]
fn seeded_rebuilds_are_byte_identical() {
    let f = fixture();
    let cfg = MemoryConfig { seed: 5, ..Default::default() };
    let (a, _) = build(&f, &MockPolicy::default(), &cfg).unwrap();
    let (b, _) = build(&f, &MockPolicy::default(), &cfg).unwrap();
    assert_eq!(a.entries_jsonl().unwrap(), b.entries_jsonl().unwrap());
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    a.save(da.path()).unwrap();
    b.save(db.path()).unwrap();
    for name in [anchorcast::memory::ENTRIES_FILE, anchorcast::memory::MANIFEST_FILE] {
        assert_eq!(std::fs::read(da.path().join(name)).unwrap(), std::fs::read(db.path().join(name)).unwrap());
    }
    let loaded = StrategyMemory::load(da.path()).unwrap();
    assert_eq!(loaded.entries_jsonl().unwrap(), a.entries_jsonl().unwrap());
}

#[test]
fn memory_guides_planning_at_test_time() {
    let f = fixture();
    let (mem, _) = build(&f, &MockPolicy::default(), &MemoryConfig::default()).unwrap();
    let tk = ToolkitConfig::default();
    let wf = WorkflowConfig::default();
    let templates = PromptTemplates::builtin();
    let policy = MockPolicy::default();
    let engine = Engine { library: &f.library, memory: Some(&mem), policy: &policy, toolkit: &tk, config: &wf, templates: &templates };
    let t = engine.run(&f.windows.test[0].without_future(), Mode::Test, &RunOptions::default()).unwrap();
    assert!(!t.retrieved.is_empty());
    let top = mem.entries().iter().find(|e| e.id == t.retrieved[0].entry_id).unwrap();
    let expect: Vec<_> = top.schedule.optional.iter().copied().filter(|x| x.allowed_in(Mode::Test)).collect();
    assert_eq!(t.attempts[0].schedule.optional, expect);
}

#[test]
fn corpora_round_trip() {
    let f = fixture();
    let (mem, _) = build(&f, &MockPolicy::default(), &MemoryConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sft = sft_records(&mem);
    assert_eq!(sft.len(), mem.len());
    let p = dir.path().join("sft.jsonl");
    write_jsonl(&p, &sft).unwrap();
    assert_eq!(read_jsonl::<SftRecord>(&p).unwrap(), sft);

    let tk = ToolkitConfig::default();
    let wf = WorkflowConfig::default();
    let templates = PromptTemplates::builtin();
    let policy = MockPolicy::default();
    let engine = Engine { library: &f.library, memory: Some(&mem), policy: &policy, toolkit: &tk, config: &wf, templates: &templates };
    let w = &f.windows.validation[0];
    let truth = w.target_future().unwrap();
    let group: Vec<Trajectory> = (0..8)
        .map(|g| engine.run(&w.without_future(), Mode::Test, &RunOptions { schedule: None, sample: Some(g) }).unwrap())
        .collect();
    let cfg = RewardConfig::default();
    let rewards: Vec<_> = group.iter().map(|t| compute_reward(t, &truth, &cfg).unwrap()).collect();
    let adv = group_advantages(&rewards.iter().map(|r| r.total).collect::<Vec<_>>()).unwrap();
    let rec = rollout_record(&group, &rewards, &adv).unwrap();
    assert_eq!((rec.responses.len(), rec.rewards.len(), rec.advantages.len()), (8, 8, 8));
    // sampling makes the responses differ
    assert!(rec.responses.iter().any(|r| r != &rec.responses[0]));
    let p = dir.path().join("rollouts.jsonl");
    write_jsonl(&p, std::slice::from_ref(&rec)).unwrap();
    assert_eq!(read_jsonl::<RolloutRecord>(&p).unwrap(), vec![rec]);
    assert!(matches!(write_jsonl(&dir.path().join("missing/x.jsonl"), &sft), Err(Error::Export(_))));
}

#[test]
fn merge_policy_never_grows_by_more_than_one() {
    let f = fixture();
    let cfg = MemoryConfig { update_policy: UpdatePolicy::Merge, eta_merge: 0.6, ..Default::default() };
    let (merged, report) = build(&f, &MockPolicy::default(), &cfg).unwrap();
    let (appended, _) = build(&f, &MockPolicy::default(), &MemoryConfig::default()).unwrap();
    assert!(merged.len() <= appended.len());
    assert_eq!(appended.len(), report.stored);
}

#[test]
fn two_regimes_cluster_purely() {
    let (x, labels) = two_regimes(48, 20, 1);
    let series = TimeSeries::from_values(&x);
    let cfg = LibraryConfig { lookback: 24, horizon: 24, stride: 24, k_clusters: 2, ..Default::default() };
    let lib = build_case_library(&series, &cfg, &[ModelSpec::Naive]).unwrap();
    let purity = cluster_purity(&lib, |origin| labels[origin - 1].to_string());
    assert!(purity.iter().all(|p| *p >= 0.9), "{purity:?}");
}
