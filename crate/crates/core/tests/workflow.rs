mod common;

use anchorcast::model_pool::{anchor_forecast, build_case_library, LibraryConfig, ModelSpec};
use anchorcast::series::{split_windows, SplitSpec};
use anchorcast::synthetic::SeasonalTrend;
use anchorcast::toolkit::{data_quality, DiagnosticEvidence, InvocationStatus, ToolId, ToolkitConfig};
use anchorcast::workflow::{
    execute_actions, fallback_forecast, parse_forecast, refinement_decomposition, render_forecast, ArchMode, Engine,
    ForecastRequest, MockPolicy, PromptTemplates, ReflectRequest, RunOptions, ToolSchedule, Trajectory,
    WorkflowConfig,
};
use anchorcast::{Error, Mode, Provenance, Window, WorkflowFailure};
use common::{block, fixture, Script, ScriptedPolicy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn run_with(policy: &dyn anchorcast::workflow::PolicyAdapter, arch: ArchMode, window: &Window, mode: Mode) -> anchorcast::Result<Trajectory> {
    let f = fixture();
    let tk = ToolkitConfig::default();
    let wf = WorkflowConfig { arch, ..Default::default() };
    let templates = PromptTemplates::builtin();
    let engine = Engine { library: &f.library, memory: None, policy, toolkit: &tk, config: &wf, templates: &templates };
    engine.run(window, mode, &RunOptions::default())
}

#[test]
fn mock_plan_respects_mode_and_covariates() {
    let s = ToolSchedule::default_for(Mode::Train, true);
    assert!(s.contains(ToolId::CrossChannel));
    assert!(s.contains(ToolId::AutoregressiveResidual));
    assert!(s.mandatory.contains(&ToolId::ModelAuxiliary) && s.mandatory.contains(&ToolId::ExogenousAnalysis));
    let f = fixture();
    let t = run_with(&MockPolicy::default(), ArchMode::Full, &f.windows.test[0], Mode::Test).unwrap();
    for a in &t.attempts {
        assert!(!a.schedule.contains(ToolId::AutoregressiveResidual));
    }
    // empty retrieval still plans
    assert!(!t.attempts[0].schedule.optional.is_empty());
}

#[test]
fn mandatory_only_schedule_fills_two_slots() {
    let f = fixture();
    let w = &f.windows.test[0];
    let ev = execute_actions(&ToolSchedule::mandatory_only("m"), &w.view(), &f.library, Mode::Test, &ToolkitConfig::default());
    assert!(ev.baseline.is_some() && ev.exogenous.is_some());
    for t in ToolId::ALL {
        assert_eq!(ev.has_slot(t), t.is_mandatory(), "{t}");
    }
}

#[test]
fn residual_tool_is_bypassed_in_test_mode() {
    let f = fixture();
    let w = &f.windows.test[0];
    let mut s = ToolSchedule::mandatory_only("inject");
    s.optional.push(ToolId::AutoregressiveResidual);
    let ev = execute_actions(&s, &w.view(), &f.library, Mode::Test, &ToolkitConfig::default());
    assert!(ev.residual.is_none());
    let inv = ev.invocations.iter().find(|i| i.tool == ToolId::AutoregressiveResidual).unwrap();
    assert_eq!(inv.status, InvocationStatus::Bypassed);
}

#[test]
fn all_tools_in_train_mode_fill_every_slot() {
    let series = SeasonalTrend { length: 600, period: 12, seed: 3, ..Default::default() }.with_covariates();
    let spec = SplitSpec { stride: 12, ..Default::default() };
    let windows = split_windows(&series, &spec, 48, 24).unwrap();
    let train = series.slice(0, spec.segment_lengths(series.len()).0);
    let cfg = LibraryConfig { lookback: 48, horizon: 24, stride: 12, k_clusters: 3, ..Default::default() };
    let lib = build_case_library(&train, &cfg, &ModelSpec::default_pool(12)).unwrap();
    let all = ToolSchedule::new(ToolSchedule::universe(Mode::Train, true), "all".into(), Mode::Train).unwrap();
    let ev = execute_actions(&all, &windows.train[3].view(), &lib, Mode::Train, &ToolkitConfig::default());
    for t in ToolId::ALL {
        assert!(ev.has_slot(t), "{t} missing");
    }
    assert_eq!(ev.invocations.len(), 11);
    assert!(ev.is_consistent());
}

fn forecast_request<'a>(
    w: &'a Window,
    baseline: Option<&'a anchorcast::model_pool::EnsembleBaseline>,
    evidence: &'a DiagnosticEvidence,
    retrieved: &'a anchorcast::memory::RetrievalResult,
    prompt: &'a anchorcast::workflow::Prompt,
) -> ForecastRequest<'a> {
    ForecastRequest { view: w.view(), baseline, evidence, retrieved, feedback: &[], prompt, attempt: 1, sample: None }
}

#[test]
fn mock_forecaster_identity_without_trend_evidence() {
    let f = fixture();
    let w = &f.windows.test[1];
    let base = anchor_forecast(&w.view(), &f.library).unwrap();
    let ev = DiagnosticEvidence::default();
    let retrieved = Default::default();
    let prompt = render_forecast(&PromptTemplates::builtin(), &w.view(), Some(&base), &ev, &retrieved, &[]);
    let (values, _) = MockPolicy::default().candidate(&forecast_request(w, Some(&base), &ev, &retrieved, &prompt)).unwrap();
    assert_eq!(values, base.values);
}

#[test]
fn mock_forecaster_clips_to_quality_bounds() {
    let f = fixture();
    let w = &f.windows.test[1];
    let mut base = anchor_forecast(&w.view(), &f.library).unwrap();
    base.values.iter_mut().enumerate().for_each(|(i, v)| *v += if i % 2 == 0 { 1e6 } else { -1e6 });
    let ev = DiagnosticEvidence { quality: Some(data_quality(&w.view(), 3.0, 0.1)), ..Default::default() };
    let q = ev.quality.as_ref().unwrap().target().clone();
    let retrieved = Default::default();
    let prompt = render_forecast(&PromptTemplates::builtin(), &w.view(), Some(&base), &ev, &retrieved, &[]);
    let (values, _) = MockPolicy::default().candidate(&forecast_request(w, Some(&base), &ev, &retrieved, &prompt)).unwrap();
    let (lo, hi) = (q.clip_low.unwrap(), q.clip_high.unwrap());
    assert!(values.iter().all(|v| (lo..=hi).contains(v)));
}

#[test]
fn teacher_transcript_fixture_parses() {
    let text = include_str!("fixtures/teacher_h24.txt");
    let values = parse_forecast(text, 24).unwrap();
    assert_eq!(values.len(), 24);
    assert_eq!(values[0], 57.0);
    assert_eq!(values[23], 52.46);
    assert!(parse_forecast(text, 23).is_err());
}

#[test]
fn reflector_rejects_far_out_of_bounds_candidate() {
    let f = fixture();
    let w = &f.windows.test[0];
    let ev = DiagnosticEvidence { quality: Some(data_quality(&w.view(), 3.0, 0.1)), ..Default::default() };
    let sigma = anchorcast::stats::population_std(&w.view().target()).unwrap();
    let hi = ev.quality.as_ref().unwrap().target().clip_high.unwrap();
    let cand = vec![hi + 100.0 * sigma; 24];
    let prompt = anchorcast::workflow::Prompt { system: String::new(), user: String::new() };
    let req = ReflectRequest { view: w.view(), candidate: &cand, baseline: None, evidence: &ev, prompt: &prompt };
    let v = MockPolicy::default().verdict(&req);
    assert!(!v.ok);
    assert!(v.feedback.unwrap().contains("upper bound"));
    let fine = vec![w.view().target()[0]; 24];
    let req = ReflectRequest { candidate: &fine, ..req };
    assert!(MockPolicy::default().verdict(&req).ok);
}

#[test]
fn happy_path_accepts_first_attempt() {
    let f = fixture();
    let t = run_with(&MockPolicy::default(), ArchMode::Full, &f.windows.test[0], Mode::Test).unwrap();
    assert_eq!(t.attempts.len(), 1);
    assert!(!t.fallback);
    assert_eq!(t.attempts[0].reflection.v, 1);
    assert_eq!(t.final_forecast.as_ref().unwrap().produced_by(), Provenance::Refined);
    assert!(t.is_valid());
}

#[test]
fn short_answers_exhaust_retries_then_fall_back_to_mean() {
    let f = fixture();
    let w = &f.windows.test[0];
    let policy = ScriptedPolicy::new(vec![Script::Respond(block(1.0, 23))]);
    let t = run_with(&policy, ArchMode::Full, w, Mode::Test).unwrap();
    assert_eq!(t.attempts.len(), 3);
    assert!(t.attempts.iter().all(|a| a.reflection.i_format == 0 && a.reflection.v == 0));
    assert!(t.fallback);
    let target = w.view().target();
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    for v in t.final_values().unwrap() {
        assert!((v - mean).abs() < 1e-12);
    }
    assert_eq!(t.final_forecast.unwrap().produced_by(), Provenance::Fallback);
}

#[test]
fn second_attempt_is_used_after_one_invalid_answer() {
    let f = fixture();
    let w = &f.windows.test[0];
    let good = anchor_forecast(&w.view(), &f.library).unwrap().values;
    let policy = ScriptedPolicy::new(vec![
        Script::Respond("no block here".into()),
        Script::Respond(anchorcast::workflow::render_block(&good)),
    ]);
    let t = run_with(&policy, ArchMode::Full, w, Mode::Test).unwrap();
    assert_eq!(t.attempts.len(), 2);
    assert!(!t.fallback);
    assert_eq!(t.final_values().unwrap(), good.as_slice());
    assert!(t.attempts[0].reflection.feedback.as_ref().unwrap().contains("format"));
}

#[test]
fn transport_errors_are_retried_then_fatal() {
    let f = fixture();
    let w = &f.windows.test[0];
    let good = anchor_forecast(&w.view(), &f.library).unwrap().values;
    let policy = ScriptedPolicy::new(vec![Script::TransportError, Script::Respond(anchorcast::workflow::render_block(&good))]);
    let t = run_with(&policy, ArchMode::Full, w, Mode::Test).unwrap();
    assert_eq!(t.attempts.len(), 1);
    // planner + two forecaster tries + reflector
    assert_eq!(t.policy_calls, 4);

    let dead = ScriptedPolicy::new(vec![Script::TransportError]);
    match run_with(&dead, ArchMode::Full, w, Mode::Test) {
        Err(Error::Workflow { kind: WorkflowFailure::ForecasterUnavailable(_), partial: Some(p) }) => {
            assert!(p.final_forecast.is_none());
            assert_eq!(p.policy_calls, 1 + 3);
        }
        other => panic!("unexpected {other:?}"),
    }
    let mut planner_down = ScriptedPolicy::new(vec![Script::TransportError]);
    planner_down.fail_planner = true;
    assert!(matches!(
        run_with(&planner_down, ArchMode::Full, w, Mode::Test),
        Err(Error::Workflow { kind: WorkflowFailure::PlannerUnavailable(_), .. })
    ));
}

#[test]
fn anchorer_only_makes_no_policy_calls() {
    let f = fixture();
    let w = &f.windows.test[0];
    let t = run_with(&MockPolicy::default(), ArchMode::AnchorerOnly, w, Mode::Test).unwrap();
    assert_eq!(t.policy_calls, 0);
    assert!(t.policy.is_none());
    let base = anchor_forecast(&w.view(), &f.library).unwrap();
    assert_eq!(t.final_values().unwrap(), base.values.as_slice());
    assert_eq!(t.final_forecast.unwrap().produced_by(), Provenance::Baseline);
}

#[test]
fn agent_only_hides_the_baseline() {
    let f = fixture();
    let t = run_with(&MockPolicy::default(), ArchMode::AgentOnly, &f.windows.test[0], Mode::Test).unwrap();
    let prompt = &t.attempts[0].prompt;
    assert!(prompt.contains("not provided"));
    assert!(!prompt.contains("[model_auxiliary]"));
    assert_eq!(t.final_forecast.unwrap().produced_by(), Provenance::Candidate);
}

#[test]
fn fallback_examples() {
    let w = Window::univariate(&[10.0, 15.0, f64::NAN, 12.5], None, 4).unwrap();
    assert_eq!(fallback_forecast(&w.view()).unwrap().values(), &[12.5; 4]);
    let c = Window::univariate(&[7.0; 9], None, 3).unwrap();
    assert_eq!(fallback_forecast(&c.view()).unwrap().values(), &[7.0; 3]);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let r = Window::univariate(&x, None, 5).unwrap();
    let oracle = x.iter().sum::<f64>() / 50.0;
    for v in fallback_forecast(&r.view()).unwrap().values() {
        assert!((v - oracle).abs() < 1e-12);
    }
    let empty = Window::univariate(&[f64::NAN; 6], None, 2).unwrap();
    assert!(matches!(fallback_forecast(&empty.view()), Err(Error::Workflow { kind: WorkflowFailure::Unforecastable, .. })));
}

#[test]
fn unforecastable_window_is_a_hard_error() {
    let f = fixture();
    let w = Window::univariate(&[f64::NAN; 24], None, 24).unwrap();
    let _ = f;
    assert!(matches!(
        run_with(&MockPolicy::default(), ArchMode::Full, &w, Mode::Test),
        Err(Error::Workflow { kind: WorkflowFailure::Unforecastable, .. })
    ));
}

#[test]
fn decomposition_examples() {
    let y = [1.0, -2.0, 3.0];
    let b = [0.5, -1.0, 2.0];
    assert_eq!(refinement_decomposition(&y, &b, &b).unwrap(), (0.0, 0.0));
    let (lhs, rhs) = refinement_decomposition(&y, &b, &y).unwrap();
    let e_base: f64 = y.iter().zip(&b).map(|(a, c)| (a - c) * (a - c)).sum();
    assert!((lhs + e_base).abs() < 1e-12 && (rhs + e_base).abs() < 1e-12);
    assert!(matches!(refinement_decomposition(&y, &b, &[1.0]), Err(Error::Metric(_))));
}

#[test]
fn poisoned_future_leaves_test_runs_unchanged() {
    let f = fixture();
    let policy = MockPolicy::default();
    for arch in ArchMode::ALL {
        for w in f.windows.test.iter().take(4) {
            let clean = run_with(&policy, arch, &w.without_future(), Mode::Test).unwrap();
            let poison = w.target_future().map(|v| v.len()).map(|n| ndarray::Array2::from_elem((n, 1), 1e12)).unwrap();
            let poisoned = run_with(&policy, arch, &w.with_future(Some(poison)).unwrap(), Mode::Test).unwrap();
            assert_eq!(serde_json::to_string(&clean).unwrap(), serde_json::to_string(&poisoned).unwrap());
            assert!(clean.evidence.residual.is_none());
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let f = fixture();
    let a = run_with(&MockPolicy::default(), ArchMode::Full, &f.windows.test[2], Mode::Test).unwrap();
    let b = run_with(&MockPolicy::default(), ArchMode::Full, &f.windows.test[2], Mode::Test).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn decomposition_identity(seed in any::<u64>(), n in 1usize..64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect::<Vec<f64>>();
        let (y, b, p) = (draw(), draw(), draw());
        let (lhs, rhs) = refinement_decomposition(&y, &b, &p).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attempts_never_exceed_the_retry_limit(pattern in proptest::collection::vec(0u8..3, 1..6)) {
        let f = fixture();
        let w = &f.windows.test[0];
        let good = anchorcast::workflow::render_block(&anchor_forecast(&w.view(), &f.library).unwrap().values);
        let script: Vec<Script> = pattern
            .iter()
            .map(|k| match k {
                0 => Script::Respond(good.clone()),
                1 => Script::Respond(block(1.0, 5)),
                _ => Script::Respond(block(1e15, 24)),
            })
            .collect();
        let policy = ScriptedPolicy::new(script);
        let t = run_with(&policy, ArchMode::Full, w, Mode::Test).unwrap();
        // the script repeats its last step once exhausted
        let mut expanded = pattern.clone();
        while expanded.len() < 3 {
            expanded.push(*pattern.last().unwrap());
        }
        let expected = expanded.iter().take(3).position(|k| *k == 0).map(|i| i + 1).unwrap_or(3);
        prop_assert_eq!(t.attempts.len(), expected);
        prop_assert!(t.attempts.len() <= 3);
        prop_assert_eq!(t.fallback, !expanded.iter().take(3).any(|k| *k == 0));
        if !t.fallback {
            prop_assert!(t.attempts.last().unwrap().reflection.valid());
        }
    }
}
