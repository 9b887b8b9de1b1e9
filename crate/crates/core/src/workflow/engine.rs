//! The retrieve, plan, act, forecast, reflect loop.

use crate::error::{Error, Result, WorkflowFailure};
use crate::memory::{RetrievalResult, StrategyMemory};
use crate::metrics::{sq_norm, Forecast, Provenance};
use crate::model_pool::{anchor_forecast, CaseLibrary, EnsembleBaseline};
use crate::series::{LookbackView, Window};
use crate::stats;
use crate::toolkit::{
    autoregressive_residual, basic_statistics, changepoint_trend, comprehensive_feature, cross_channel, data_quality,
    default_max_lag, event_summary, exogenous_analysis, statistical_analysis, trend_analysis, DiagnosticEvidence,
    InvocationStatus, Mode, ResidualOutcome, ToolId, ToolInvocation, ToolkitConfig,
};

use super::parse::parse_forecast;
use super::policy::{ForecastRequest, PlanRequest, PolicyAdapter, ReflectRequest, Reply};
use super::prompts::{render_forecast, render_plan, render_reflect, PromptTemplates};
use super::schedule::ToolSchedule;
use super::{ArchMode, Attempt, ReflectionResult, RetrievedRef, Stage, Step, Trajectory, WorkflowConfig};

/// Runs every scheduled tool in order on the lookback. Tool errors are
/// recorded as failed invocations; the residual tool is recorded as bypassed
/// outside train mode. The anchorer output lands in `evidence.baseline`.
pub fn execute_actions(
    schedule: &ToolSchedule,
    view: &LookbackView<'_>,
    library: &CaseLibrary,
    mode: Mode,
    toolkit: &ToolkitConfig,
) -> DiagnosticEvidence {
    let mut ev = DiagnosticEvidence::default();
    let max_lag = toolkit.max_lag.unwrap_or_else(|| default_max_lag(view.len(), view.horizon()));
    for tool in schedule.tools() {
        let outcome: Result<bool> = match tool {
            ToolId::ModelAuxiliary => anchor_forecast(view, library).map(|b| ev.baseline = Some(b)).map(|_| true),
            ToolId::StatisticalAnalysis => statistical_analysis(view).map(|r| ev.statistical = Some(r)).map(|_| true),
            ToolId::BasicStatistics => basic_statistics(view).map(|r| ev.basic = Some(r)).map(|_| true),
            ToolId::DataQuality => {
                ev.quality = Some(data_quality(view, toolkit.kappa, toolkit.dropout_threshold));
                Ok(true)
            }
            ToolId::ComprehensiveFeature => comprehensive_feature(view, toolkit.kappa, toolkit.dropout_threshold)
                .map(|r| ev.state = Some(r))
                .map(|_| true),
            ToolId::TrendAnalysis => trend_analysis(view).map(|r| ev.trend = Some(r)).map(|_| true),
            ToolId::ChangepointTrend => changepoint_trend(view, toolkit.changepoint_sensitivity)
                .map(|r| ev.dynamics = Some(r))
                .map(|_| true),
            ToolId::CrossChannel => cross_channel(view, max_lag).map(|r| ev.cross_channel = Some(r)).map(|_| true),
            ToolId::ExogenousAnalysis => {
                exogenous_analysis(view, toolkit.max_lag).map(|r| ev.exogenous = Some(r)).map(|_| true)
            }
            ToolId::EventSummary => event_summary(view, toolkit.flat_threshold, toolkit.osc_threshold)
                .map(|r| ev.event = Some(r))
                .map(|_| true),
            ToolId::AutoregressiveResidual => {
                autoregressive_residual(view, toolkit.p_max, mode).map(|outcome| match outcome {
                    ResidualOutcome::Fitted(r) => {
                        ev.residual = Some(r);
                        true
                    }
                    ResidualOutcome::Bypassed => false,
                })
            }
        };
        let status = match outcome {
            Ok(true) => InvocationStatus::Ok,
            Ok(false) => InvocationStatus::Bypassed,
            Err(e) => InvocationStatus::Failed { message: e.to_string() },
        };
        ev.invocations.push(ToolInvocation { tool, status });
    }
    ev
}

/// Mean of the observed lookback target, repeated over the horizon.
pub fn fallback_forecast(view: &LookbackView<'_>) -> Result<Forecast> {
    let obs = stats::observed(&view.target());
    let mean = stats::mean(&obs).ok_or_else(|| Error::workflow(WorkflowFailure::Unforecastable, None))?;
    Forecast::new(vec![mean; view.horizon()], Provenance::Fallback)
}

/// Change in squared error from refining `base` into `refined`, computed
/// directly (`lhs`) and through `|d|^2 - 2 <e_base, d>` (`rhs`).
pub fn refinement_decomposition(truth: &[f64], base: &[f64], refined: &[f64]) -> Result<(f64, f64)> {
    if truth.len() != base.len() || truth.len() != refined.len() {
        return Err(Error::Metric(format!(
            "shape mismatch: truth {}, baseline {}, refined {}",
            truth.len(),
            base.len(),
            refined.len()
        )));
    }
    let err_refined: Vec<f64> = refined.iter().zip(truth).map(|(p, y)| p - y).collect();
    let err_base: Vec<f64> = base.iter().zip(truth).map(|(p, y)| p - y).collect();
    let lhs = sq_norm(&err_refined) - sq_norm(&err_base);
    let delta: Vec<f64> = refined.iter().zip(base).map(|(r, b)| r - b).collect();
    let e_base: Vec<f64> = truth.iter().zip(base).map(|(y, b)| y - b).collect();
    let inner: f64 = e_base.iter().zip(&delta).map(|(e, d)| e * d).sum();
    Ok((lhs, sq_norm(&delta) - 2.0 * inner))
}

/// Decision state `s_j`: the baseline appears only after the action stage.
#[derive(Debug, Clone)]
pub struct WorkflowState {
    pub baseline: Option<EnsembleBaseline>,
    pub retrieved: RetrievalResult,
    pub history: Vec<String>,
    pub step: usize,
    pub retries: usize,
    pub mode: Mode,
}

impl WorkflowState {
    fn summary(&self) -> String {
        format!(
            "step={} retries={} baseline={} retrieved={} history={}",
            self.step,
            self.retries,
            if self.baseline.is_some() { "present" } else { "absent" },
            self.retrieved.hits.len(),
            self.history.len()
        )
    }
}

/// Extra controls for a single run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Use this schedule instead of calling the planner.
    pub schedule: Option<ToolSchedule>,
    /// Forecaster sampling seed.
    pub sample: Option<u64>,
}

/// Everything a run needs, shared read-only.
pub struct Engine<'a> {
    pub library: &'a CaseLibrary,
    pub memory: Option<&'a StrategyMemory>,
    pub policy: &'a dyn PolicyAdapter,
    pub toolkit: &'a ToolkitConfig,
    pub config: &'a WorkflowConfig,
    pub templates: &'a PromptTemplates,
}

struct Run<'e, 'v> {
    engine: &'e Engine<'e>,
    view: LookbackView<'v>,
    state: WorkflowState,
    traj: Trajectory,
}

impl<'e, 'v> Run<'e, 'v> {
    fn record(&mut self, stage: Stage, action: String) {
        self.state.step += 1;
        self.traj.steps.push(Step { j: self.state.step, stage, state: self.state.summary(), action: action.clone() });
        self.state.history.push(action);
    }

    fn fail(self, kind: WorkflowFailure) -> Error {
        Error::workflow(kind, Some(self.traj))
    }

    /// Calls a policy role, retrying transport errors.
    fn call<T>(&mut self, mut f: impl FnMut() -> Result<Reply<T>>) -> std::result::Result<T, String> {
        let mut last = String::new();
        for _ in 0..=self.engine.config.transport_retries {
            self.traj.policy_calls += 1;
            match f() {
                Ok(reply) => {
                    if let Some(x) = reply.exchange {
                        self.traj.exchanges.push(x);
                    }
                    return Ok(reply.value);
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(last)
    }
}

impl<'a> Engine<'a> {
    /// Runs one window. Only the lookback is read; `window.future` is never
    /// touched.
    pub fn run(&self, window: &Window, mode: Mode, options: &RunOptions) -> Result<Trajectory> {
        let view = window.view();
        let arch = self.config.arch;
        let policy = (arch != ArchMode::AnchorerOnly).then(|| self.policy.ids());
        let mut run = Run {
            engine: self,
            view,
            state: WorkflowState {
                baseline: None,
                retrieved: RetrievalResult::default(),
                history: vec![],
                step: 0,
                retries: 0,
                mode,
            },
            traj: Trajectory::new(view.origin_index(), mode, arch, policy),
        };
        if stats::observed(&view.target()).is_empty() {
            return Err(run.fail(WorkflowFailure::Unforecastable));
        }
        if arch == ArchMode::AnchorerOnly {
            return self.anchorer_only(run);
        }
        let has_cov = !view.exogenous().is_empty();
        if let Some(memory) = self.memory {
            run.state.retrieved = memory.retrieve_default(&view.target())?;
            run.traj.retrieved = run
                .state
                .retrieved
                .hits
                .iter()
                .map(|h| RetrievedRef { entry_id: h.entry.id, similarity: h.similarity })
                .collect();
            let ids: Vec<String> = run.traj.retrieved.iter().map(|r| r.entry_id.to_string()).collect();
            run.record(Stage::Retrieve, format!("retrieved entries [{}]", ids.join(",")));
        }
        let mut feedback: Vec<String> = vec![];
        for attempt in 1..=self.config.c_max {
            run.state.retries = attempt - 1;

            let schedule = match &options.schedule {
                Some(s) => ToolSchedule::sanitized(s.optional.clone(), s.rationale.clone(), mode, has_cov),
                None => {
                    let universe = ToolSchedule::universe(mode, has_cov);
                    let prompt = render_plan(self.templates, &view, mode, &universe, &run.state.retrieved, &feedback);
                    let retrieved = run.state.retrieved.clone();
                    let req = PlanRequest { view: window.view(), mode, retrieved: &retrieved, feedback: &feedback, prompt: &prompt, attempt };
                    match run.call(|| self.policy.plan(&req)) {
                        Ok(s) => ToolSchedule::sanitized(s.optional, s.rationale, mode, has_cov),
                        Err(m) => return Err(run.fail(WorkflowFailure::PlannerUnavailable(m))),
                    }
                }
            };
            run.record(Stage::Plan, format!("schedule [{}]", schedule.names().join(",")));

            let evidence = execute_actions(&schedule, &view, self.library, mode, self.toolkit);
            run.state.baseline = evidence.baseline.clone();
            run.traj.baseline = evidence.baseline.clone();
            run.traj.evidence = evidence.clone();
            let failed = evidence.invocations.iter().filter(|i| matches!(i.status, InvocationStatus::Failed { .. })).count();
            run.record(Stage::Act, format!("executed {} tools, {failed} failed", evidence.invocations.len()));
            if arch == ArchMode::Full && run.state.baseline.is_none() {
                let why = anchor_failure(&evidence);
                return Err(run.fail(WorkflowFailure::AnchorUnavailable(why)));
            }

            let given = if arch == ArchMode::Full { run.state.baseline.clone() } else { None };
            let prompt = render_forecast(self.templates, &view, given.as_ref(), &evidence, &run.state.retrieved, &feedback);
            let retrieved = run.state.retrieved.clone();
            let req = ForecastRequest {
                view: window.view(),
                baseline: given.as_ref(),
                evidence: &evidence,
                retrieved: &retrieved,
                feedback: &feedback,
                prompt: &prompt,
                attempt,
                sample: options.sample,
            };
            let response = match run.call(|| self.policy.forecast(&req)) {
                Ok(r) => r,
                Err(m) => return Err(run.fail(WorkflowFailure::ForecasterUnavailable(m))),
            };
            run.record(Stage::Forecast, format!("candidate response of {} bytes", response.len()));

            let parsed = parse_forecast(&response, view.horizon());
            let reflection = match &parsed {
                Err(msg) => ReflectionResult::new(false, false, Some(format!("format check failed: {msg}"))),
                Ok(values) => {
                    let rprompt = render_reflect(self.templates, view.horizon(), values, given.as_ref(), &evidence);
                    let rreq = ReflectRequest {
                        view: window.view(),
                        candidate: values,
                        baseline: given.as_ref(),
                        evidence: &evidence,
                        prompt: &rprompt,
                    };
                    match run.call(|| self.policy.reflect(&rreq)) {
                        Ok(v) => ReflectionResult::new(true, v.ok, v.feedback),
                        Err(m) => return Err(run.fail(WorkflowFailure::ReflectorUnavailable(m))),
                    }
                }
            };
            run.record(
                Stage::Reflect,
                format!("format={} logic={} v={}", reflection.i_format, reflection.i_logic, reflection.v),
            );
            let valid = reflection.valid();
            let fb = reflection.feedback.clone();
            run.traj.attempts.push(Attempt {
                index: attempt,
                schedule,
                prompt: prompt.text(),
                response,
                parsed: parsed.as_ref().ok().cloned(),
                reflection,
            });
            if valid {
                let values = parsed.expect("valid implies parsed");
                let tag = if arch == ArchMode::Full { Provenance::Refined } else { Provenance::Candidate };
                run.traj.final_forecast = Some(Forecast::new(values, tag)?);
                return Ok(run.traj);
            }
            feedback.push(fb.unwrap_or_else(|| "candidate rejected".into()));
        }
        let fallback = fallback_forecast(&view)?;
        run.record(Stage::Fallback, format!("retry limit {} reached; mean imputation", self.config.c_max));
        run.traj.final_forecast = Some(fallback);
        run.traj.fallback = true;
        Ok(run.traj)
    }

    /// Runs a window and returns the final forecast alongside the trajectory.
    pub fn run_forecast(&self, window: &Window, mode: Mode, options: &RunOptions) -> Result<(Forecast, Trajectory)> {
        let traj = self.run(window, mode, options)?;
        let f = traj.final_forecast.clone().expect("completed runs carry a final forecast");
        Ok((f, traj))
    }

    fn anchorer_only(&self, mut run: Run<'_, '_>) -> Result<Trajectory> {
        let schedule = ToolSchedule::mandatory_only("anchorer-only run");
        let evidence = execute_actions(&schedule, &run.view, self.library, run.state.mode, self.toolkit);
        run.traj.evidence = evidence.clone();
        run.record(Stage::Act, format!("schedule [{}]", schedule.names().join(",")));
        let Some(baseline) = evidence.baseline else {
            let why = anchor_failure(&run.traj.evidence);
            return Err(run.fail(WorkflowFailure::AnchorUnavailable(why)));
        };
        run.traj.final_forecast = Some(Forecast::new(baseline.values.clone(), Provenance::Baseline)?);
        run.traj.baseline = Some(baseline);
        Ok(run.traj)
    }
}

fn anchor_failure(evidence: &DiagnosticEvidence) -> String {
    evidence
        .invocations
        .iter()
        .find_map(|i| match (&i.tool, &i.status) {
            (ToolId::ModelAuxiliary, InvocationStatus::Failed { message }) => Some(message.clone()),
            _ => None,
        })
        .unwrap_or_else(|| "anchorer did not run".into())
}
