//! The agentic forecasting workflow: retrieval, planning, tool execution,
//! candidate generation and reflection with bounded retries.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Forecast;
use crate::model_pool::EnsembleBaseline;
use crate::toolkit::{DiagnosticEvidence, InvocationStatus, Mode, ToolId};

mod engine;
mod parse;
mod policy;
mod prompts;
mod remote;
mod schedule;

pub use engine::{execute_actions, fallback_forecast, refinement_decomposition, Engine, RunOptions, WorkflowState};
pub use parse::{parse_forecast, render_block};
pub use policy::{
    Exchange, ForecastRequest, LogicVerdict, MockConfig, MockPolicy, PlanRequest, PolicyAdapter, PolicyIds,
    ReflectRequest, Reply,
};
pub use prompts::{render_forecast, render_plan, render_reflect, Prompt, PromptTemplates, RoleTemplate};
pub use remote::{
    extract_content, parse_tools_line, parse_verdict, tools_for_reply, ChatMessage, ChatRequest, ChatResponse,
    ChatTransport, HttpTransport, RemoteConfig, RemotePolicy,
};
pub use schedule::{ToolSchedule, DEFAULT_OPTIONAL};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// Which components take part in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchMode {
    /// Policy only; the baseline is computed but never shown to the forecaster.
    AgentOnly,
    /// The ensemble baseline is the answer; no policy calls.
    AnchorerOnly,
    #[default]
    Full,
}

impl ArchMode {
    pub const ALL: [ArchMode; 3] = [ArchMode::AgentOnly, ArchMode::AnchorerOnly, ArchMode::Full];

    pub fn name(self) -> &'static str {
        match self {
            ArchMode::AgentOnly => "agent-only",
            ArchMode::AnchorerOnly => "anchorer-only",
            ArchMode::Full => "full",
        }
    }
}

impl fmt::Display for ArchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchMode::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture '{s}' (agent-only, anchorer-only, full)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowConfig {
    /// Reflection attempts before the mean fallback.
    pub c_max: usize,
    /// Extra attempts per policy call on transport errors.
    pub transport_retries: usize,
    pub arch: ArchMode,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self { c_max: 3, transport_retries: 2, arch: ArchMode::Full }
    }
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_max == 0 {
            return Err(Error::Config("c_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Format and logic indicators; `v = i_format * i_logic`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionResult {
    pub i_format: u8,
    pub i_logic: u8,
    pub v: u8,
    pub feedback: Option<String>,
}

impl ReflectionResult {
    pub fn new(format_ok: bool, logic_ok: bool, feedback: Option<String>) -> Self {
        let i_format = format_ok as u8;
        // logic is only checked on well-formed candidates
        let i_logic = (format_ok && logic_ok) as u8;
        let feedback = if i_format * i_logic == 1 { None } else { feedback };
        Self { i_format, i_logic, v: i_format * i_logic, feedback }
    }

    pub fn valid(&self) -> bool {
        self.v == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieve,
    Plan,
    Act,
    Forecast,
    Reflect,
    Fallback,
}

/// One `(s_j, a_j)` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub j: usize,
    pub stage: Stage,
    pub state: String,
    pub action: String,
}

/// One plan, act, forecast, reflect pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub index: usize,
    pub schedule: ToolSchedule,
    pub prompt: String,
    pub response: String,
    pub parsed: Option<Vec<f64>>,
    pub reflection: ReflectionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub entry_id: u64,
    pub similarity: f64,
}

/// Complete record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub schema_version: u32,
    pub origin_index: usize,
    pub mode: Mode,
    pub arch: ArchMode,
    /// `None` for anchorer-only runs.
    pub policy: Option<PolicyIds>,
    pub retrieved: Vec<RetrievedRef>,
    pub steps: Vec<Step>,
    pub attempts: Vec<Attempt>,
    pub baseline: Option<EnsembleBaseline>,
    /// Evidence of the last action stage.
    pub evidence: DiagnosticEvidence,
    /// Present on every completed run; absent only on partial trajectories
    /// attached to errors.
    pub final_forecast: Option<Forecast>,
    pub fallback: bool,
    pub policy_calls: usize,
    /// Verbatim request/response bodies, when recorded.
    pub exchanges: Vec<Exchange>,
}

impl Trajectory {
    pub fn new(origin_index: usize, mode: Mode, arch: ArchMode, policy: Option<PolicyIds>) -> Self {
        Self {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            origin_index,
            mode,
            arch,
            policy,
            retrieved: vec![],
            steps: vec![],
            attempts: vec![],
            baseline: None,
            evidence: DiagnosticEvidence::default(),
            final_forecast: None,
            fallback: false,
            policy_calls: 0,
            exchanges: vec![],
        }
    }

    /// Completed without the fallback and with a passing final reflection.
    /// Anchorer-only runs are valid whenever they completed.
    pub fn is_valid(&self) -> bool {
        if self.final_forecast.is_none() || self.fallback {
            return false;
        }
        match self.arch {
            ArchMode::AnchorerOnly => true,
            _ => self.attempts.last().is_some_and(|a| a.reflection.valid()),
        }
    }

    pub fn final_values(&self) -> Option<&[f64]> {
        self.final_forecast.as_ref().map(|f| f.values())
    }

    /// The accepted attempt, if any.
    pub fn accepted(&self) -> Option<&Attempt> {
        self.attempts.last().filter(|a| a.reflection.valid() && !self.fallback)
    }

    /// Tools that actually executed in the last action stage (bypassed
    /// invocations excluded).
    pub fn activated_tools(&self) -> Vec<ToolId> {
        self.evidence
            .invocations
            .iter()
            .filter(|i| i.status != InvocationStatus::Bypassed)
            .map(|i| i.tool)
            .collect()
    }

    /// `(lhs, rhs)` of the refinement decomposition against `truth`.
    pub fn decomposition(&self, truth: &[f64]) -> Option<Result<(f64, f64)>> {
        let base = self.baseline.as_ref()?;
        let fin = self.final_values()?;
        Some(refinement_decomposition(truth, &base.values, fin))
    }
}
