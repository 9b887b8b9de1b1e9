use std::fmt;

use crate::toolkit::ToolId;
use crate::workflow::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a diagnostic tool could not produce a report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ToolFailure {
    InsufficientData(String),
    DegenerateFit(String),
}

impl fmt::Display for ToolFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToolFailure::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            ToolFailure::DegenerateFit(msg) => write!(f, "degenerate fit: {msg}"),
        }
    }
}

/// Hard failures of a single workflow run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkflowFailure {
    PlannerUnavailable(String),
    ForecasterUnavailable(String),
    ReflectorUnavailable(String),
    AnchorUnavailable(String),
    Unforecastable,
    InvalidSchedule(String),
}

impl fmt::Display for WorkflowFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkflowFailure::PlannerUnavailable(m) => write!(f, "planner unavailable: {m}"),
            WorkflowFailure::ForecasterUnavailable(m) => write!(f, "forecaster unavailable: {m}"),
            WorkflowFailure::ReflectorUnavailable(m) => write!(f, "reflector unavailable: {m}"),
            WorkflowFailure::AnchorUnavailable(m) => write!(f, "anchorer unavailable: {m}"),
            WorkflowFailure::Unforecastable => write!(f, "lookback has no observed target values"),
            WorkflowFailure::InvalidSchedule(m) => write!(f, "invalid tool schedule: {m}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("split error: {0}")]
    Split(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("tool {tool}: {kind}")]
    Tool { tool: ToolId, kind: ToolFailure },
    #[error("model {model}: {message}")]
    Model { model: String, message: String },
    #[error("case library error: {0}")]
    Library(String),
    #[error("ensemble error: {0}")]
    Ensemble(String),
    #[error("distance error: {0}")]
    Distance(String),
    #[error("cluster error: {0}")]
    Cluster(String),
    #[error("memory error: {0}")]
    Memory(String),
    #[error("workflow error: {kind}")]
    Workflow {
        kind: WorkflowFailure,
        partial: Option<Box<Trajectory>>,
    },
    #[error("reward error: {0}")]
    Reward(String),
    #[error("advantage error: {0}")]
    Advantage(String),
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("export error: {0}")]
    Export(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("snapshot error: {0}")]
    Snapshot(String),
    #[error("adapter error: {0}")]
    Adapter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn tool(tool: ToolId, kind: ToolFailure) -> Self {
        Error::Tool { tool, kind }
    }

    pub(crate) fn workflow(kind: WorkflowFailure, partial: Option<Trajectory>) -> Self {
        Error::Workflow {
            kind,
            partial: partial.map(Box::new),
        }
    }
}
