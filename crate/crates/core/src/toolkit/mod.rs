//! The diagnostic toolkit. Every tool is a pure function of a
//! [`LookbackView`](crate::series::LookbackView) and its parameters, so none of
//! them can observe future values.
//!
//! Reports render to fixed key-value blocks through [`PromptBlock`]; field
//! order never changes so prompts are reproducible.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model_pool::EnsembleBaseline;

mod dynamics;
mod profiler;
mod residual;

pub use dynamics::{
    changepoint_trend, cross_channel, default_max_lag, event_summary, exogenous_analysis, trend_analysis,
    Changepoint, CovariateCorrelation, CovariateSummary, CrossChannelReport, DynamicsReport, EventLabel,
    EventSummary, ExogenousSummary, LagCorrelation, TrendReport,
};
pub use profiler::{
    basic_statistics, comprehensive_feature, data_quality, spectral_entropy, statistical_analysis, ChannelMoments,
    ChannelQuality, ChannelState, ChannelStats, DiagnosticState, MomentProfile, QualityReport, StatProfile,
};
pub use residual::{autoregressive_residual, fit_ar, select_ar_order, ArFit, ResidualOutcome, ResidualReport};

/// Training runs may look at labelled history; test runs may not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    #[default]
    Test,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Train => "train",
            Mode::Test => "test",
        })
    }
}

/// The eleven tools, grouped as anchorer, profiler, dynamics monitor and
/// residual diagnoser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolId {
    ModelAuxiliary,
    StatisticalAnalysis,
    BasicStatistics,
    DataQuality,
    ComprehensiveFeature,
    TrendAnalysis,
    ChangepointTrend,
    CrossChannel,
    ExogenousAnalysis,
    EventSummary,
    AutoregressiveResidual,
}

impl ToolId {
    pub const ALL: [ToolId; 11] = [
        ToolId::ModelAuxiliary,
        ToolId::StatisticalAnalysis,
        ToolId::BasicStatistics,
        ToolId::DataQuality,
        ToolId::ComprehensiveFeature,
        ToolId::TrendAnalysis,
        ToolId::ChangepointTrend,
        ToolId::CrossChannel,
        ToolId::ExogenousAnalysis,
        ToolId::EventSummary,
        ToolId::AutoregressiveResidual,
    ];

    /// Tools that run on every instance regardless of the plan.
    pub const MANDATORY: [ToolId; 2] = [ToolId::ModelAuxiliary, ToolId::ExogenousAnalysis];

    pub fn name(self) -> &'static str {
        match self {
            ToolId::ModelAuxiliary => "model_auxiliary",
            ToolId::StatisticalAnalysis => "statistical_analysis",
            ToolId::BasicStatistics => "basic_statistics",
            ToolId::DataQuality => "data_quality",
            ToolId::ComprehensiveFeature => "comprehensive_feature",
            ToolId::TrendAnalysis => "trend_analysis",
            ToolId::ChangepointTrend => "changepoint_trend",
            ToolId::CrossChannel => "cross_channel",
            ToolId::ExogenousAnalysis => "exogenous_analysis",
            ToolId::EventSummary => "event_summary",
            ToolId::AutoregressiveResidual => "autoregressive_residual",
        }
    }

    pub fn from_name(name: &str) -> Option<ToolId> {
        ToolId::ALL.into_iter().find(|t| t.name() == name.trim())
    }

    pub fn is_mandatory(self) -> bool {
        ToolId::MANDATORY.contains(&self)
    }

    /// Train-only tools must never run in test mode.
    pub fn allowed_in(self, mode: Mode) -> bool {
        !(self == ToolId::AutoregressiveResidual && mode == Mode::Test)
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tool parameters shared by the action stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    /// Clipping boundary width in standard deviations.
    pub kappa: f64,
    pub dropout_threshold: f64,
    pub changepoint_sensitivity: f64,
    pub flat_threshold: f64,
    /// Zero crossings per step above which a window is labelled oscillation.
    pub osc_threshold: f64,
    /// `None` means `min(H, L/4)`.
    pub max_lag: Option<usize>,
    pub p_max: usize,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            kappa: 3.0,
            dropout_threshold: 0.1,
            changepoint_sensitivity: 3.0,
            flat_threshold: 0.1,
            osc_threshold: 0.4,
            max_lag: None,
            p_max: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum InvocationStatus {
    Ok,
    Failed { message: String },
    Bypassed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool: ToolId,
    #[serde(flatten)]
    pub status: InvocationStatus,
}

/// All tool outputs attached to one forecasting instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticEvidence {
    pub baseline: Option<EnsembleBaseline>,
    pub statistical: Option<MomentProfile>,
    pub basic: Option<StatProfile>,
    pub quality: Option<QualityReport>,
    pub state: Option<DiagnosticState>,
    pub trend: Option<TrendReport>,
    pub dynamics: Option<DynamicsReport>,
    pub cross_channel: Option<CrossChannelReport>,
    pub exogenous: Option<ExogenousSummary>,
    pub event: Option<EventSummary>,
    pub residual: Option<ResidualReport>,
    pub invocations: Vec<ToolInvocation>,
}

impl DiagnosticEvidence {
    pub fn has_slot(&self, tool: ToolId) -> bool {
        match tool {
            ToolId::ModelAuxiliary => self.baseline.is_some(),
            ToolId::StatisticalAnalysis => self.statistical.is_some(),
            ToolId::BasicStatistics => self.basic.is_some(),
            ToolId::DataQuality => self.quality.is_some(),
            ToolId::ComprehensiveFeature => self.state.is_some(),
            ToolId::TrendAnalysis => self.trend.is_some(),
            ToolId::ChangepointTrend => self.dynamics.is_some(),
            ToolId::CrossChannel => self.cross_channel.is_some(),
            ToolId::ExogenousAnalysis => self.exogenous.is_some(),
            ToolId::EventSummary => self.event.is_some(),
            ToolId::AutoregressiveResidual => self.residual.is_some(),
        }
    }

    /// Tools that ran successfully, in invocation order.
    pub fn succeeded(&self) -> impl Iterator<Item = ToolId> + '_ {
        self.invocations
            .iter()
            .filter(|i| i.status == InvocationStatus::Ok)
            .map(|i| i.tool)
    }

    /// A slot is filled exactly when its tool has a successful invocation.
    pub fn is_consistent(&self) -> bool {
        ToolId::ALL
            .into_iter()
            .all(|t| self.has_slot(t) == self.succeeded().any(|s| s == t))
    }

    /// Every populated report as prompt blocks, in invocation order. The
    /// baseline is excluded; callers decide whether the forecaster sees it.
    pub fn prompt_blocks(&self) -> String {
        let mut out = String::new();
        for tool in self.succeeded() {
            let block = match tool {
                ToolId::ModelAuxiliary => None,
                ToolId::StatisticalAnalysis => self.statistical.as_ref().map(|r| r.prompt_block()),
                ToolId::BasicStatistics => self.basic.as_ref().map(|r| r.prompt_block()),
                ToolId::DataQuality => self.quality.as_ref().map(|r| r.prompt_block()),
                ToolId::ComprehensiveFeature => self.state.as_ref().map(|r| r.prompt_block()),
                ToolId::TrendAnalysis => self.trend.as_ref().map(|r| r.prompt_block()),
                ToolId::ChangepointTrend => self.dynamics.as_ref().map(|r| r.prompt_block()),
                ToolId::CrossChannel => self.cross_channel.as_ref().map(|r| r.prompt_block()),
                ToolId::ExogenousAnalysis => self.exogenous.as_ref().map(|r| r.prompt_block()),
                ToolId::EventSummary => self.event.as_ref().map(|r| r.prompt_block()),
                ToolId::AutoregressiveResidual => self.residual.as_ref().map(|r| r.prompt_block()),
            };
            if let Some(b) = block {
                out.push_str(&b);
                out.push('\n');
            }
        }
        for inv in &self.invocations {
            match &inv.status {
                InvocationStatus::Failed { message } => {
                    out.push_str(&format!("[{}]\nstatus=failed\nmessage={message}\n\n", inv.tool))
                }
                InvocationStatus::Bypassed => out.push_str(&format!("[{}]\nstatus=bypassed\n\n", inv.tool)),
                InvocationStatus::Ok => {}
            }
        }
        out
    }
}

/// Fixed-layout text rendering used verbatim in policy prompts.
pub trait PromptBlock {
    fn prompt_block(&self) -> String;
}

/// Stable numeric formatting for prompt blocks.
pub(crate) fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        "nan".into()
    }
}

/// Channels with the target first, then the rest in index order.
pub(crate) fn channel_order(layout: &crate::series::ChannelLayout) -> Vec<usize> {
    let mut order = vec![layout.target];
    order.extend((0..layout.channel_count()).filter(|&c| c != layout.target));
    order
}
