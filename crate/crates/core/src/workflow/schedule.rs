//! Tool schedules: the mandatory anchorer and exogenous tools plus an ordered
//! optional set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, WorkflowFailure};
use crate::toolkit::{Mode, ToolId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchedule {
    pub mandatory: Vec<ToolId>,
    pub optional: Vec<ToolId>,
    pub rationale: String,
}

/// Optional tools the default rule selects, in execution order. The cross
/// channel and residual tools are added when covariates exist and in train
/// mode respectively.
pub const DEFAULT_OPTIONAL: [ToolId; 7] = [
    ToolId::StatisticalAnalysis,
    ToolId::BasicStatistics,
    ToolId::DataQuality,
    ToolId::ComprehensiveFeature,
    ToolId::TrendAnalysis,
    ToolId::ChangepointTrend,
    ToolId::EventSummary,
];

impl ToolSchedule {
    /// Mandatory tools plus `optional`, validated for `mode`.
    pub fn new(optional: Vec<ToolId>, rationale: String, mode: Mode) -> Result<Self> {
        let s = Self { mandatory: ToolId::MANDATORY.to_vec(), optional, rationale };
        s.validate(mode)?;
        Ok(s)
    }

    /// Mandatory tools only.
    pub fn mandatory_only(rationale: &str) -> Self {
        Self { mandatory: ToolId::MANDATORY.to_vec(), optional: vec![], rationale: rationale.into() }
    }

    /// Builds a valid schedule from arbitrary planner output: mandatory tools
    /// are forced in, duplicates and tools not allowed in `mode` are dropped,
    /// and the cross-channel tool is dropped when there are no covariates.
    pub fn sanitized(optional: impl IntoIterator<Item = ToolId>, rationale: String, mode: Mode, has_covariates: bool) -> Self {
        let mut kept: Vec<ToolId> = vec![];
        for t in optional {
            let usable = !t.is_mandatory()
                && t.allowed_in(mode)
                && (has_covariates || t != ToolId::CrossChannel)
                && !kept.contains(&t);
            if usable {
                kept.push(t);
            }
        }
        Self { mandatory: ToolId::MANDATORY.to_vec(), optional: kept, rationale }
    }

    /// The rule-based plan used on a cold start.
    pub fn default_for(mode: Mode, has_covariates: bool) -> Self {
        Self::sanitized(
            Self::universe(mode, has_covariates),
            "default schedule: profile, trend and event tools".into(),
            mode,
            has_covariates,
        )
    }

    /// Every optional tool usable in `mode`, in canonical order.
    pub fn universe(mode: Mode, has_covariates: bool) -> Vec<ToolId> {
        let mut tools = DEFAULT_OPTIONAL.to_vec();
        if has_covariates {
            tools.insert(4, ToolId::CrossChannel);
        }
        if ToolId::AutoregressiveResidual.allowed_in(mode) {
            tools.push(ToolId::AutoregressiveResidual);
        }
        tools
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        let fail = |m: String| Err(Error::workflow(WorkflowFailure::InvalidSchedule(m), None));
        if self.mandatory != ToolId::MANDATORY {
            return fail(format!("mandatory tools must be {:?}", ToolId::MANDATORY));
        }
        let all = self.tools();
        for (i, t) in all.iter().enumerate() {
            if all[..i].contains(t) {
                return fail(format!("{t} scheduled twice"));
            }
            if !t.allowed_in(mode) {
                return fail(format!("{t} is not allowed in {mode} mode"));
            }
        }
        Ok(())
    }

    /// Mandatory tools first, then the optional ones.
    pub fn tools(&self) -> Vec<ToolId> {
        self.mandatory.iter().chain(&self.optional).copied().collect()
    }

    pub fn contains(&self, tool: ToolId) -> bool {
        self.mandatory.contains(&tool) || self.optional.contains(&tool)
    }

    /// Toggles membership of every tool in the usable universe with
    /// probability `p`. Canonical order is kept.
    pub fn perturbed(&self, mode: Mode, has_covariates: bool, p: f64, rng: &mut impl Rng) -> Self {
        let universe = Self::universe(mode, has_covariates);
        let optional: Vec<ToolId> = universe
            .into_iter()
            .filter(|t| {
                let present = self.optional.contains(t);
                if rng.gen_bool(p) {
                    !present
                } else {
                    present
                }
            })
            .collect();
        Self::sanitized(optional, format!("exploration of: {}", self.rationale), mode, has_covariates)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.tools().into_iter().map(ToolId::name).collect()
    }
}
