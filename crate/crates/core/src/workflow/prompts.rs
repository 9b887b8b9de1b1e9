//! Prompt templates (a versioned TOML asset) and their rendering.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::RetrievalResult;
use crate::model_pool::EnsembleBaseline;
use crate::series::LookbackView;
use crate::toolkit::{num, DiagnosticEvidence, Mode, PromptBlock, ToolId};

const BUILTIN: &str = include_str!("../../assets/prompts.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleTemplate {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplates {
    pub version: String,
    pub planner: RoleTemplate,
    pub forecaster: RoleTemplate,
    pub reflector: RoleTemplate,
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN).expect("bundled prompt templates parse")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("prompt templates: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

/// A rendered system/user pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    /// Both parts as one document, used in logs and exported corpora.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system.trim_end(), self.user.trim_end())
    }
}

fn fill(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

fn render(t: &RoleTemplate, vars: &[(&str, String)]) -> Prompt {
    Prompt { system: fill(&t.system, vars), user: fill(&t.user, vars) }
}

fn feedback_block(feedback: &[String]) -> String {
    if feedback.is_empty() {
        return "none".into();
    }
    feedback.iter().enumerate().map(|(i, f)| format!("attempt {}: {f}", i + 1)).collect::<Vec<_>>().join("\n")
}

fn retrieved_block(retrieved: &RetrievalResult, with_responses: bool) -> String {
    if retrieved.hits.is_empty() {
        return "none".into();
    }
    let mut out = vec![];
    for h in &retrieved.hits {
        let e = &h.entry;
        out.push(format!(
            "entry {} similarity={} achieved_mse={} tools={}",
            e.id,
            num(h.similarity),
            num(e.achieved_mse),
            e.schedule.names().join(",")
        ));
        if with_responses {
            out.push(format!("response:\n{}", e.trajectory.response.trim_end()));
        }
    }
    out.join("\n")
}

fn values_line(values: &[f64]) -> String {
    values.iter().map(|v| if v.is_nan() { "nan".to_string() } else { num(*v) }).collect::<Vec<_>>().join(",")
}

pub fn render_plan(
    t: &PromptTemplates,
    view: &LookbackView<'_>,
    mode: Mode,
    tools: &[ToolId],
    retrieved: &RetrievalResult,
    feedback: &[String],
) -> Prompt {
    let layout = view.layout();
    let channels: Vec<String> = (0..layout.channel_count())
        .map(|c| {
            let role = if c == layout.target { "target" } else if layout.exogenous.contains(&c) { "exogenous" } else { "other" };
            format!("{} ({role})", layout.names[c])
        })
        .collect();
    render(
        &t.planner,
        &[
            ("mode", mode.to_string()),
            ("lookback_len", view.len().to_string()),
            ("horizon", view.horizon().to_string()),
            ("channels", channels.join(", ")),
            ("tools", tools.iter().map(|t| format!("- {t}")).collect::<Vec<_>>().join("\n")),
            ("retrieved", retrieved_block(retrieved, false)),
            ("feedback", feedback_block(feedback)),
        ],
    )
}

pub fn render_forecast(
    t: &PromptTemplates,
    view: &LookbackView<'_>,
    baseline: Option<&EnsembleBaseline>,
    evidence: &DiagnosticEvidence,
    retrieved: &RetrievalResult,
    feedback: &[String],
) -> Prompt {
    render(
        &t.forecaster,
        &[
            ("horizon", view.horizon().to_string()),
            ("target", view.layout().target_name().to_string()),
            ("lookback", values_line(&view.target())),
            ("baseline", baseline.map(|b| b.prompt_block()).unwrap_or_else(|| "not provided".into())),
            ("evidence", evidence.prompt_blocks()),
            ("retrieved", retrieved_block(retrieved, true)),
            ("feedback", feedback_block(feedback)),
        ],
    )
}

pub fn render_reflect(
    t: &PromptTemplates,
    horizon: usize,
    candidate: &[f64],
    baseline: Option<&EnsembleBaseline>,
    evidence: &DiagnosticEvidence,
) -> Prompt {
    render(
        &t.reflector,
        &[
            ("horizon", horizon.to_string()),
            ("candidate", values_line(candidate)),
            ("baseline", baseline.map(|b| b.prompt_block()).unwrap_or_else(|| "not provided".into())),
            ("evidence", evidence.prompt_blocks()),
        ],
    )
}
