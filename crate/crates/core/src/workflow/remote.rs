//! Remote policy over a chat-completion endpoint.
//!
//! Planner replies must contain a line `TOOLS: a, b, ...`; unknown names are
//! ignored and a reply without the line falls back to the default schedule.
//! Reflector replies must contain `VERDICT: PASS` or `VERDICT: FAIL`,
//! optionally with a `FEEDBACK:` line; a missing verdict counts as a fail.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::policy::{Exchange, ForecastRequest, LogicVerdict, PlanRequest, PolicyAdapter, PolicyIds, ReflectRequest, Reply};
use super::prompts::Prompt;
use super::schedule::ToolSchedule;
use crate::error::{Error, Result};
use crate::toolkit::{Mode, ToolId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    /// Response body as received.
    pub raw: String,
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

/// Extracts the message text from the usual response shapes:
/// `choices[0].message.content`, `message.content` or `content`.
pub fn extract_content(body: &str) -> Result<String> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| Error::Adapter(format!("response is not JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .or_else(|| v.pointer("/message/content"))
        .or_else(|| v.get("content"))
        .and_then(|c| c.as_str())
        .ok_or_else(|| Error::Adapter("response has no message content".into()))?;
    Ok(content.to_string())
}

/// Blocking HTTP transport posting JSON to a single endpoint.
pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: String, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { endpoint, api_key, agent }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let mut call = self.agent.post(&self.endpoint).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_string(request)?;
        let resp = call.send_string(&body).map_err(|e| Error::Adapter(format!("POST {}: {e}", self.endpoint)))?;
        let raw = resp.into_string().map_err(|e| Error::Adapter(format!("reading response: {e}")))?;
        Ok(ChatResponse { content: extract_content(&raw)?, raw })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub planner_model: String,
    pub forecaster_model: String,
    pub reflector_model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            planner_model: "planner".into(),
            forecaster_model: "forecaster".into(),
            reflector_model: "reflector".into(),
            temperature: 0.0,
            max_tokens: 4096,
            timeout_secs: 120,
        }
    }
}

pub struct RemotePolicy {
    config: RemoteConfig,
    transport: Box<dyn ChatTransport>,
    /// Record request and response bodies verbatim.
    pub debug: bool,
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig, transport: Box<dyn ChatTransport>, debug: bool) -> Self {
        Self { config, transport, debug }
    }

    /// HTTP transport with the credential taken from the caller.
    pub fn http(config: RemoteConfig, api_key: Option<String>, debug: bool) -> Self {
        let transport = HttpTransport::new(config.endpoint.clone(), api_key, Duration::from_secs(config.timeout_secs));
        Self::new(config, Box::new(transport), debug)
    }

    fn call(&self, role: &str, model: &str, prompt: &Prompt, temperature: f64) -> Result<(String, Option<Exchange>)> {
        let request = ChatRequest {
            model: model.to_string(),
            messages: vec![
                ChatMessage { role: "system".into(), content: prompt.system.clone() },
                ChatMessage { role: "user".into(), content: prompt.user.clone() },
            ],
            temperature,
            max_tokens: self.config.max_tokens,
        };
        let resp = self.transport.complete(&request)?;
        let exchange = self.debug.then(|| Exchange {
            role: role.to_string(),
            request: serde_json::to_string(&request).unwrap_or_default(),
            response: resp.raw.clone(),
        });
        Ok((resp.content, exchange))
    }
}

/// Tools named on the first `TOOLS:` line, or `None` when there is none.
pub fn parse_tools_line(text: &str) -> Option<Vec<ToolId>> {
    let line = text.lines().find_map(|l| {
        let t = l.trim();
        t.get(..6).filter(|p| p.eq_ignore_ascii_case("tools:")).map(|_| &t[6..])
    })?;
    Some(line.split(',').filter_map(ToolId::from_name).collect())
}

pub fn parse_verdict(text: &str) -> LogicVerdict {
    let mut verdict = None;
    let mut feedback = None;
    for l in text.lines().map(str::trim) {
        let upper = l.to_ascii_uppercase();
        if let Some(rest) = upper.strip_prefix("VERDICT:") {
            verdict = verdict.or(match rest.trim() {
                "PASS" => Some(true),
                "FAIL" => Some(false),
                _ => None,
            });
        } else if upper.starts_with("FEEDBACK:") {
            feedback = Some(l[9..].trim().to_string());
        }
    }
    match verdict {
        Some(true) => LogicVerdict { ok: true, feedback: None },
        Some(false) => LogicVerdict { ok: false, feedback: Some(feedback.unwrap_or_else(|| "reflector rejected the candidate".into())) },
        None => LogicVerdict { ok: false, feedback: Some("reflector reply had no verdict line".into()) },
    }
}

impl PolicyAdapter for RemotePolicy {
    fn ids(&self) -> PolicyIds {
        PolicyIds {
            planner: self.config.planner_model.clone(),
            forecaster: self.config.forecaster_model.clone(),
            reflector: self.config.reflector_model.clone(),
        }
    }

    fn plan(&self, req: &PlanRequest<'_>) -> Result<Reply<ToolSchedule>> {
        let (text, exchange) = self.call("planner", &self.config.planner_model, req.prompt, self.config.temperature)?;
        let schedule = tools_for_reply(&text, req.mode, !req.view.exogenous().is_empty());
        Ok(Reply { value: schedule, exchange })
    }

    fn forecast(&self, req: &ForecastRequest<'_>) -> Result<Reply<String>> {
        // sampled rollouts need a nonzero temperature
        let temperature = if req.sample.is_some() { self.config.temperature.max(0.7) } else { self.config.temperature };
        let (text, exchange) = self.call("forecaster", &self.config.forecaster_model, req.prompt, temperature)?;
        Ok(Reply { value: text, exchange })
    }

    fn reflect(&self, req: &ReflectRequest<'_>) -> Result<Reply<LogicVerdict>> {
        let (text, exchange) = self.call("reflector", &self.config.reflector_model, req.prompt, self.config.temperature)?;
        Ok(Reply { value: parse_verdict(&text), exchange })
    }
}

/// Schedule from a planner reply; the default schedule when the reply has no
/// `TOOLS:` line.
pub fn tools_for_reply(text: &str, mode: Mode, has_covariates: bool) -> ToolSchedule {
    match parse_tools_line(text) {
        Some(tools) => ToolSchedule::sanitized(tools, text.trim().to_string(), mode, has_covariates),
        None => {
            let mut s = ToolSchedule::default_for(mode, has_covariates);
            s.rationale = "planner reply had no TOOLS line; default schedule used".into();
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_extraction_handles_common_shapes() {
        let openai = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(extract_content(openai).unwrap(), "hi");
        assert_eq!(extract_content(r#"{"message":{"content":"a"}}"#).unwrap(), "a");
        assert_eq!(extract_content(r#"{"content":"b"}"#).unwrap(), "b");
        assert!(extract_content("{}").is_err());
        assert!(extract_content("not json").is_err());
    }

    #[test]
    fn tools_line_parsing() {
        let t = parse_tools_line("Because trends.\nTOOLS: trend_analysis, bogus, data_quality\n").unwrap();
        assert_eq!(t, vec![ToolId::TrendAnalysis, ToolId::DataQuality]);
        assert!(parse_tools_line("nothing").is_none());
        let s = tools_for_reply("tools: autoregressive_residual", Mode::Test, false);
        assert!(s.optional.is_empty());
    }

    #[test]
    fn verdict_parsing() {
        assert!(parse_verdict("ok\nVERDICT: PASS").ok);
        let v = parse_verdict("VERDICT: FAIL\nFEEDBACK: too high");
        assert!(!v.ok);
        assert_eq!(v.feedback.as_deref(), Some("too high"));
        assert!(!parse_verdict("looks fine").ok);
    }
}
