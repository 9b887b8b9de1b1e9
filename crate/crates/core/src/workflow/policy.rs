//! Policy roles and the deterministic rule-based mock.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::parse::render_block;
use super::prompts::Prompt;
use super::schedule::ToolSchedule;
use crate::error::{Error, Result};
use crate::memory::RetrievalResult;
use crate::model_pool::EnsembleBaseline;
use crate::series::LookbackView;
use crate::stats;
use crate::toolkit::{num, DiagnosticEvidence, EventLabel, Mode};

/// Model identifiers bound to each role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyIds {
    pub planner: String,
    pub forecaster: String,
    pub reflector: String,
}

/// A request/response pair exactly as sent and received.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub role: String,
    pub request: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply<T> {
    pub value: T,
    /// Present when the adapter records transcripts.
    pub exchange: Option<Exchange>,
}

impl<T> Reply<T> {
    pub fn new(value: T) -> Self {
        Self { value, exchange: None }
    }
}

pub struct PlanRequest<'a> {
    pub view: LookbackView<'a>,
    pub mode: Mode,
    pub retrieved: &'a RetrievalResult,
    pub feedback: &'a [String],
    pub prompt: &'a Prompt,
    /// 1-based.
    pub attempt: usize,
}

pub struct ForecastRequest<'a> {
    pub view: LookbackView<'a>,
    /// `None` in agent-only runs.
    pub baseline: Option<&'a EnsembleBaseline>,
    pub evidence: &'a DiagnosticEvidence,
    pub retrieved: &'a RetrievalResult,
    pub feedback: &'a [String],
    pub prompt: &'a Prompt,
    pub attempt: usize,
    /// Sampling seed for diverse rollouts; `None` means greedy.
    pub sample: Option<u64>,
}

pub struct ReflectRequest<'a> {
    pub view: LookbackView<'a>,
    pub candidate: &'a [f64],
    pub baseline: Option<&'a EnsembleBaseline>,
    pub evidence: &'a DiagnosticEvidence,
    pub prompt: &'a Prompt,
}

/// The reflector's logic check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicVerdict {
    pub ok: bool,
    pub feedback: Option<String>,
}

/// Planner, forecaster and reflector roles. Errors returned here are
/// transport failures; the workflow retries them.
pub trait PolicyAdapter: Send + Sync {
    fn ids(&self) -> PolicyIds;
    fn plan(&self, req: &PlanRequest<'_>) -> Result<Reply<ToolSchedule>>;
    fn forecast(&self, req: &ForecastRequest<'_>) -> Result<Reply<String>>;
    fn reflect(&self, req: &ReflectRequest<'_>) -> Result<Reply<LogicVerdict>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    /// Share of the residual lookback trend carried into the forecast.
    pub beta_trend: f64,
    /// Normalised trend strength `|m| L / sigma` below which no trend is added.
    pub flat_threshold: f64,
    /// A changepoint in this trailing share of the lookback cancels the trend.
    pub damping_fraction: f64,
    /// Reflector bound widening relative to the quality bounds.
    pub widen_factor: f64,
    /// Event trend strength at which the reflector checks direction.
    pub strong_trend: f64,
    /// Relative jitter of `beta_trend` when sampling.
    pub sample_jitter: f64,
    /// Noise added when sampling, in lookback standard deviations.
    pub sample_noise: f64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            beta_trend: 0.5,
            flat_threshold: 0.1,
            damping_fraction: 0.25,
            widen_factor: 2.0,
            strong_trend: 2.0,
            sample_jitter: 0.5,
            sample_noise: 0.05,
        }
    }
}

/// Rule-based stand-in for all three roles. Deterministic for a given
/// request.
#[derive(Debug, Clone, Default)]
pub struct MockPolicy {
    pub config: MockConfig,
}

impl MockPolicy {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }
}

/// Target clipping bounds from the quality report, else the feature state.
fn target_bounds(evidence: &DiagnosticEvidence) -> Option<(f64, f64)> {
    if let Some(q) = &evidence.quality {
        let t = q.target();
        return t.clip_low.zip(t.clip_high);
    }
    evidence.state.as_ref().and_then(|s| s.channels.first()).and_then(|c| c.clip_low.zip(c.clip_high))
}

fn lookback_slope(evidence: &DiagnosticEvidence) -> Option<f64> {
    evidence.trend.as_ref().map(|t| t.slope).or_else(|| evidence.dynamics.as_ref().map(|d| d.slope))
}

impl MockPolicy {
    /// Baseline (or the last observation when no baseline is given) plus
    /// `beta (m - m_base)(h + 1)`, where `m` is the lookback slope and
    /// `m_base` the slope already present in the baseline. The trend term is
    /// dropped when the lookback is flat or a changepoint falls in the
    /// trailing damping window. Values are clipped to the quality bounds.
    pub fn candidate(&self, req: &ForecastRequest<'_>) -> Result<(Vec<f64>, Vec<String>)> {
        let c = &self.config;
        let h_len = req.view.horizon();
        let x = stats::forward_filled(&req.view.target())
            .ok_or_else(|| Error::Adapter("mock forecaster: target fully missing".into()))?;
        let l = x.len();
        let mut notes = vec![];
        let base = match req.baseline {
            Some(b) => {
                notes.push("starting from the ensemble baseline".to_string());
                b.values.clone()
            }
            None => {
                notes.push("no baseline provided; starting from the last observation".to_string());
                vec![x[l - 1]; h_len]
            }
        };
        let sigma = stats::population_std(&x).unwrap_or(0.0);
        let mut trend = 0.0;
        if let Some(m) = lookback_slope(req.evidence) {
            let strength = if sigma > 0.0 { m.abs() * l as f64 / sigma } else { 0.0 };
            let window = (l as f64 * c.damping_fraction).ceil() as usize;
            let damped = req
                .evidence
                .dynamics
                .as_ref()
                .and_then(|d| d.latest_changepoint())
                .is_some_and(|i| i + window >= l);
            let m_base = if h_len >= 2 { stats::ols_slope(&base).unwrap_or(0.0) } else { 0.0 };
            if strength <= c.flat_threshold {
                notes.push(format!("lookback slope {} is flat; no trend adjustment", num(m)));
            } else if damped {
                notes.push("recent changepoint detected; trend adjustment damped to zero".to_string());
            } else {
                trend = m - m_base;
                notes.push(format!(
                    "lookback slope {} vs baseline slope {}; continuing the difference",
                    num(m),
                    num(m_base)
                ));
            }
        }
        let mut beta = c.beta_trend;
        let mut rng = req.sample.map(ChaCha8Rng::seed_from_u64);
        if let Some(r) = rng.as_mut() {
            beta *= 1.0 + c.sample_jitter * r.gen_range(-1.0..1.0);
        }
        let noise = Normal::new(0.0, (c.sample_noise * sigma).max(0.0)).map_err(|e| Error::Adapter(e.to_string()))?;
        let bounds = target_bounds(req.evidence);
        let values = base
            .iter()
            .enumerate()
            .map(|(h, b)| {
                let mut v = b + beta * trend * (h + 1) as f64;
                if let Some(r) = rng.as_mut() {
                    v += noise.sample(r);
                }
                if let Some((lo, hi)) = bounds {
                    v = v.clamp(lo, hi);
                }
                v
            })
            .collect();
        if let Some((lo, hi)) = bounds {
            notes.push(format!("clipped to quality bounds [{}, {}]", num(lo), num(hi)));
        }
        Ok((values, notes))
    }

    /// Values must lie inside the widened quality bounds, and under a strong
    /// rise or fall the candidate must not run steeper in the opposite
    /// direction.
    pub fn verdict(&self, req: &ReflectRequest<'_>) -> LogicVerdict {
        let c = &self.config;
        if let Some((lo, hi)) = target_bounds(req.evidence) {
            let centre = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo) * c.widen_factor;
            let (wlo, whi) = (centre - half, centre + half);
            for (h, v) in req.candidate.iter().enumerate() {
                if *v < wlo {
                    return LogicVerdict {
                        ok: false,
                        feedback: Some(format!("step {} value {} is below the widened lower bound {}", h + 1, num(*v), num(wlo))),
                    };
                }
                if *v > whi {
                    return LogicVerdict {
                        ok: false,
                        feedback: Some(format!("step {} value {} is above the widened upper bound {}", h + 1, num(*v), num(whi))),
                    };
                }
            }
        }
        if let Some(ev) = &req.evidence.event {
            let sign = match ev.label {
                EventLabel::Rise => 1.0,
                EventLabel::Fall => -1.0,
                _ => 0.0,
            };
            if sign != 0.0 && ev.trend_strength >= c.strong_trend && req.candidate.len() >= 2 {
                let cand = stats::ols_slope(req.candidate).unwrap_or(0.0);
                let m = lookback_slope(req.evidence).unwrap_or(0.0).abs();
                if cand * sign < 0.0 && cand.abs() > m {
                    return LogicVerdict {
                        ok: false,
                        feedback: Some(format!(
                            "candidate slope {} contradicts the {} event (trend strength {})",
                            num(cand),
                            ev.label.name(),
                            num(ev.trend_strength)
                        )),
                    };
                }
            }
        }
        LogicVerdict { ok: true, feedback: None }
    }
}

impl PolicyAdapter for MockPolicy {
    fn ids(&self) -> PolicyIds {
        PolicyIds { planner: "mock-planner".into(), forecaster: "mock-forecaster".into(), reflector: "mock-reflector".into() }
    }

    /// Reuses the optional tools of the best retrieved strategy, else the
    /// default rule.
    fn plan(&self, req: &PlanRequest<'_>) -> Result<Reply<ToolSchedule>> {
        let has_cov = !req.view.exogenous().is_empty();
        let schedule = match req.retrieved.hits.first() {
            Some(hit) => ToolSchedule::sanitized(
                hit.entry.schedule.optional.clone(),
                format!("reusing the strategy of memory entry {} (similarity {})", hit.entry.id, num(hit.similarity)),
                req.mode,
                has_cov,
            ),
            None => ToolSchedule::default_for(req.mode, has_cov),
        };
        Ok(Reply::new(schedule))
    }

    fn forecast(&self, req: &ForecastRequest<'_>) -> Result<Reply<String>> {
        let (values, notes) = self.candidate(req)?;
        let mut text = String::new();
        for n in notes {
            text.push_str(&n);
            text.push('\n');
        }
        text.push_str(&render_block(&values));
        Ok(Reply::new(text))
    }

    fn reflect(&self, req: &ReflectRequest<'_>) -> Result<Reply<LogicVerdict>> {
        Ok(Reply::new(self.verdict(req)))
    }
}
