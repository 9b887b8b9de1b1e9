//! Dynamics monitor: trend slope, changepoints from first and second
//! differences, lead-lag cross-correlation, exogenous summaries and the
//! qualitative event label.

use serde::{Deserialize, Serialize};

use super::{num, PromptBlock, ToolId};
use crate::error::{Error, Result, ToolFailure};
use crate::series::LookbackView;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub channel: String,
    /// Units per step.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Changepoint {
    pub index: usize,
    pub first_diff: f64,
    pub second_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub slope: f64,
    pub threshold: f64,
    pub changepoints: Vec<Changepoint>,
    pub momentum_reversal: bool,
}

impl DynamicsReport {
    pub fn latest_changepoint(&self) -> Option<usize> {
        self.changepoints.last().map(|c| c.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    pub lag: i64,
    pub rho: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateCorrelation {
    pub covariate: String,
    pub best_lag: i64,
    pub best_rho: f64,
    pub correlogram: Vec<LagCorrelation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossChannelReport {
    pub target: String,
    pub max_lag: usize,
    pub pairs: Vec<CovariateCorrelation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub covariate: String,
    pub best_lag: i64,
    pub best_rho: f64,
    pub slope: f64,
    pub hint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousSummary {
    pub covariates: Vec<CovariateSummary>,
    /// Set when there was nothing to analyse.
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventLabel {
    Rise,
    Fall,
    Flat,
    Oscillation,
}

impl EventLabel {
    pub fn name(self) -> &'static str {
        match self {
            EventLabel::Rise => "rise",
            EventLabel::Fall => "fall",
            EventLabel::Flat => "flat",
            EventLabel::Oscillation => "oscillation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub label: EventLabel,
    /// `|m| L / sigma`, 0 for a constant window.
    pub trend_strength: f64,
    pub zero_crossing_rate: f64,
}

fn insufficient(tool: ToolId, msg: String) -> Error {
    Error::tool(tool, ToolFailure::InsufficientData(msg))
}

fn filled_target(tool: ToolId, view: &LookbackView<'_>) -> Result<Vec<f64>> {
    stats::forward_filled(&view.target()).ok_or_else(|| insufficient(tool, "target channel fully missing".into()))
}

/// Least-squares slope of the target against `t = 0..L-1`.
pub fn trend_analysis(view: &LookbackView<'_>) -> Result<TrendReport> {
    let target = view.target();
    let slope = stats::ols_slope(&target)
        .ok_or_else(|| insufficient(ToolId::TrendAnalysis, "need at least 2 observed target values".into()))?;
    Ok(TrendReport { channel: view.channel_name(view.target_index()).to_string(), slope })
}

/// Flags index `t` when `|Δ²x_t| > sensitivity · MAD(Δ²x)`. Momentum reverses
/// when the latest first difference has the opposite sign of the mean one.
pub fn changepoint_trend(view: &LookbackView<'_>, sensitivity: f64) -> Result<DynamicsReport> {
    let tool = ToolId::ChangepointTrend;
    if view.len() < 3 {
        return Err(insufficient(tool, format!("lookback of {} rows, need 3", view.len())));
    }
    let x = filled_target(tool, view)?;
    let slope = stats::ols_slope(&x).unwrap_or(0.0);
    // d1[t] = x_t - x_{t-1}, t >= 1; d2[t] = d1[t] - d1[t-1], t >= 2
    let d1: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let d2: Vec<f64> = d1.windows(2).map(|w| w[1] - w[0]).collect();
    let mad = stats::mad(&d2).unwrap_or(0.0);
    let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let threshold = sensitivity * mad;
    let tol = 1e-9 * scale;
    let changepoints = d2
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > threshold + tol)
        .map(|(i, &v)| Changepoint { index: i + 2, first_diff: d1[i + 1], second_diff: v })
        .collect();
    let mean_d1 = d1.iter().sum::<f64>() / d1.len() as f64;
    let last_d1 = *d1.last().expect("L >= 3");
    Ok(DynamicsReport { slope, threshold, changepoints, momentum_reversal: last_d1 * mean_d1 < 0.0 })
}

/// `min(H, L/4)`, shrunk so that `L >= 2 max_lag + 4`.
pub fn default_max_lag(lookback: usize, horizon: usize) -> usize {
    let cap = lookback.saturating_sub(4) / 2;
    horizon.min(lookback / 4).min(cap)
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let den = (sxx * syy).sqrt();
    if den <= f64::EPSILON * (1.0 + sxx.max(syy)) {
        return None;
    }
    Some((sxy / den).clamp(-1.0, 1.0))
}

/// Correlation of target `x_t` with covariate `y_{t+lag}` on the overlapping
/// rows; missing values drop the pair.
pub(crate) fn shifted_pearson(x: &[f64], y: &[f64], lag: i64) -> LagCorrelation {
    let n = x.len() as i64;
    let pairs: Vec<(f64, f64)> = (0..n)
        .filter_map(|t| {
            let u = t + lag;
            (0..n).contains(&u).then(|| (x[t as usize], y[u as usize]))
        })
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .collect();
    match pearson(&pairs) {
        Some(rho) => LagCorrelation { lag, rho, degenerate: false },
        None => LagCorrelation { lag, rho: 0.0, degenerate: true },
    }
}

/// Time-shifted Pearson correlogram between the target and every covariate
/// over lags `-max_lag..=max_lag`.
pub fn cross_channel(view: &LookbackView<'_>, max_lag: usize) -> Result<CrossChannelReport> {
    let tool = ToolId::CrossChannel;
    if view.exogenous().is_empty() {
        return Err(insufficient(tool, "no covariate channels".into()));
    }
    if view.len() < 2 * max_lag + 4 {
        return Err(insufficient(tool, format!("lookback of {} rows is too short for max_lag {max_lag}", view.len())));
    }
    let x = view.target();
    let lag = max_lag as i64;
    let pairs = view
        .exogenous()
        .iter()
        .map(|&c| {
            let y = view.channel(c);
            let correlogram: Vec<LagCorrelation> = (-lag..=lag).map(|d| shifted_pearson(&x, &y, d)).collect();
            let best = correlogram
                .iter()
                .fold(&correlogram[0], |b, c| if c.rho.abs() > b.rho.abs() { c } else { b });
            CovariateCorrelation {
                covariate: view.channel_name(c).to_string(),
                best_lag: best.lag,
                best_rho: best.rho,
                correlogram: correlogram.clone(),
            }
        })
        .collect();
    Ok(CrossChannelReport { target: view.channel_name(view.target_index()).to_string(), max_lag, pairs })
}

fn lag_hint(name: &str, lag: i64, rho: f64) -> String {
    let strength = match rho.abs() {
        r if r >= 0.7 => "strong",
        r if r >= 0.3 => "moderate",
        _ => "weak",
    };
    let sign = if rho >= 0.0 { "positive" } else { "negative" };
    match lag {
        0 => format!("{name} moves contemporaneously with the target ({strength} {sign} correlation {})", num(rho)),
        l if l < 0 => format!(
            "{name} is leading the target with lag {} ({strength} {sign} correlation {})",
            -l,
            num(rho)
        ),
        l => format!("{name} is lagging the target by {l} ({strength} {sign} correlation {})", num(rho)),
    }
}

/// Per-covariate lead-lag correlation, covariate trend and a hint line.
pub fn exogenous_analysis(view: &LookbackView<'_>, max_lag: Option<usize>) -> Result<ExogenousSummary> {
    if view.exogenous().is_empty() {
        return Ok(ExogenousSummary { covariates: vec![], note: Some("no exogenous channels available".into()) });
    }
    let default = default_max_lag(view.len(), view.horizon());
    let lag = max_lag.unwrap_or(default).min(view.len().saturating_sub(4) / 2);
    let cc = cross_channel(view, lag)?;
    let covariates = cc
        .pairs
        .into_iter()
        .zip(view.exogenous())
        .map(|(p, &c)| {
            let slope = stats::ols_slope(&view.channel(c)).unwrap_or(0.0);
            CovariateSummary {
                hint: lag_hint(&p.covariate, p.best_lag, p.best_rho),
                covariate: p.covariate,
                best_lag: p.best_lag,
                best_rho: p.best_rho,
                slope,
            }
        })
        .collect();
    Ok(ExogenousSummary { covariates, note: None })
}

/// Oscillation when the zero-crossing rate of mean-centred first differences
/// exceeds `osc_threshold`; otherwise flat when `|m| L <= flat_threshold · σ`;
/// otherwise rise or fall by slope sign.
pub fn event_summary(view: &LookbackView<'_>, flat_threshold: f64, osc_threshold: f64) -> Result<EventSummary> {
    let tool = ToolId::EventSummary;
    if view.len() < 4 {
        return Err(insufficient(tool, format!("lookback of {} rows, need 4", view.len())));
    }
    let x = filled_target(tool, view)?;
    let d1: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_d1 = d1.iter().sum::<f64>() / d1.len() as f64;
    let centred: Vec<f64> = d1.iter().map(|d| d - mean_d1).collect();
    let tol = 1e-12 * x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let crossings = centred
        .windows(2)
        .filter(|w| w[0].abs() > tol && w[1].abs() > tol && w[0] * w[1] < 0.0)
        .count();
    let zero_crossing_rate = crossings as f64 / (centred.len() - 1) as f64;
    let slope = stats::ols_slope(&x).unwrap_or(0.0);
    let sigma = stats::population_std(&x).unwrap_or(0.0);
    let l = x.len() as f64;
    let trend_strength = if sigma > 0.0 { slope.abs() * l / sigma } else { 0.0 };
    let label = if zero_crossing_rate > osc_threshold {
        EventLabel::Oscillation
    } else if slope.abs() * l <= flat_threshold * sigma {
        EventLabel::Flat
    } else if slope > 0.0 {
        EventLabel::Rise
    } else {
        EventLabel::Fall
    };
    Ok(EventSummary { label, trend_strength, zero_crossing_rate })
}

impl PromptBlock for TrendReport {
    fn prompt_block(&self) -> String {
        format!("[trend_analysis]\nchannel={} slope={}\n", self.channel, num(self.slope))
    }
}

impl PromptBlock for DynamicsReport {
    fn prompt_block(&self) -> String {
        let mut s = format!(
            "[changepoint_trend]\nslope={} threshold={} changepoints={} momentum_reversal={}\n",
            num(self.slope),
            num(self.threshold),
            self.changepoints.len(),
            self.momentum_reversal
        );
        for c in &self.changepoints {
            s.push_str(&format!(
                "changepoint index={} first_diff={} second_diff={}\n",
                c.index,
                num(c.first_diff),
                num(c.second_diff)
            ));
        }
        s
    }
}

impl PromptBlock for CrossChannelReport {
    fn prompt_block(&self) -> String {
        let mut s = format!("[cross_channel]\ntarget={} max_lag={}\n", self.target, self.max_lag);
        for p in &self.pairs {
            s.push_str(&format!(
                "covariate={} best_lag={} best_rho={}\n",
                p.covariate,
                p.best_lag,
                num(p.best_rho)
            ));
        }
        s
    }
}

impl PromptBlock for ExogenousSummary {
    fn prompt_block(&self) -> String {
        let mut s = String::from("[exogenous_analysis]\n");
        if let Some(note) = &self.note {
            s.push_str(&format!("note={note}\n"));
        }
        for c in &self.covariates {
            s.push_str(&format!(
                "covariate={} best_lag={} best_rho={} slope={}\nhint={}\n",
                c.covariate,
                c.best_lag,
                num(c.best_rho),
                num(c.slope),
                c.hint
            ));
        }
        s
    }
}

impl PromptBlock for EventSummary {
    fn prompt_block(&self) -> String {
        format!(
            "[event_summary]\nlabel={} trend_strength={} zero_crossing_rate={}\n",
            self.label.name(),
            num(self.trend_strength),
            num(self.zero_crossing_rate)
        )
    }
}
