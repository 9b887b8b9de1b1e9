//! Statistical and spectral profiler: moments, robust statistics, spectral
//! entropy, the data-quality gate and the aggregated diagnostic state.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{channel_order, num, PromptBlock, ToolId};
use crate::error::{Error, Result, ToolFailure};
use crate::series::LookbackView;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMoments {
    pub channel: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub observed: usize,
}

/// Output of the statistical analysis tool, target channel first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentProfile {
    pub channels: Vec<ChannelMoments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channel: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub mad: f64,
    /// Nats; in `[0, ln(floor(L/2))]`.
    pub spectral_entropy: f64,
}

/// Output of the basic statistics tool, target channel first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatProfile {
    pub channels: Vec<ChannelStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelQuality {
    pub channel: String,
    pub dropout_ratio: f64,
    /// `None` when the channel has no observed values.
    pub clip_low: Option<f64>,
    pub clip_high: Option<f64>,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub kappa: f64,
    pub dropout_threshold: f64,
    pub channels: Vec<ChannelQuality>,
}

impl QualityReport {
    pub fn target(&self) -> &ChannelQuality {
        &self.channels[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub channel: String,
    pub mean: f64,
    pub std: f64,
    pub mad: f64,
    pub spectral_entropy: f64,
    pub clip_low: Option<f64>,
    pub clip_high: Option<f64>,
    pub dropout_ratio: f64,
    pub degraded: bool,
}

/// `<mean, std, MAD, spectral entropy, clipping bounds>` per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticState {
    pub channels: Vec<ChannelState>,
}

fn insufficient(tool: ToolId, msg: String) -> Error {
    Error::tool(tool, ToolFailure::InsufficientData(msg))
}

fn moments(tool: ToolId, name: &str, values: &[f64]) -> Result<ChannelMoments> {
    let obs = stats::observed(values);
    if obs.len() < 2 {
        return Err(insufficient(tool, format!("channel {name} has {} observed values, need 2", obs.len())));
    }
    Ok(ChannelMoments {
        channel: name.to_string(),
        mean: stats::mean(&obs).expect("non-empty"),
        std: stats::population_std(&obs).expect("non-empty"),
        min: obs.iter().copied().fold(f64::INFINITY, f64::min),
        max: obs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        observed: obs.len(),
    })
}

/// Mean, population standard deviation and extrema over observed values.
pub fn statistical_analysis(view: &LookbackView<'_>) -> Result<MomentProfile> {
    let channels = channel_order(view.layout())
        .into_iter()
        .map(|c| moments(ToolId::StatisticalAnalysis, view.channel_name(c), &view.channel(c)))
        .collect::<Result<_>>()?;
    Ok(MomentProfile { channels })
}

/// Shannon entropy (nats) of the normalised power spectrum over frequencies
/// `1..=floor(L/2)`; the DC bin is excluded. Missing values are replaced by the
/// observed mean first. Zero total power gives 0.
pub fn spectral_entropy(values: &[f64]) -> f64 {
    let l = values.len();
    let half = l / 2;
    if half == 0 {
        return 0.0;
    }
    let fill = stats::mean(&stats::observed(values)).unwrap_or(0.0);
    let mut buf: Vec<Complex<f64>> = values
        .iter()
        .map(|&v| Complex::new(if v.is_nan() { fill } else { v }, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(l).process(&mut buf);
    let power: Vec<f64> = buf[1..=half].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = power
        .iter()
        .map(|p| p / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.clamp(0.0, (half as f64).ln())
}

/// Moments plus median, MAD and spectral entropy.
pub fn basic_statistics(view: &LookbackView<'_>) -> Result<StatProfile> {
    let tool = ToolId::BasicStatistics;
    if view.len() < 4 {
        return Err(insufficient(tool, format!("lookback of {} rows, need 4", view.len())));
    }
    let channels = channel_order(view.layout())
        .into_iter()
        .map(|c| {
            let values = view.channel(c);
            let m = moments(tool, view.channel_name(c), &values)?;
            let obs = stats::observed(&values);
            Ok(ChannelStats {
                channel: m.channel,
                mean: m.mean,
                std: m.std,
                min: m.min,
                max: m.max,
                median: stats::median(&obs).expect("non-empty"),
                mad: stats::mad(&obs).expect("non-empty"),
                spectral_entropy: spectral_entropy(&values),
            })
        })
        .collect::<Result<_>>()?;
    Ok(StatProfile { channels })
}

/// Dropout ratio and the `[mu - kappa sigma, mu + kappa sigma]` clipping
/// boundary per channel. Never fails: a fully missing channel is reported as
/// degraded with undefined bounds.
pub fn data_quality(view: &LookbackView<'_>, kappa: f64, dropout_threshold: f64) -> QualityReport {
    let channels = channel_order(view.layout())
        .into_iter()
        .map(|c| {
            let values = view.channel(c);
            let obs = stats::observed(&values);
            let dropout_ratio = if values.is_empty() {
                1.0
            } else {
                (values.len() - obs.len()) as f64 / values.len() as f64
            };
            let bounds = stats::mean(&obs).map(|mu| {
                let sigma = stats::population_std(&obs).expect("non-empty");
                (mu - kappa * sigma, mu + kappa * sigma)
            });
            ChannelQuality {
                channel: view.channel_name(c).to_string(),
                dropout_ratio,
                clip_low: bounds.map(|b| b.0),
                clip_high: bounds.map(|b| b.1),
                degraded: obs.is_empty() || dropout_ratio > dropout_threshold,
            }
        })
        .collect();
    QualityReport { kappa, dropout_threshold, channels }
}

/// Aggregates the three profiler tools into one state per channel.
pub fn comprehensive_feature(view: &LookbackView<'_>, kappa: f64, dropout_threshold: f64) -> Result<DiagnosticState> {
    let basic = basic_statistics(view)?;
    let quality = data_quality(view, kappa, dropout_threshold);
    let channels = basic
        .channels
        .into_iter()
        .zip(quality.channels)
        .map(|(b, q)| ChannelState {
            channel: b.channel,
            mean: b.mean,
            std: b.std,
            mad: b.mad,
            spectral_entropy: b.spectral_entropy,
            clip_low: q.clip_low,
            clip_high: q.clip_high,
            dropout_ratio: q.dropout_ratio,
            degraded: q.degraded,
        })
        .collect();
    Ok(DiagnosticState { channels })
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "undefined".into())
}

impl PromptBlock for MomentProfile {
    fn prompt_block(&self) -> String {
        let mut s = String::from("[statistical_analysis]\n");
        for c in &self.channels {
            s.push_str(&format!(
                "channel={} mean={} std={} min={} max={} observed={}\n",
                c.channel,
                num(c.mean),
                num(c.std),
                num(c.min),
                num(c.max),
                c.observed
            ));
        }
        s
    }
}

impl PromptBlock for StatProfile {
    fn prompt_block(&self) -> String {
        let mut s = String::from("[basic_statistics]\n");
        for c in &self.channels {
            s.push_str(&format!(
                "channel={} mean={} std={} min={} max={} median={} mad={} spectral_entropy={}\n",
                c.channel,
                num(c.mean),
                num(c.std),
                num(c.min),
                num(c.max),
                num(c.median),
                num(c.mad),
                num(c.spectral_entropy)
            ));
        }
        s
    }
}

impl PromptBlock for QualityReport {
    fn prompt_block(&self) -> String {
        let mut s = format!("[data_quality]\nkappa={} dropout_threshold={}\n", num(self.kappa), num(self.dropout_threshold));
        for c in &self.channels {
            s.push_str(&format!(
                "channel={} dropout_ratio={} clip_low={} clip_high={} degraded={}\n",
                c.channel,
                num(c.dropout_ratio),
                opt(c.clip_low),
                opt(c.clip_high),
                c.degraded
            ));
        }
        s
    }
}

impl PromptBlock for DiagnosticState {
    fn prompt_block(&self) -> String {
        let mut s = String::from("[comprehensive_feature]\n");
        for c in &self.channels {
            s.push_str(&format!(
                "channel={} mean={} std={} mad={} spectral_entropy={} clip_low={} clip_high={} dropout_ratio={} degraded={}\n",
                c.channel,
                num(c.mean),
                num(c.std),
                num(c.mad),
                num(c.spectral_entropy),
                opt(c.clip_low),
                opt(c.clip_high),
                num(c.dropout_ratio),
                c.degraded
            ));
        }
        s
    }
}
