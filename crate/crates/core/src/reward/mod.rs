//! Composite verifiable reward, group-normalised advantages and the corpora
//! handed to an external trainer.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{observed_mae, observed_mse};
use crate::stats;
use crate::workflow::Trajectory;

mod export;

pub use export::{
    read_jsonl, rollout_record, sft_records, write_jsonl, RolloutRecord, SftRecord, CORPUS_SCHEMA_VERSION,
};

/// Standard deviations at or below this count as a degenerate group.
pub const EPS_NUM: f64 = 1e-12;

/// Minimum validation trajectories for [`calibrate`].
pub const MIN_CALIBRATION: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Hybrid,
    AbsoluteMse,
    RelativeMse,
    AbsoluteMae,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Hybrid, Variant::AbsoluteMse, Variant::RelativeMse, Variant::AbsoluteMae];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Hybrid => "hybrid",
            Variant::AbsoluteMse => "absolute_mse",
            Variant::RelativeMse => "relative_mse",
            Variant::AbsoluteMae => "absolute_mae",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub p_violation: f64,
    pub alpha: f64,
    /// Error upper bound where the sine branch ends.
    pub gamma: f64,
    pub lambda: f64,
    /// Normalisation of the relative gain.
    pub nu: f64,
    pub delta: f64,
    pub exp_rate: f64,
    pub variant: Variant,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            p_violation: 1.0,
            alpha: 0.8,
            gamma: 1.0,
            lambda: 2.0,
            nu: 1.0,
            delta: 1.0,
            exp_rate: 1.0,
            variant: Variant::Hybrid,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p_violation", self.p_violation),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("nu", self.nu),
            ("delta", self.delta),
            ("exp_rate", self.exp_rate),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("reward.{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("reward.alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Smoothly decaying utility of an error: a sine decay up to `gamma`, then an
/// exponential tail that meets it at `1 - alpha`.
pub fn absolute_utility(eps: f64, alpha: f64, gamma: f64, exp_rate: f64) -> Result<f64> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::Reward(format!("error must be non-negative, got {eps}")));
    }
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::Reward(format!("gamma must be positive, got {gamma}")));
    }
    Ok(if eps < gamma {
        1.0 - alpha * (std::f64::consts::PI * eps / (2.0 * gamma)).sin()
    } else {
        (1.0 - alpha) * (-exp_rate * (eps - gamma) / gamma).exp()
    })
}

/// `lambda (l_base - l_agent) / nu` before and after clipping to `[-delta, delta]`.
pub fn relative_gain_unclipped(l_base: f64, l_agent: f64, lambda: f64, nu: f64, delta: f64) -> (f64, f64) {
    let raw = lambda * (l_base - l_agent) / nu;
    (raw, raw.clamp(-delta, delta))
}

pub fn relative_gain(l_base: f64, l_agent: f64, lambda: f64, nu: f64, delta: f64) -> f64 {
    relative_gain_unclipped(l_base, l_agent, lambda, nu, delta).1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub valid: bool,
    pub absolute_term: Option<f64>,
    pub relative_term_pre_clip: Option<f64>,
    pub relative_term: Option<f64>,
    pub total: f64,
    pub l_agent: Option<f64>,
    pub l_base: Option<f64>,
}

impl RewardBreakdown {
    pub fn violation(cfg: &RewardConfig) -> Self {
        Self {
            valid: false,
            absolute_term: None,
            relative_term_pre_clip: None,
            relative_term: None,
            total: -cfg.p_violation,
            l_agent: None,
            l_base: None,
        }
    }
}

/// Reward of a completed forecast. `final_values = None` marks a trajectory
/// outside the valid set.
pub fn score(final_values: Option<&[f64]>, baseline: &[f64], truth: &[f64], cfg: &RewardConfig) -> Result<RewardBreakdown> {
    if truth.is_empty() {
        return Err(Error::Reward("missing ground truth".into()));
    }
    let Some(fin) = final_values else {
        return Ok(RewardBreakdown::violation(cfg));
    };
    if fin.len() != truth.len() || baseline.len() != truth.len() {
        return Err(Error::Reward(format!(
            "shape mismatch: final {}, baseline {}, truth {}",
            fin.len(),
            baseline.len(),
            truth.len()
        )));
    }
    let missing = || Error::Reward("ground truth has no observed values".into());
    let l_agent = observed_mse(fin, truth).ok_or_else(missing)?;
    let l_base = observed_mse(baseline, truth).ok_or_else(missing)?;
    let eps = match cfg.variant {
        Variant::AbsoluteMae => observed_mae(fin, truth).ok_or_else(missing)?,
        _ => l_agent,
    };
    let abs = absolute_utility(eps, cfg.alpha, cfg.gamma, cfg.exp_rate)?;
    let (pre, rel) = relative_gain_unclipped(l_base, l_agent, cfg.lambda, cfg.nu, cfg.delta);
    let total = match cfg.variant {
        Variant::Hybrid => abs + rel,
        Variant::AbsoluteMse | Variant::AbsoluteMae => abs,
        Variant::RelativeMse => rel,
    };
    Ok(RewardBreakdown {
        valid: true,
        absolute_term: Some(abs),
        relative_term_pre_clip: Some(pre),
        relative_term: Some(rel),
        total,
        l_agent: Some(l_agent),
        l_base: Some(l_base),
    })
}

/// Reward of a trajectory. Invalid and fallback-completed trajectories get
/// the violation penalty.
pub fn compute_reward(traj: &Trajectory, truth: &[f64], cfg: &RewardConfig) -> Result<RewardBreakdown> {
    if truth.is_empty() {
        return Err(Error::Reward("missing ground truth".into()));
    }
    if !traj.is_valid() {
        return Ok(RewardBreakdown::violation(cfg));
    }
    let baseline = traj
        .baseline
        .as_ref()
        .ok_or_else(|| Error::Reward("trajectory carries no baseline".into()))?;
    score(traj.final_values(), &baseline.values, truth, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantage {
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub advantages: Vec<f64>,
}

/// `(R_i - mean) / std` with population statistics; all zero when the group
/// is degenerate.
pub fn group_advantages(rewards: &[f64]) -> Result<GroupAdvantage> {
    if rewards.len() < 2 {
        return Err(Error::Advantage(format!("group needs at least 2 rewards, got {}", rewards.len())));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Advantage("rewards must be finite".into()));
    }
    let mean = stats::mean(rewards).expect("non-empty");
    let std = stats::population_std(rewards).expect("non-empty");
    let advantages = if std > EPS_NUM {
        rewards.iter().map(|r| (r - mean) / std).collect()
    } else {
        vec![0.0; rewards.len()]
    };
    Ok(GroupAdvantage { rewards: rewards.to_vec(), mean, std, advantages })
}

/// `(gamma, nu)` as the 90th percentile and the median of validation
/// baseline losses.
pub fn calibrate(baseline_losses: &[f64]) -> Result<(f64, f64)> {
    if baseline_losses.len() < MIN_CALIBRATION {
        return Err(Error::Calibration(format!(
            "need at least {MIN_CALIBRATION} validation trajectories, got {}",
            baseline_losses.len()
        )));
    }
    if baseline_losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::Calibration("baseline losses must be finite and non-negative".into()));
    }
    let gamma = stats::percentile(baseline_losses, 0.9).expect("non-empty");
    let nu = stats::median(baseline_losses).expect("non-empty");
    if gamma <= 0.0 || nu <= 0.0 {
        return Err(Error::Calibration(format!("degenerate losses: gamma {gamma}, nu {nu}")));
    }
    Ok((gamma, nu))
}

/// Baseline losses of trajectories against their truths.
pub fn baseline_losses<'a>(pairs: impl IntoIterator<Item = (&'a Trajectory, &'a [f64])>) -> Result<Vec<f64>> {
    pairs
        .into_iter()
        .map(|(t, y)| {
            let b = t.baseline.as_ref().ok_or_else(|| Error::Calibration("trajectory without baseline".into()))?;
            if b.values.len() != y.len() {
                return Err(Error::Calibration("baseline and truth lengths differ".into()));
            }
            observed_mse(&b.values, y).ok_or_else(|| Error::Calibration("truth has no observed values".into()))
        })
        .collect()
}
