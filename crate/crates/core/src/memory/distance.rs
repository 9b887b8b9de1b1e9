//! Composite sequence distance: DTW, Euclidean and cosine terms over z-scored
//! sequences, each rescaled to a common magnitude.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Dynamic time warping cost with squared-difference local cost and the
/// symmetric unit step pattern (match, insertion, deletion).
pub fn dtw_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        curr[0] = f64::INFINITY;
        for j in 1..=m {
            let cost = (x - b[j - 1]) * (x - b[j - 1]);
            curr[j] = cost + prev[j - 1].min(prev[j]).min(curr[j - 1]);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// A z-scored sequence. Constant inputs map to all zeros and are flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScored {
    pub values: Vec<f64>,
    pub flat: bool,
}

impl ZScored {
    /// Missing values are forward filled before scaling.
    pub fn new(raw: &[f64]) -> Self {
        let filled = stats::forward_filled(raw).unwrap_or_else(|| vec![0.0; raw.len()]);
        let mu = stats::mean(&filled).unwrap_or(0.0);
        let sigma = stats::population_std(&filled).unwrap_or(0.0);
        let scale = filled.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if sigma <= 1e-12 * scale {
            return Self { values: vec![0.0; filled.len()], flat: true };
        }
        Self { values: filled.iter().map(|v| (v - mu) / sigma).collect(), flat: false }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The three raw terms between two z-scored sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceTerms {
    pub dtw: f64,
    pub euclidean: f64,
    /// `1 - cos`, in `[0, 2]`.
    pub cosine: f64,
}

pub fn distance_terms(a: &ZScored, b: &ZScored) -> Result<DistanceTerms> {
    if a.len() != b.len() {
        return Err(Error::Distance(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Distance("empty sequences".into()));
    }
    if a.values == b.values {
        return Ok(DistanceTerms { dtw: 0.0, euclidean: 0.0, cosine: 0.0 });
    }
    let euclidean = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = match (na > 0.0, nb > 0.0) {
        (true, true) => (a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0),
        (false, false) => 1.0,
        _ => 0.0,
    };
    Ok(DistanceTerms { dtw: dtw_distance(&a.values, &b.values), euclidean, cosine: 1.0 - cos })
}

/// Term weights and per-term scales. Scales default to 1 and are normally
/// set to the in-batch median of each term by [`DistanceConfig::calibrated`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceConfig {
    pub w_dtw: f64,
    pub w_euclidean: f64,
    pub w_cosine: f64,
    pub scale_dtw: f64,
    pub scale_euclidean: f64,
    pub scale_cosine: f64,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            w_dtw: 1.0 / 3.0,
            w_euclidean: 1.0 / 3.0,
            w_cosine: 1.0 / 3.0,
            scale_dtw: 1.0,
            scale_euclidean: 1.0,
            scale_cosine: 1.0,
        }
    }
}

/// At most this many items take part in scale calibration.
const CALIBRATION_SAMPLE: usize = 64;

impl DistanceConfig {
    pub fn combine(&self, t: DistanceTerms) -> f64 {
        self.w_dtw * t.dtw / self.scale_dtw
            + self.w_euclidean * t.euclidean / self.scale_euclidean
            + self.w_cosine * t.cosine / self.scale_cosine
    }

    /// Same weights, scales set to the median of each term over all pairs of
    /// an evenly spaced sample of `items`. Zero medians keep scale 1.
    pub fn calibrated(&self, items: &[ZScored]) -> Result<Self> {
        let step = items.len().div_ceil(CALIBRATION_SAMPLE).max(1);
        let sample: Vec<&ZScored> = items.iter().step_by(step).collect();
        let (mut d, mut e, mut c) = (vec![], vec![], vec![]);
        for i in 0..sample.len() {
            for j in i + 1..sample.len() {
                let t = distance_terms(sample[i], sample[j])?;
                d.push(t.dtw);
                e.push(t.euclidean);
                c.push(t.cosine);
            }
        }
        let scale = |v: &[f64]| stats::median(v).filter(|m| *m > 1e-12).unwrap_or(1.0);
        Ok(Self { scale_dtw: scale(&d), scale_euclidean: scale(&e), scale_cosine: scale(&c), ..*self })
    }

    pub fn distance(&self, a: &ZScored, b: &ZScored) -> Result<f64> {
        Ok(self.combine(distance_terms(a, b)?))
    }

    pub fn similarity(&self, a: &ZScored, b: &ZScored) -> Result<f64> {
        Ok(1.0 / (1.0 + self.distance(a, b)?))
    }
}

/// Composite distance between raw sequences (z-scored internally).
pub fn composite_distance(a: &[f64], b: &[f64], config: &DistanceConfig) -> Result<f64> {
    config.distance(&ZScored::new(a), &ZScored::new(b))
}

/// `1 / (1 + composite_distance)`, in `(0, 1]`.
pub fn similarity(a: &[f64], b: &[f64], config: &DistanceConfig) -> Result<f64> {
    Ok(1.0 / (1.0 + composite_distance(a, b, config)?))
}
