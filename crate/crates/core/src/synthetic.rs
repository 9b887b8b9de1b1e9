//! Seeded synthetic series for benchmarks, examples and tests.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::series::{ChannelLayout, Frequency, TimeSeries};

#[derive(Debug, Clone, Copy)]
pub struct SeasonalTrend {
    pub length: usize,
    pub period: usize,
    pub amplitude: f64,
    pub slope: f64,
    pub level: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SeasonalTrend {
    fn default() -> Self {
        Self { length: 2000, period: 24, amplitude: 10.0, slope: 0.01, level: 50.0, noise_std: 1.0, seed: 7 }
    }
}

impl SeasonalTrend {
    /// Target only.
    pub fn values(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_std).expect("finite std");
        (0..self.length)
            .map(|t| {
                let tf = t as f64;
                self.level
                    + self.slope * tf
                    + self.amplitude * (2.0 * PI * tf / self.period as f64).sin()
                    + noise.sample(&mut rng)
            })
            .collect()
    }

    /// Target plus two covariates: a noisy copy of the target leading it by
    /// one step, and an independent noise channel.
    pub fn with_covariates(&self) -> TimeSeries {
        let y = self.values();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let noise = Normal::new(0.0, 1.0).expect("finite std");
        let n = y.len();
        let mut m = Array2::zeros((n, 3));
        for t in 0..n {
            m[[t, 0]] = y[t];
            let lead = if t + 1 < n { y[t + 1] } else { y[t] };
            m[[t, 1]] = 0.5 * lead + noise.sample(&mut rng) * 0.1;
            m[[t, 2]] = noise.sample(&mut rng);
        }
        let layout = ChannelLayout::new(vec!["target".into(), "leading".into(), "noise".into()], 0, vec![1, 2])
            .expect("static layout");
        TimeSeries::new((0..n as i64).collect(), m, layout, Frequency("1".into())).expect("valid series")
    }
}

/// Alternating blocks of a sine regime and a sawtooth ramp regime, with the
/// per-row regime label.
pub fn two_regimes(block: usize, blocks: usize, seed: u64) -> (Vec<f64>, Vec<&'static str>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("finite std");
    let mut values = Vec::with_capacity(block * blocks);
    let mut labels = Vec::with_capacity(block * blocks);
    for b in 0..blocks {
        for t in 0..block {
            let tf = t as f64;
            let (v, label) = if b % 2 == 0 {
                ((2.0 * PI * tf / 12.0).sin(), "sine")
            } else {
                ((t % block) as f64 / block as f64 * 2.0 - 1.0, "ramp")
            };
            values.push(v + noise.sample(&mut rng));
            labels.push(label);
        }
    }
    (values, labels)
}

/// Stationary AR(1) path `x_t = phi x_{t-1} + eta_t`.
pub fn ar1(phi: f64, length: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("finite std");
    let mut x = 0.0;
    (0..length)
        .map(|_| {
            x = phi * x + noise.sample(&mut rng);
            x
        })
        .collect()
}
