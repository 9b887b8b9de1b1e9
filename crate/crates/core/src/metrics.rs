//! Forecast container and point-error metrics on the original value scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Baseline,
    Candidate,
    Refined,
    Fallback,
}

/// An `H`-step forecast of the target channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    values: Vec<f64>,
    produced_by: Provenance,
}

impl Forecast {
    pub fn new(values: Vec<f64>, produced_by: Provenance) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Metric("forecast has no horizon steps".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Metric(format!("forecast value at step {i} is not finite")));
        }
        Ok(Self { values, produced_by })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn produced_by(&self) -> Provenance {
        self.produced_by
    }

    pub fn relabel(mut self, produced_by: Provenance) -> Self {
        self.produced_by = produced_by;
        self
    }

    pub fn mse(&self, truth: &[f64]) -> Result<f64> {
        mse(&self.values, truth)
    }

    pub fn mae(&self, truth: &[f64]) -> Result<f64> {
        mae(&self.values, truth)
    }
}

fn check_shapes(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!(
            "shape mismatch: {} predicted vs {} observed values",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Metric("empty inputs".into()));
    }
    Ok(())
}

/// Mean squared error over all entries. Matrices are passed flattened in the
/// same order on both sides.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_shapes(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(ss / pred.len() as f64)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_shapes(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.len() as f64)
}

/// MSE over the positions where the truth is observed; `None` when none
/// are. Lengths must already agree.
pub fn observed_mse(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = pred.iter().zip(truth).filter(|(_, t)| !t.is_nan()).map(|(p, t)| (*p, *t)).collect();
    if pairs.is_empty() {
        return None;
    }
    Some(pairs.iter().map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pairs.len() as f64)
}

/// MAE over the positions where the truth is observed.
pub fn observed_mae(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let errs: Vec<f64> = pred.iter().zip(truth).filter(|(_, t)| !t.is_nan()).map(|(p, t)| (p - t).abs()).collect();
    if errs.is_empty() {
        return None;
    }
    Some(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Squared Euclidean norm.
pub fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_inputs_have_zero_error() {
        let a = [1.0, -2.0, 3.5];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let p: Vec<f64> = t.iter().map(|x| x + 1.0).collect();
        assert_eq!(mse(&p, &t).unwrap(), 1.0);
        assert_eq!(mae(&p, &t).unwrap(), 1.0);
    }

    #[test]
    fn matches_double_loop_on_3x2() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p: [[f64; 2]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-5.0..5.0)));
        let t: [[f64; 2]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-5.0..5.0)));
        let (mut se, mut ae) = (0.0, 0.0);
        for h in 0..3 {
            for c in 0..2 {
                se += (p[h][c] - t[h][c]).powi(2);
                ae += (p[h][c] - t[h][c]).abs();
            }
        }
        let pf: Vec<f64> = p.iter().flatten().copied().collect();
        let tf: Vec<f64> = t.iter().flatten().copied().collect();
        assert!((mse(&pf, &tf).unwrap() - se / 6.0).abs() < 1e-12);
        assert!((mae(&pf, &tf).unwrap() - ae / 6.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::Metric(_))));
        assert!(matches!(mae(&[], &[]), Err(Error::Metric(_))));
    }

    #[test]
    fn forecast_rejects_non_finite() {
        assert!(Forecast::new(vec![1.0, f64::NAN], Provenance::Candidate).is_err());
        assert!(Forecast::new(vec![], Provenance::Candidate).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_and_zero_only_on_equality(
            a in prop::collection::vec(-1e3f64..1e3, 1..20),
            shift in -10.0f64..10.0,
        ) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| if i == 0 { x + shift } else { *x }).collect();
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            prop_assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
            prop_assert_eq!(mse(&a, &b).unwrap() == 0.0, a == b);
        }
    }
}
