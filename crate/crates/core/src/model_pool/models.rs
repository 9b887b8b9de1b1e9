//! Classical forecasters fitted per window on the target channel.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::plugin::ExternalModel;
use crate::error::{Error, Result};
use crate::series::LookbackView;
use crate::stats;
use crate::toolkit::fit_ar;

/// A pool member. Fitting happens inside `forecast` on the lookback alone, so
/// a model has no way to reach future values.
pub trait ForecastModel: Send + Sync {
    fn id(&self) -> String;
    /// Shortest lookback the model accepts.
    fn min_lookback(&self) -> usize;
    /// Exactly `view.horizon()` finite values for the target channel.
    fn forecast(&self, view: &LookbackView<'_>) -> Result<Vec<f64>>;
}

/// Serializable description of a pool member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Naive,
    SeasonalNaive { period: usize },
    LinearTrend,
    MovingAverage { window: usize },
    ExponentialSmoothing { alpha: f64 },
    Autoregressive { order: usize },
    /// Out-of-process model speaking the plugin protocol.
    External {
        name: String,
        command: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl ModelSpec {
    /// The default desk-scale pool.
    pub fn default_pool(period: usize) -> Vec<ModelSpec> {
        vec![
            ModelSpec::Naive,
            ModelSpec::SeasonalNaive { period },
            ModelSpec::LinearTrend,
            ModelSpec::MovingAverage { window: period },
            ModelSpec::ExponentialSmoothing { alpha: 0.3 },
            ModelSpec::Autoregressive { order: 4 },
        ]
    }

    pub fn id(&self) -> String {
        match self {
            ModelSpec::Naive => "naive".into(),
            ModelSpec::SeasonalNaive { period } => format!("seasonal_naive({period})"),
            ModelSpec::LinearTrend => "linear_trend".into(),
            ModelSpec::MovingAverage { window } => format!("moving_average({window})"),
            ModelSpec::ExponentialSmoothing { alpha } => format!("exponential_smoothing({alpha})"),
            ModelSpec::Autoregressive { order } => format!("autoregressive({order})"),
            ModelSpec::External { name, .. } => format!("external({name})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{}: {m}", self.id())));
        match self {
            ModelSpec::SeasonalNaive { period: 0 } => bad("period must be positive"),
            ModelSpec::MovingAverage { window: 0 } => bad("window must be positive"),
            ModelSpec::ExponentialSmoothing { alpha } if !(*alpha > 0.0 && *alpha <= 1.0) => bad("alpha must be in (0, 1]"),
            ModelSpec::Autoregressive { order: 0 } => bad("order must be positive"),
            ModelSpec::External { command, .. } if command.trim().is_empty() => bad("command is empty"),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Box<dyn ForecastModel> {
        match self {
            ModelSpec::Naive => Box::new(Naive),
            ModelSpec::SeasonalNaive { period } => Box::new(SeasonalNaive { period: *period }),
            ModelSpec::LinearTrend => Box::new(LinearTrend),
            ModelSpec::MovingAverage { window } => Box::new(MovingAverage { window: *window }),
            ModelSpec::ExponentialSmoothing { alpha } => Box::new(ExponentialSmoothing { alpha: *alpha }),
            ModelSpec::Autoregressive { order } => Box::new(Autoregressive { order: *order }),
            ModelSpec::External { name, command, args } => {
                Box::new(ExternalModel::new(name.clone(), command.clone(), args.clone()))
            }
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

fn model_error(model: &dyn ForecastModel, message: impl Into<String>) -> Error {
    Error::Model { model: model.id(), message: message.into() }
}

/// Forward-filled target after checking the model's minimum lookback.
fn prepared(model: &dyn ForecastModel, view: &LookbackView<'_>) -> Result<Vec<f64>> {
    if view.len() < model.min_lookback() {
        return Err(model_error(
            model,
            format!("insufficient data: lookback {} < {}", view.len(), model.min_lookback()),
        ));
    }
    stats::forward_filled(&view.target()).ok_or_else(|| model_error(model, "insufficient data: target fully missing"))
}

fn checked(model: &dyn ForecastModel, values: Vec<f64>) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(model_error(model, "non-finite forecast"));
    }
    Ok(values)
}

/// Repeats the last observation.
pub struct Naive;

impl ForecastModel for Naive {
    fn id(&self) -> String {
        "naive".into()
    }

    fn min_lookback(&self) -> usize {
        1
    }

    fn forecast(&self, view: &LookbackView<'_>) -> Result<Vec<f64>> {
        let x = prepared(self, view)?;
        checked(self, vec![x[x.len() - 1]; view.horizon()])
    }
}

/// Repeats the last full period.
pub struct SeasonalNaive {
    pub period: usize,
}

impl ForecastModel for SeasonalNaive {
    fn id(&self) -> String {
        format!("seasonal_naive({})", self.period)
    }

    fn min_lookback(&self) -> usize {
        self.period.max(1)
    }

    fn forecast(&self, view: &LookbackView<'_>) -> Result<Vec<f64>> {
        let x = prepared(self, view)?;
        let last = &x[x.len() - self.period..];
        checked(self, (0..view.horizon()).map(|h| last[h % self.period]).collect())
    }
}

/// Extends the least-squares line through the lookback.
pub struct LinearTrend;

impl ForecastModel for LinearTrend {
    fn id(&self) -> String {
        "linear_trend".into()
    }

    fn min_lookback(&self) -> usize {
        2
    }

    fn forecast(&self, view: &LookbackView<'_>) -> Result<Vec<f64>> {
        let x = prepared(self, view)?;
        let n = x.len();
        let slope = stats::ols_slope(&x).ok_or_else(|| model_error(self, "insufficient data"))?;
        let t_bar = (n - 1) as f64 / 2.0;
        let intercept = stats::mean(&x).unwrap_or(0.0) - slope * t_bar;
        checked(self, (0..view.horizon()).map(|h| intercept + slope * (n + h) as f64).collect())
    }
}

/// Mean of the last `window` values.
pub struct MovingAverage {
    pub window: usize,
}

impl ForecastModel for MovingAverage {
    fn id(&self) -> String {
        format!("moving_average({})", self.window)
    }

    fn min_lookback(&self) -> usize {
        self.window.max(1)
    }

    fn forecast(&self, view: &LookbackView<'_>) -> Result<Vec<f64>> {
        let x = prepared(self, view)?;
        let m = stats::mean(&x[x.len() - self.window..]).unwrap_or(0.0);
        checked(self, vec![m; view.horizon()])
    }
}

/// Simple exponential smoothing, level initialised at the first value.
pub struct ExponentialSmoothing {
    pub alpha: f64,
}

impl ForecastModel for ExponentialSmoothing {
    fn id(&self) -> String {
        format!("exponential_smoothing({})", self.alpha)
    }

    fn min_lookback(&self) -> usize {
        1
    }

    fn forecast(&self, view: &LookbackView<'_>) -> Result<Vec<f64>> {
        let x = prepared(self, view)?;
        let level = x[1..].iter().fold(x[0], |l, v| self.alpha * v + (1.0 - self.alpha) * l);
        checked(self, vec![level; view.horizon()])
    }
}

/// Least-squares AR(p) with intercept, iterated forward.
pub struct Autoregressive {
    pub order: usize,
}

impl ForecastModel for Autoregressive {
    fn id(&self) -> String {
        format!("autoregressive({})", self.order)
    }

    /// `p` lagged regressors plus an intercept need more than `p + 1` rows.
    fn min_lookback(&self) -> usize {
        2 * self.order + 2
    }

    fn forecast(&self, view: &LookbackView<'_>) -> Result<Vec<f64>> {
        let x = prepared(self, view)?;
        let fit = fit_ar(&x, self.order).map_err(|e| model_error(self, e.to_string()))?;
        checked(self, fit.forecast(&x, view.horizon()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Window;

    fn run(spec: ModelSpec, lookback: &[f64], h: usize) -> Result<Vec<f64>> {
        let w = Window::univariate(lookback, None, h).unwrap();
        spec.build().forecast(&w.view())
    }

    #[test]
    fn naive_repeats_last_value() {
        assert_eq!(run(ModelSpec::Naive, &[1.0, 3.0, 5.0], 3).unwrap(), vec![5.0; 3]);
    }

    #[test]
    fn seasonal_naive_repeats_last_period() {
        let x = [1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(run(ModelSpec::SeasonalNaive { period: 4 }, &x, 4).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(run(ModelSpec::SeasonalNaive { period: 4 }, &x, 6).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn linear_trend_extrapolates() {
        let x: Vec<f64> = (0..10).map(|t| 3.0 * t as f64).collect();
        let f = run(ModelSpec::LinearTrend, &x, 2).unwrap();
        assert!((f[0] - 30.0).abs() < 1e-9 && (f[1] - 33.0).abs() < 1e-9);
    }

    #[test]
    fn moving_average_and_smoothing() {
        assert_eq!(run(ModelSpec::MovingAverage { window: 2 }, &[1.0, 2.0, 4.0], 2).unwrap(), vec![3.0, 3.0]);
        // level: 0 -> 0.5*4 = 2 -> 0.5*2 + 0.5*2 = 2
        assert_eq!(run(ModelSpec::ExponentialSmoothing { alpha: 0.5 }, &[0.0, 4.0, 2.0], 1).unwrap(), vec![2.0]);
    }

    #[test]
    fn autoregressive_follows_exact_recurrence() {
        // x_t = 1 + 0.5 x_{t-1}, fixed point 2
        let mut x = vec![10.0];
        for _ in 0..30 {
            let last = *x.last().unwrap();
            x.push(1.0 + 0.5 * last);
        }
        let f = run(ModelSpec::Autoregressive { order: 1 }, &x, 3).unwrap();
        let last = x[x.len() - 1];
        let e1 = 1.0 + 0.5 * last;
        assert!((f[0] - e1).abs() < 1e-6);
    }

    #[test]
    fn short_lookback_is_rejected() {
        let err = run(ModelSpec::SeasonalNaive { period: 24 }, &[1.0; 10], 4).unwrap_err();
        assert!(matches!(err, Error::Model { .. }));
        assert!(err.to_string().contains("insufficient data"));
    }

    #[test]
    fn specs_round_trip_through_json() {
        for spec in ModelSpec::default_pool(24) {
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
            assert_eq!(spec.build().id(), spec.id());
        }
    }
}
