//! Residual diagnoser: a least-squares AR(p) proxy fit with AIC order
//! selection, used only on training instances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{num, Mode, PromptBlock, ToolId};
use crate::error::{Error, Result, ToolFailure};
use crate::series::LookbackView;
use crate::stats;

/// An AR(p) fit `x_t = c + Σ φ_i x_{t-i} + ε_t` on rows `t = start..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFit {
    pub order: usize,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
}

impl ArFit {
    /// Iterates the fitted recurrence `horizon` steps past `history`.
    pub fn forecast(&self, history: &[f64], horizon: usize) -> Vec<f64> {
        let mut buf = history.to_vec();
        for _ in 0..horizon {
            let n = buf.len();
            let next = self.intercept
                + self
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(i, phi)| phi * buf[n - 1 - i])
                    .sum::<f64>();
            buf.push(next);
        }
        buf.split_off(history.len())
    }

    pub fn aic(&self) -> f64 {
        aic(self.rss, self.residuals.len(), self.order)
    }
}

fn aic(rss: f64, n: usize, order: usize) -> f64 {
    let n = n as f64;
    n * (rss.max(1e-300) / n).ln() + 2.0 * (order + 1) as f64
}

fn degenerate(msg: String) -> Error {
    Error::tool(ToolId::AutoregressiveResidual, ToolFailure::DegenerateFit(msg))
}

/// Ordinary least squares AR(p) with intercept over rows `start..x.len()`
/// (`start >= p`). A constant series is fitted exactly by the intercept alone.
fn fit_from(x: &[f64], p: usize, start: usize) -> Result<ArFit> {
    let n = x.len();
    if p == 0 || start < p || n <= start + p + 1 {
        return Err(degenerate(format!("{} rows cannot support AR({p})", n.saturating_sub(start))));
    }
    let rows = n - start;
    if x[start - p..].iter().all(|v| *v == x[start - p]) {
        return Ok(ArFit {
            order: p,
            intercept: x[start],
            coefficients: vec![0.0; p],
            residuals: vec![0.0; rows],
            rss: 0.0,
        });
    }
    let design = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { x[start + r - c] });
    let target = DVector::from_fn(rows, |r, _| x[start + r]);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|s| **s > smax * 1e-10).count();
    if rank < p + 1 {
        return Err(degenerate(format!("design matrix for AR({p}) has rank {rank}")));
    }
    let beta = svd
        .solve(&target, smax * 1e-12)
        .map_err(|e| degenerate(format!("least squares failed: {e}")))?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(degenerate("non-finite coefficients".into()));
    }
    let residuals: Vec<f64> = (target - &design * &beta).iter().copied().collect();
    let rss = residuals.iter().map(|e| e * e).sum();
    Ok(ArFit { order: p, intercept: beta[0], coefficients: beta.iter().skip(1).copied().collect(), residuals, rss })
}

/// AR(p) on every usable row `t = p..n`.
pub fn fit_ar(x: &[f64], p: usize) -> Result<ArFit> {
    fit_from(x, p, p)
}

/// Picks `p` in `1..=p_max` by AIC on the common sample `t = p_max..n`, then
/// refits the chosen order on all its usable rows. Ties go to the smaller order.
pub fn select_ar_order(x: &[f64], p_max: usize) -> Result<ArFit> {
    let mut best: Option<(f64, usize)> = None;
    for p in 1..=p_max {
        match fit_from(x, p, p_max) {
            Ok(fit) => {
                let score = fit.aic();
                if best.is_none_or(|(b, _)| score < b) {
                    best = Some((score, p));
                }
            }
            Err(Error::Tool { kind: ToolFailure::DegenerateFit(_), .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    let (_, p) = best.ok_or_else(|| degenerate(format!("no AR order in 1..={p_max} could be fitted")))?;
    fit_ar(x, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub order: usize,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub residual_mean: f64,
    /// Lag-1 residual autocorrelation.
    pub r1: f64,
    pub residual_std: f64,
    pub aic: f64,
    /// Always true: the report is only ever produced on training instances.
    pub train_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResidualOutcome {
    Fitted(ResidualReport),
    /// Test mode: the tool does not run.
    Bypassed,
}

impl ResidualOutcome {
    pub fn into_report(self) -> Option<ResidualReport> {
        match self {
            ResidualOutcome::Fitted(r) => Some(r),
            ResidualOutcome::Bypassed => None,
        }
    }
}

/// Fits the proxy AR process to the target and summarises its residuals:
/// `mu_eps = mean(eps)`, `r1 = Σ_{t>p+1} eps_t eps_{t-1} / Σ eps_t²`.
pub fn autoregressive_residual(view: &LookbackView<'_>, p_max: usize, mode: Mode) -> Result<ResidualOutcome> {
    if mode == Mode::Test {
        return Ok(ResidualOutcome::Bypassed);
    }
    let p_max = p_max.max(1);
    if view.len() < p_max + 10 {
        return Err(Error::tool(
            ToolId::AutoregressiveResidual,
            ToolFailure::InsufficientData(format!("lookback of {} rows, need {}", view.len(), p_max + 10)),
        ));
    }
    let x = stats::forward_filled(&view.target()).ok_or_else(|| {
        Error::tool(ToolId::AutoregressiveResidual, ToolFailure::InsufficientData("target fully missing".into()))
    })?;
    let fit = select_ar_order(&x, p_max)?;
    let eps = &fit.residuals;
    let ss: f64 = eps.iter().map(|e| e * e).sum();
    let lagged: f64 = eps.windows(2).map(|w| w[1] * w[0]).sum();
    let r1 = if ss > 0.0 { lagged / ss } else { 0.0 };
    Ok(ResidualOutcome::Fitted(ResidualReport {
        order: fit.order,
        intercept: fit.intercept,
        coefficients: fit.coefficients.clone(),
        residual_mean: stats::mean(eps).unwrap_or(0.0),
        r1,
        residual_std: stats::population_std(eps).unwrap_or(0.0),
        aic: fit.aic(),
        train_only: true,
    }))
}

impl PromptBlock for ResidualReport {
    fn prompt_block(&self) -> String {
        let coeffs: Vec<String> = self.coefficients.iter().map(|c| num(*c)).collect();
        format!(
            "[autoregressive_residual]\norder={} intercept={} coefficients={} residual_mean={} r1={} residual_std={} scope=train_only\n",
            self.order,
            num(self.intercept),
            coeffs.join(","),
            num(self.residual_mean),
            num(self.r1),
            num(self.residual_std)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Window;
    use crate::synthetic;

    #[test]
    fn test_mode_bypasses() {
        let w = Window::univariate(&synthetic::ar1(0.5, 50, 1), None, 4).unwrap();
        assert_eq!(autoregressive_residual(&w.view(), 10, Mode::Test).unwrap(), ResidualOutcome::Bypassed);
    }

    #[test]
    fn recovers_ar1_coefficient() {
        let w = Window::univariate(&synthetic::ar1(0.8, 400, 42), None, 4).unwrap();
        let r = autoregressive_residual(&w.view(), 10, Mode::Train).unwrap().into_report().unwrap();
        assert!((r.coefficients[0] - 0.8).abs() < 0.15, "phi1 = {}", r.coefficients[0]);
        assert!(r.r1.abs() < 0.2, "r1 = {}", r.r1);
        assert!(r.train_only);
    }

    #[test]
    fn constant_series_has_zero_residuals() {
        let w = Window::univariate(&[5.0; 30], None, 4).unwrap();
        let r = autoregressive_residual(&w.view(), 10, Mode::Train).unwrap().into_report().unwrap();
        assert_eq!(r.residual_mean, 0.0);
        assert_eq!(r.residual_std, 0.0);
        assert_eq!(r.intercept, 5.0);
    }

    #[test]
    fn short_window_is_insufficient() {
        let w = Window::univariate(&synthetic::ar1(0.5, 15, 1), None, 4).unwrap();
        assert!(autoregressive_residual(&w.view(), 10, Mode::Train).is_err());
    }

    #[test]
    fn forecast_iterates_recurrence() {
        let fit = ArFit { order: 1, intercept: 1.0, coefficients: vec![0.5], residuals: vec![], rss: 0.0 };
        assert_eq!(fit.forecast(&[2.0], 3), vec![2.0, 2.0, 2.0]);
        assert_eq!(fit.forecast(&[4.0], 2), vec![3.0, 2.5]);
    }
}
