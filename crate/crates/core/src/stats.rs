//! Small numeric helpers over `f64` slices. Missing values are `NaN` and are
//! skipped by every function that says so.

/// Non-missing values in their original order.
pub fn observed(values: &[f64]) -> Vec<f64> {
    values.iter().copied().filter(|v| !v.is_nan()).collect()
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Population standard deviation, computed in two passes.
pub fn population_std(values: &[f64]) -> Option<f64> {
    let mu = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - mu) * (v - mu)).sum();
    Some((ss / values.len() as f64).sqrt())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Median absolute deviation around the median (unscaled).
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Percentile with linear interpolation between closest ranks, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Least-squares slope of `values` against `t = 0..n`, skipping missing
/// points. `None` when fewer than two points are observed.
pub fn ols_slope(values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .map(|(t, v)| (t as f64, *v))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let t_bar = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let x_bar = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|(t, x)| (t - t_bar) * (x - x_bar)).sum();
    let den: f64 = pts.iter().map(|(t, _)| (t - t_bar) * (t - t_bar)).sum();
    Some(num / den)
}

/// Missing values replaced by the previous observation; leading gaps take the
/// first observation. `None` if nothing is observed.
pub fn forward_filled(values: &[f64]) -> Option<Vec<f64>> {
    let first = values.iter().copied().find(|v| !v.is_nan())?;
    let mut last = first;
    Some(
        values
            .iter()
            .map(|&v| {
                if v.is_nan() {
                    last
                } else {
                    last = v;
                    v
                }
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn percentile_of_integer_sequence() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&v, 0.5).unwrap() - 50.5).abs() < 1e-12);
        assert!((percentile(&v, 0.9).unwrap() - 90.1).abs() < 1e-12);
    }

    #[test]
    fn forward_fill_handles_leading_gap() {
        let v = [f64::NAN, 2.0, f64::NAN, 4.0];
        assert_eq!(forward_filled(&v).unwrap(), vec![2.0, 2.0, 2.0, 4.0]);
        assert!(forward_filled(&[f64::NAN]).is_none());
    }
}
