//! Time series containers, chronological splitting and sliding windows.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel names and roles. Roles come from configuration, never inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub names: Vec<String>,
    pub target: usize,
    pub exogenous: Vec<usize>,
}

impl ChannelLayout {
    pub fn new(names: Vec<String>, target: usize, exogenous: Vec<usize>) -> Result<Self> {
        let n = names.len();
        if target >= n {
            return Err(Error::Config(format!("target channel {target} out of range ({n} channels)")));
        }
        for &c in &exogenous {
            if c >= n {
                return Err(Error::Config(format!("exogenous channel {c} out of range ({n} channels)")));
            }
            if c == target {
                return Err(Error::Config(format!("channel {c} is both target and exogenous")));
            }
        }
        let mut seen = exogenous.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != exogenous.len() {
            return Err(Error::Config("duplicate exogenous channel".into()));
        }
        Ok(Self { names, target, exogenous })
    }

    /// Single target channel named `value`, no covariates.
    pub fn univariate() -> Self {
        Self { names: vec!["value".into()], target: 0, exogenous: vec![] }
    }

    pub fn channel_count(&self) -> usize {
        self.names.len()
    }

    pub fn target_name(&self) -> &str {
        &self.names[self.target]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frequency(pub String);

impl Default for Frequency {
    fn default() -> Self {
        Frequency("step".into())
    }
}

/// Multivariate observations indexed by a strictly increasing time index.
/// Missing observations are `NaN`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    timestamps: Vec<i64>,
    #[serde(with = "crate::serde_nan::matrix")]
    values: Array2<f64>,
    layout: ChannelLayout,
    frequency: Frequency,
}

impl TimeSeries {
    pub fn new(
        timestamps: Vec<i64>,
        values: Array2<f64>,
        layout: ChannelLayout,
        frequency: Frequency,
    ) -> Result<Self> {
        if timestamps.len() != values.nrows() {
            return Err(Error::Config(format!(
                "{} timestamps but {} value rows",
                timestamps.len(),
                values.nrows()
            )));
        }
        if values.ncols() != layout.channel_count() {
            return Err(Error::Config(format!(
                "{} value columns but {} channel names",
                values.ncols(),
                layout.channel_count()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("timestamps not strictly increasing at row {}", i + 1)));
        }
        Ok(Self { timestamps, values, layout, frequency })
    }

    /// Integer-indexed single-channel series.
    pub fn from_values(values: &[f64]) -> Self {
        let ts = (0..values.len() as i64).collect();
        let m = Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape");
        Self::new(ts, m, ChannelLayout::univariate(), Frequency::default()).expect("valid univariate series")
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }

    pub fn frequency(&self) -> &Frequency {
        &self.frequency
    }

    pub fn channel(&self, c: usize) -> ArrayView1<'_, f64> {
        self.values.column(c)
    }

    pub fn target(&self) -> ArrayView1<'_, f64> {
        self.values.column(self.layout.target)
    }

    /// Rows `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeries {
        TimeSeries {
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values.slice(s![start..end, ..]).to_owned(),
            layout: self.layout.clone(),
            frequency: self.frequency.clone(),
        }
    }

    /// Concatenation of `self` followed by `other`; used to reassemble splits.
    pub fn concat(&self, other: &TimeSeries) -> Result<TimeSeries> {
        if self.layout != other.layout {
            return Err(Error::Config("cannot concatenate series with different layouts".into()));
        }
        let mut ts = self.timestamps.clone();
        ts.extend_from_slice(&other.timestamps);
        let values = ndarray::concatenate(Axis(0), &[self.values.view(), other.values.view()])
            .map_err(|e| Error::Config(e.to_string()))?;
        TimeSeries::new(ts, values, self.layout.clone(), self.frequency.clone())
    }

    /// Fraction of missing entries per channel.
    pub fn dropout_by_channel(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.values
            .columns()
            .into_iter()
            .map(|c| c.iter().filter(|v| v.is_nan()).count() as f64 / n)
            .collect()
    }
}

/// Chronological train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub stride: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.7, validation_fraction: 0.1, test_fraction: 0.2, stride: 1 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.validation_fraction, self.test_fraction];
        if f.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(Error::Split(format!("split fractions must be positive, got {f:?}")));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("split fractions sum to {sum}, expected 1")));
        }
        if self.stride == 0 {
            return Err(Error::Split("stride must be positive".into()));
        }
        Ok(())
    }

    /// Segment lengths: floored fractions, remainder to test.
    pub fn segment_lengths(&self, len: usize) -> (usize, usize, usize) {
        // the epsilon absorbs products like 0.7 * 30 = 20.999999999999996
        let floor = |f: f64| (f * len as f64 + 1e-9).floor() as usize;
        let train = floor(self.train_fraction);
        let val = floor(self.validation_fraction);
        (train, val, len - train - val)
    }
}

/// Splits `series` into contiguous train, validation and test segments.
pub fn chronological_split(series: &TimeSeries, spec: &SplitSpec) -> Result<(TimeSeries, TimeSeries, TimeSeries)> {
    spec.validate()?;
    let len = series.len();
    if len < 10 {
        return Err(Error::Split(format!("series of length {len} is too short to split (need ≥ 10)")));
    }
    let (train, val, test) = spec.segment_lengths(len);
    if train == 0 || val == 0 || test == 0 {
        return Err(Error::Split(format!("empty segment in {train}/{val}/{test} split of {len} rows")));
    }
    Ok((
        series.slice(0, train),
        series.slice(train, train + val),
        series.slice(train + val, len),
    ))
}

/// One forecasting instance: an `L`-row lookback and, for labelled data, the
/// `H`-row future that follows it.
///
/// `origin_index` is the parent-series row of the first horizon step, so every
/// lookback row lies strictly before it.
#[derive(Debug, Clone)]
pub struct Window {
    lookback: Array2<f64>,
    future: Option<Array2<f64>>,
    origin_index: usize,
    horizon: usize,
    layout: Arc<ChannelLayout>,
}

impl Window {
    pub fn new(
        lookback: Array2<f64>,
        future: Option<Array2<f64>>,
        origin_index: usize,
        horizon: usize,
        layout: Arc<ChannelLayout>,
    ) -> Result<Self> {
        if lookback.nrows() == 0 || horizon == 0 {
            return Err(Error::Config("window needs L > 0 and H > 0".into()));
        }
        if lookback.ncols() != layout.channel_count() {
            return Err(Error::Config("lookback column count does not match layout".into()));
        }
        if let Some(f) = &future {
            if f.nrows() != horizon || f.ncols() != lookback.ncols() {
                return Err(Error::Config(format!(
                    "future has shape {:?}, expected ({horizon}, {})",
                    f.dim(),
                    lookback.ncols()
                )));
            }
        }
        if origin_index < lookback.nrows() {
            return Err(Error::Config("origin precedes the end of the lookback".into()));
        }
        Ok(Self { lookback, future, origin_index, horizon, layout })
    }

    /// Univariate window, mostly for tests and examples.
    pub fn univariate(lookback: &[f64], future: Option<&[f64]>, horizon: usize) -> Result<Self> {
        let l = lookback.len();
        let lb = Array2::from_shape_vec((l, 1), lookback.to_vec()).map_err(|e| Error::Config(e.to_string()))?;
        let fut = match future {
            Some(f) => Some(Array2::from_shape_vec((f.len(), 1), f.to_vec()).map_err(|e| Error::Config(e.to_string()))?),
            None => None,
        };
        Window::new(lb, fut, l, horizon, Arc::new(ChannelLayout::univariate()))
    }

    /// The only access path used by tools, models and the workflow.
    pub fn view(&self) -> LookbackView<'_> {
        LookbackView {
            lookback: self.lookback.view(),
            layout: &self.layout,
            horizon: self.horizon,
            origin_index: self.origin_index,
        }
    }

    pub fn lookback_len(&self) -> usize {
        self.lookback.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn origin_index(&self) -> usize {
        self.origin_index
    }

    pub fn layout(&self) -> &Arc<ChannelLayout> {
        &self.layout
    }

    pub fn future(&self) -> Option<&Array2<f64>> {
        self.future.as_ref()
    }

    /// Target-channel future, when labelled.
    pub fn target_future(&self) -> Option<Vec<f64>> {
        self.future.as_ref().map(|f| f.column(self.layout.target).to_vec())
    }

    /// Same lookback, different future; used to check that nothing reads it.
    pub fn with_future(&self, future: Option<Array2<f64>>) -> Result<Self> {
        Window::new(self.lookback.clone(), future, self.origin_index, self.horizon, self.layout.clone())
    }

    pub fn without_future(&self) -> Self {
        Self { future: None, ..self.clone() }
    }
}

/// Read-only lookback with channel roles and the horizon length. Carries no
/// future observations.
#[derive(Debug, Clone, Copy)]
pub struct LookbackView<'a> {
    lookback: ArrayView2<'a, f64>,
    layout: &'a ChannelLayout,
    horizon: usize,
    origin_index: usize,
}

impl<'a> LookbackView<'a> {
    pub fn len(&self) -> usize {
        self.lookback.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.lookback.nrows() == 0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn origin_index(&self) -> usize {
        self.origin_index
    }

    pub fn layout(&self) -> &'a ChannelLayout {
        self.layout
    }

    pub fn matrix(&self) -> ArrayView2<'a, f64> {
        self.lookback
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.lookback.column(c).to_vec()
    }

    pub fn target(&self) -> Vec<f64> {
        self.channel(self.layout.target)
    }

    pub fn target_index(&self) -> usize {
        self.layout.target
    }

    pub fn exogenous(&self) -> &'a [usize] {
        &self.layout.exogenous
    }

    pub fn channel_name(&self, c: usize) -> &'a str {
        &self.layout.names[c]
    }
}

/// Slides an `L`-row lookback (plus `H` future rows when `with_future`) over
/// `series` from row 0 in steps of `stride`.
pub fn make_windows(
    series: &TimeSeries,
    lookback: usize,
    horizon: usize,
    stride: usize,
    with_future: bool,
) -> Result<Vec<Window>> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config("L and H must be positive".into()));
    }
    let span = lookback + if with_future { horizon } else { 0 };
    let len = series.len();
    if span > len {
        return Err(Error::Config(format!(
            "series of length {len} cannot hold a window of {span} rows"
        )));
    }
    let layout = Arc::new(series.layout().clone());
    let count = (len - span) / stride + 1;
    let values = series.values();
    (0..count)
        .map(|i| {
            let start = i * stride;
            let origin = start + lookback;
            let lb = values.slice(s![start..origin, ..]).to_owned();
            let fut = with_future.then(|| values.slice(s![origin..origin + horizon, ..]).to_owned());
            Window::new(lb, fut, origin, horizon, layout.clone())
        })
        .collect()
}

/// Windows whose horizons start at `start`, `start + stride`, ... and end by
/// `end`. Lookbacks may reach back before `start` (context from the preceding
/// segment) but never before row 0.
pub fn windows_in_range(
    series: &TimeSeries,
    lookback: usize,
    horizon: usize,
    stride: usize,
    start: usize,
    end: usize,
) -> Result<Vec<Window>> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config("L and H must be positive".into()));
    }
    if end > series.len() || start > end {
        return Err(Error::Config(format!("range {start}..{end} outside series of length {}", series.len())));
    }
    let layout = Arc::new(series.layout().clone());
    let values = series.values();
    let mut out = vec![];
    let mut origin = start.max(lookback);
    while origin + horizon <= end {
        let lb = values.slice(s![origin - lookback..origin, ..]).to_owned();
        let fut = values.slice(s![origin..origin + horizon, ..]).to_owned();
        out.push(Window::new(lb, Some(fut), origin, horizon, layout.clone())?);
        origin += stride;
    }
    Ok(out)
}

/// Labelled windows of each chronological segment. Training windows lie
/// wholly inside the training segment; validation and test horizons lie
/// inside their own segment with lookbacks taken from the rows before.
#[derive(Debug, Clone)]
pub struct SplitWindows {
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
}

pub fn split_windows(series: &TimeSeries, spec: &SplitSpec, lookback: usize, horizon: usize) -> Result<SplitWindows> {
    spec.validate()?;
    let (train, val, _) = spec.segment_lengths(series.len());
    let train_end = train;
    let val_end = train + val;
    Ok(SplitWindows {
        train: windows_in_range(series, lookback, horizon, spec.stride, lookback, train_end)?,
        validation: windows_in_range(series, lookback, horizon, spec.stride, train_end, val_end)?,
        test: windows_in_range(series, lookback, horizon, spec.stride, val_end, series.len())?,
    })
}
