//! Time-series container, normalization, windowing and the rolling
//! train/test protocol.

use std::ops::Range;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on a channel's normalization scale.
pub const SCALE_FLOOR: f64 = 1e-8;

/// A `d`-channel series on a regular time grid `start + k * step`.
///
/// Values are stored row-major: `values[t * d + c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame {
    start: NaiveDateTime,
    step: TimeDelta,
    channels: Vec<String>,
    values: Vec<f64>,
}

impl SeriesFrame {
    pub fn new(start: NaiveDateTime, step: TimeDelta, channels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidArgument("series needs at least one channel".into()));
        }
        if step <= TimeDelta::zero() {
            return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
        }
        let d = channels.len();
        if values.is_empty() || values.len() % d != 0 {
            return Err(Error::shape(format!("N x {d} values with N >= 1"), format!("{} values", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("row {}, channel {}", i / d, channels[i % d])));
        }
        Ok(SeriesFrame { start, step, channels, values })
    }

    /// Single-channel convenience constructor.
    pub fn univariate(start: NaiveDateTime, step: TimeDelta, name: &str, values: Vec<f64>) -> Result<Self> {
        SeriesFrame::new(start, step, vec![name.to_string()], values)
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn step(&self) -> TimeDelta {
        self.step
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.channels.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let d = self.dim();
        &self.values[t * d..(t + 1) * d]
    }

    pub fn value(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.dim() + c]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.dim()).copied().collect()
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + self.step * t as i32
    }

    pub fn end(&self) -> NaiveDateTime {
        self.timestamp(self.len())
    }

    /// Index of `ts` on this grid, if it lies exactly on a grid point.
    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let off = (ts - self.start).num_milliseconds();
        let step = self.step.num_milliseconds();
        if off < 0 || off % step != 0 {
            return None;
        }
        let i = (off / step) as usize;
        (i < self.len()).then_some(i)
    }

    pub fn slice(&self, range: Range<usize>) -> Result<SeriesFrame> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::InvalidArgument(format!("slice {range:?} out of bounds for length {}", self.len())));
        }
        let d = self.dim();
        Ok(SeriesFrame {
            start: self.timestamp(range.start),
            step: self.step,
            channels: self.channels.clone(),
            values: self.values[range.start * d..range.end * d].to_vec(),
        })
    }

    /// Keep only the listed channels, in the given order.
    pub fn select(&self, names: &[String]) -> Result<SeriesFrame> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.channels
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::InvalidArgument(format!("no channel named {n:?}")))
            })
            .collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(self.len() * idx.len());
        for t in 0..self.len() {
            values.extend(idx.iter().map(|&c| self.value(t, c)));
        }
        SeriesFrame::new(self.start, self.step, names.to_vec(), values)
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> SeriesFrame {
        SeriesFrame { start: self.start, step: self.step, channels: self.channels.clone(), values }
    }
}

/// Per-channel affine normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    /// Mean and population standard deviation of each channel over `range`,
    /// with the scale clamped to [`SCALE_FLOOR`].
    pub fn fit(series: &SeriesFrame, range: Range<usize>) -> Result<NormStats> {
        if range.start >= range.end || range.end > series.len() {
            return Err(Error::InvalidArgument(format!("fit range {range:?} out of bounds")));
        }
        let n = (range.end - range.start) as f64;
        let d = series.dim();
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for c in 0..d {
            let mu = range.clone().map(|t| series.value(t, c)).sum::<f64>() / n;
            let var = range.clone().map(|t| (series.value(t, c) - mu).powi(2)).sum::<f64>() / n;
            mean[c] = mu;
            scale[c] = var.sqrt().max(SCALE_FLOOR);
        }
        Ok(NormStats { mean, scale })
    }

    pub fn identity(d: usize) -> NormStats {
        NormStats { mean: vec![0.0; d], scale: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.mean.len() != d || self.scale.len() != d {
            return Err(Error::shape(format!("{d} channels"), format!("{} channel stats", self.mean.len())));
        }
        Ok(())
    }

    pub fn normalize_value(&self, c: usize, v: f64) -> f64 {
        (v - self.mean[c]) / self.scale[c]
    }

    pub fn denormalize_value(&self, c: usize, v: f64) -> f64 {
        v * self.scale[c] + self.mean[c]
    }
}

pub fn normalize(series: &SeriesFrame, stats: &NormStats) -> Result<SeriesFrame> {
    let d = series.dim();
    stats.check(d)?;
    let values = series.values.iter().enumerate().map(|(i, &v)| stats.normalize_value(i % d, v)).collect();
    Ok(series.with_values(values))
}

pub fn denormalize(series: &SeriesFrame, stats: &NormStats) -> Result<SeriesFrame> {
    let d = series.dim();
    stats.check(d)?;
    let values = series.values.iter().enumerate().map(|(i, &v)| stats.denormalize_value(i % d, v)).collect();
    Ok(series.with_values(values))
}

/// Dense, stride-1 windows `X_{t-m+1..=t}` for every origin `t` whose
/// horizon target `X_{t+T}` exists.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub origins: Vec<usize>,
    pub m: usize,
    pub d: usize,
    /// `[batch, m, d]`, row-major.
    pub data: Vec<f64>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.m * self.d;
        &self.data[i * w..(i + 1) * w]
    }
}

pub fn make_windows(series: &SeriesFrame, m: usize, horizon: usize) -> Result<WindowBatch> {
    if m == 0 {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    let n = series.len();
    if n < m + horizon {
        return Err(Error::InsufficientData { needed: m + horizon, available: n });
    }
    let d = series.dim();
    let origins: Vec<usize> = (m - 1..n - horizon).collect();
    let mut data = Vec::with_capacity(origins.len() * m * d);
    for &t in &origins {
        data.extend_from_slice(&series.values[(t + 1 - m) * d..(t + 1) * d]);
    }
    Ok(WindowBatch { origins, m, d, data })
}

/// Half-open train and test index ranges; train strictly precedes test.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingSplit {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

fn span_steps(span: TimeDelta, step: TimeDelta, what: &str) -> Result<usize> {
    let s = span.num_milliseconds();
    let st = step.num_milliseconds();
    if s <= 0 || s % st != 0 {
        return Err(Error::InvalidArgument(format!("{what} span {span} is not a positive multiple of the step {step}")));
    }
    Ok((s / st) as usize)
}

/// Consecutive test blocks of `test_span`, each trained on the immediately
/// preceding `train_span`. Partial trailing blocks are dropped.
pub fn rolling_splits(series: &SeriesFrame, train_span: TimeDelta, test_span: TimeDelta) -> Result<Vec<RollingSplit>> {
    let train = span_steps(train_span, series.step(), "train")?;
    let test = span_steps(test_span, series.step(), "test")?;
    let n = series.len();
    let mut splits = Vec::new();
    let mut test_start = train;
    while test_start + test <= n {
        splits.push(RollingSplit { train: test_start - train..test_start, test: test_start..test_start + test });
        test_start += test;
    }
    if splits.is_empty() {
        log::warn!("series of {n} steps holds no complete test block after a {train}-step warm-up");
    }
    Ok(splits)
}
