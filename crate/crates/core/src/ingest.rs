//! CSV loading, grid alignment and gap filling for market data.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::SeriesFrame;

/// Timestamp layout of the canonical CSV (fractional seconds only when present).
pub const CANONICAL_TIME: &str = "%Y-%m-%dT%H:%M:%S%.f";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueColumn {
    /// Header in the source file.
    pub column: String,
    /// Channel name in the loaded frame.
    pub channel: String,
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp_column: String,
    /// chrono format string; `None` means ISO-8601 (`T` or space separated).
    pub timestamp_format: Option<String>,
    /// Empty means every column except the timestamp, unitless.
    pub columns: Vec<ValueColumn>,
    /// Expected spacing; inferred from the median step when `None`.
    pub step: Option<TimeDelta>,
    /// Keep only rows whose `column` equals `value` (e.g. one zone of a
    /// multi-zone price file).
    pub row_filter: Option<(String, String)>,
}

fn value_column(column: &str, channel: &str, unit: &str) -> ValueColumn {
    ValueColumn { column: column.into(), channel: channel.into(), unit: unit.into() }
}

impl CsvSchema {
    /// `timestamp,<channel>...` with ISO timestamps.
    pub fn canonical() -> CsvSchema {
        CsvSchema { timestamp_column: "timestamp".into(), timestamp_format: None, columns: Vec::new(), step: None, row_filter: None }
    }

    /// Named presets for the public ISO data files.
    ///
    /// * `nyiso-rt-lmp`: NYISO real-time zonal LBMP, 5-minute, Long Island zone
    /// * `nyiso-da-lmp`: NYISO day-ahead zonal LBMP, hourly, Long Island zone
    /// * `nyiso-load`: NYISO real-time zonal load, 5-minute, Long Island zone
    /// * `pjm-ace`: PJM area control error, 15-second
    /// * `spread`: interregional LMP spread, 15-minute, canonical layout
    /// * `canonical`: this crate's own CSV layout
    pub fn preset(name: &str) -> Result<CsvSchema> {
        let nyiso = |channel: &str, column: &str, unit: &str, minutes: i64| CsvSchema {
            timestamp_column: "Time Stamp".into(),
            timestamp_format: Some("%m/%d/%Y %H:%M:%S".into()),
            columns: vec![value_column(column, channel, unit)],
            step: Some(TimeDelta::minutes(minutes)),
            row_filter: Some(("Name".into(), "LONGIL".into())),
        };
        Ok(match name {
            "canonical" => CsvSchema::canonical(),
            "nyiso-rt-lmp" => nyiso("rt_lmp", "LBMP ($/MWHr)", "$/MWh", 5),
            "nyiso-da-lmp" => nyiso("da_lmp", "LBMP ($/MWHr)", "$/MWh", 60),
            "nyiso-load" => nyiso("load", "Load", "MW", 5),
            "pjm-ace" => CsvSchema {
                timestamp_column: "datetime_beginning_ept".into(),
                timestamp_format: Some("%m/%d/%Y %I:%M:%S %p".into()),
                columns: vec![value_column("ace_mw", "ace", "MW")],
                step: Some(TimeDelta::seconds(15)),
                row_filter: None,
            },
            "spread" => CsvSchema {
                columns: vec![value_column("spread", "spread", "$/MWh")],
                step: Some(TimeDelta::minutes(15)),
                ..CsvSchema::canonical()
            },
            other => return Err(Error::Config(format!("unknown schema preset {other:?}"))),
        })
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["canonical", "nyiso-rt-lmp", "nyiso-da-lmp", "nyiso-load", "pjm-ace", "spread"]
    }

    fn parse_time(&self, s: &str) -> std::result::Result<NaiveDateTime, String> {
        let s = s.trim();
        match &self.timestamp_format {
            Some(f) => NaiveDateTime::parse_from_str(s, f).map_err(|e| format!("timestamp {s:?}: {e}")),
            None => parse_iso(s),
        }
    }
}

pub fn parse_iso(s: &str) -> std::result::Result<NaiveDateTime, String> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, CANONICAL_TIME)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M"))
        .map_err(|e| format!("timestamp {s:?}: {e}"))
}

pub fn format_time(ts: NaiveDateTime) -> String {
    ts.format(CANONICAL_TIME).to_string()
}

/// A series placed on its regular grid; missing steps hold `NaN`.
#[derive(Clone, Debug)]
pub struct GriddedSeries {
    pub start: NaiveDateTime,
    pub step: TimeDelta,
    pub channels: Vec<String>,
    pub units: Vec<String>,
    values: Vec<f64>,
}

/// A run of missing grid points `[first, first + len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gap {
    pub first: usize,
    pub len: usize,
}

impl GriddedSeries {
    pub fn len(&self) -> usize {
        self.values.len() / self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn row_missing(&self, t: usize) -> bool {
        let d = self.channels.len();
        self.values[t * d..(t + 1) * d].iter().any(|v| v.is_nan())
    }

    /// Runs of grid rows with at least one missing channel.
    pub fn gaps(&self) -> Vec<Gap> {
        let mut out: Vec<Gap> = Vec::new();
        for t in 0..self.len() {
            if self.row_missing(t) {
                match out.last_mut() {
                    Some(g) if g.first + g.len == t => g.len += 1,
                    _ => out.push(Gap { first: t, len: 1 }),
                }
            }
        }
        out
    }

    fn describe(&self, g: &Gap) -> String {
        let ts = |i: usize| format_time(self.start + self.step * i as i32);
        format!("{}..={} ({} steps)", ts(g.first), ts(g.first + g.len - 1), g.len)
    }

    /// The frame itself, provided nothing is missing.
    pub fn into_frame(self) -> Result<SeriesFrame> {
        let gaps = self.gaps();
        if !gaps.is_empty() {
            let list: Vec<String> = gaps.iter().map(|g| self.describe(g)).collect();
            return Err(Error::Data(format!("series has gaps: {}", list.join(", "))));
        }
        SeriesFrame::new(self.start, self.step, self.channels, self.values)
    }
}

impl From<SeriesFrame> for GriddedSeries {
    fn from(f: SeriesFrame) -> Self {
        GriddedSeries {
            start: f.start(),
            step: f.step(),
            units: vec![String::new(); f.dim()],
            channels: f.channels().to_vec(),
            values: f.values().to_vec(),
        }
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line: line as usize, msg: msg.into() }
}

/// Load a CSV onto its regular grid. Rows may arrive in any order (sorted
/// with a warning); repeated timestamps are an error. Empty cells and
/// missing grid steps become gaps.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<GriddedSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, 1, format!("missing column {name:?}")))
    };
    let ts_col = find(&schema.timestamp_column)?;
    let columns: Vec<ValueColumn> = if schema.columns.is_empty() {
        headers.iter().enumerate().filter(|(i, _)| *i != ts_col).map(|(_, h)| value_column(h, h, "")).collect()
    } else {
        schema.columns.clone()
    };
    if columns.is_empty() {
        return Err(parse_err(path, 1, "no value columns"));
    }
    let idx: Vec<usize> = columns.iter().map(|c| find(&c.column)).collect::<Result<_>>()?;
    let filter = match &schema.row_filter {
        Some((col, val)) => Some((find(col)?, val.clone())),
        None => None,
    };

    let mut rows: Vec<(NaiveDateTime, Vec<f64>, u64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if let Some((c, v)) = &filter {
            if rec.get(*c) != Some(v.as_str()) {
                continue;
            }
        }
        let ts = schema.parse_time(rec.get(ts_col).unwrap_or("")).map_err(|m| parse_err(path, line, m))?;
        let mut vals = Vec::with_capacity(idx.len());
        for (&i, col) in idx.iter().zip(&columns) {
            let cell = rec.get(i).unwrap_or("");
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                let v: f64 = cell.parse().map_err(|_| parse_err(path, line, format!("column {:?}: cannot parse {cell:?}", col.column)))?;
                if !v.is_finite() {
                    return Err(parse_err(path, line, format!("column {:?}: non-finite value {cell:?}", col.column)));
                }
                v
            };
            vals.push(v);
        }
        rows.push((ts, vals, line));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }

    let mut seen = HashSet::with_capacity(rows.len());
    for (ts, _, line) in &rows {
        if !seen.insert(*ts) {
            return Err(parse_err(path, *line, format!("duplicate timestamp {}", format_time(*ts))));
        }
    }
    if rows.windows(2).any(|w| w[0].0 > w[1].0) {
        log::warn!("{}: rows out of order; sorting by timestamp", path.display());
        rows.sort_by_key(|r| r.0);
    }

    let step = match schema.step {
        Some(s) => s,
        None if rows.len() >= 2 => median_step(&rows.iter().map(|r| r.0).collect::<Vec<_>>()),
        None => return Err(Error::Data(format!("{}: cannot infer the step from one row", path.display()))),
    };
    if step <= TimeDelta::zero() {
        return Err(Error::Config(format!("step must be positive, got {step}")));
    }
    if rows.len() >= 2 {
        let observed = median_step(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
        if observed != step {
            return Err(Error::Data(format!(
                "{}: declared step {step} but the median observed step is {observed}",
                path.display()
            )));
        }
    }

    let start = rows[0].0;
    let last = rows.last().unwrap().0;
    let step_ms = step.num_milliseconds();
    let n = ((last - start).num_milliseconds() / step_ms) as usize + 1;
    let d = columns.len();
    let mut values = vec![f64::NAN; n * d];
    for (ts, vals, line) in rows {
        let off = (ts - start).num_milliseconds();
        if off % step_ms != 0 {
            return Err(parse_err(path, line, format!("timestamp {} is off the {step} grid", format_time(ts))));
        }
        let t = (off / step_ms) as usize;
        values[t * d..(t + 1) * d].copy_from_slice(&vals);
    }
    Ok(GriddedSeries {
        start,
        step,
        channels: columns.iter().map(|c| c.channel.clone()).collect(),
        units: columns.iter().map(|c| c.unit.clone()).collect(),
        values,
    })
}

fn median_step(ts: &[NaiveDateTime]) -> TimeDelta {
    let mut d: Vec<TimeDelta> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort();
    d[d.len() / 2]
}

/// Linearly interpolate interior gaps of at most `max_gap` steps.
pub fn fill_gaps(series: &GriddedSeries, max_gap: usize) -> Result<SeriesFrame> {
    let gaps = series.gaps();
    let n = series.len();
    let too_long: Vec<String> = gaps
        .iter()
        .filter(|g| g.len > max_gap || g.first == 0 || g.first + g.len == n)
        .map(|g| series.describe(g))
        .collect();
    if !too_long.is_empty() {
        return Err(Error::Data(format!(
            "gaps longer than {max_gap} steps or at the series edge: {}",
            too_long.join(", ")
        )));
    }
    let d = series.channels.len();
    let mut v = series.values.clone();
    for c in 0..d {
        let mut t = 0;
        while t < n {
            if !v[t * d + c].is_nan() {
                t += 1;
                continue;
            }
            let lo = t - 1;
            let mut hi = t;
            while v[hi * d + c].is_nan() {
                hi += 1;
            }
            let (a, b) = (v[lo * d + c], v[hi * d + c]);
            for k in t..hi {
                let w = (k - lo) as f64 / (hi - lo) as f64;
                v[k * d + c] = a + w * (b - a);
            }
            t = hi;
        }
    }
    SeriesFrame::new(series.start, series.step, series.channels.clone(), v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Last,
    Sum,
    Min,
    Max,
}

impl Aggregation {
    fn apply(self, v: &[f64]) -> f64 {
        match self {
            Aggregation::Mean => v.iter().sum::<f64>() / v.len() as f64,
            Aggregation::Last => *v.last().unwrap(),
            Aggregation::Sum => v.iter().sum(),
            Aggregation::Min => v.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregation::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Put every frame on one `target` grid over their common time range and
/// concatenate channels in input order. Coarser frames are forward-filled
/// across each of their steps; finer frames need an aggregation.
pub fn align(frames: &[SeriesFrame], target: TimeDelta, agg: Option<Aggregation>) -> Result<SeriesFrame> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("nothing to align".into()));
    }
    let tms = target.num_milliseconds();
    if tms <= 0 {
        return Err(Error::InvalidArgument(format!("target step must be positive, got {target}")));
    }
    for f in frames {
        let s = f.step().num_milliseconds();
        if s % tms != 0 && tms % s != 0 {
            return Err(Error::InvalidArgument(format!("step {} and target {target} are not commensurate", f.step())));
        }
        if s < tms && agg.is_none() {
            return Err(Error::InvalidArgument(format!(
                "frame with step {} is finer than the target {target}; specify an aggregation",
                f.step()
            )));
        }
    }
    let start = frames.iter().map(|f| f.start()).max().unwrap();
    let end = frames.iter().map(|f| f.end()).min().unwrap();
    if end <= start {
        return Err(Error::Data("empty overlap between the series".into()));
    }
    let n = ((end - start).num_milliseconds() / tms) as usize;
    if n == 0 {
        return Err(Error::Data("empty overlap between the series".into()));
    }
    let d: usize = frames.iter().map(|f| f.dim()).sum();
    let mut values = Vec::with_capacity(n * d);
    for k in 0..n {
        let tau = start + target * k as i32;
        for f in frames {
            let s = f.step().num_milliseconds();
            let off = (tau - f.start()).num_milliseconds();
            if s >= tms {
                values.extend_from_slice(f.row((off / s) as usize));
            } else {
                if off % s != 0 {
                    return Err(Error::Data(format!("grid of a finer series is offset from {}", format_time(tau))));
                }
                let first = (off / s) as usize;
                let count = ((tms / s) as usize).min(f.len() - first);
                for c in 0..f.dim() {
                    let block: Vec<f64> = (first..first + count).map(|t| f.value(t, c)).collect();
                    values.push(agg.unwrap().apply(&block));
                }
            }
        }
    }
    let channels = frames.iter().flat_map(|f| f.channels().iter().cloned()).collect();
    SeriesFrame::new(start, target, channels, values)
}

/// Canonical CSV: `timestamp,<channel>...`, shortest round-trip numbers.
pub fn write_csv(out: &mut impl Write, frame: &SeriesFrame) -> Result<()> {
    let io = |e| Error::io("<csv output>", e);
    writeln!(out, "timestamp,{}", frame.channels().join(",")).map_err(io)?;
    for t in 0..frame.len() {
        let mut line = format_time(frame.timestamp(t));
        for v in frame.row(t) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(())
}

pub fn write_csv_file(path: &Path, frame: &SeriesFrame) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(&mut buf, frame)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Load a canonical CSV that must have no gaps.
pub fn read_canonical(path: &Path) -> Result<SeriesFrame> {
    load_csv(path, &CsvSchema::canonical())?.into_frame()
}
