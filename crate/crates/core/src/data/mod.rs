//! Dataset ingestion, chronological splits, scaling, calendar features and
//! sliding windows.

mod registry;
mod scaler;
mod split;
pub mod synthetic;
mod time_features;
mod windows;

use std::io::Read;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use registry::{lookup, ratio_split, resolve_split, DatasetInfo, SplitRule, REGISTRY};
pub use scaler::Scaler;
pub use split::{split_dataset, Split, SplitRanges, SplitSpec};
pub use time_features::{extract_time_features, time_feature_count, CalendarField};
pub use windows::{make_windows, Batch, Series, WindowSample, Windows};

/// Sampling period of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frequency {
    #[serde(rename = "10min")]
    TenMinutes,
    #[serde(rename = "15min")]
    FifteenMinutes,
    #[serde(rename = "hourly")]
    Hourly,
}

impl Frequency {
    pub fn seconds(self) -> i64 {
        match self {
            Frequency::TenMinutes => 600,
            Frequency::FifteenMinutes => 900,
            Frequency::Hourly => 3600,
        }
    }

    pub fn from_seconds(seconds: i64) -> Option<Self> {
        match seconds {
            600 => Some(Frequency::TenMinutes),
            900 => Some(Frequency::FifteenMinutes),
            3600 => Some(Frequency::Hourly),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "10min" | "10t" => Ok(Frequency::TenMinutes),
            "15min" | "15t" => Ok(Frequency::FifteenMinutes),
            "hourly" | "h" | "1h" => Ok(Frequency::Hourly),
            other => Err(Error::config("frequency", format!("unsupported frequency `{other}`"))),
        }
    }
}

/// A timestamped multivariate series, immutable after ingestion.
#[derive(Debug, Clone)]
pub struct TimeSeriesDataset {
    pub name: String,
    pub columns: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    /// Row-major `len × channels`.
    values: Vec<f64>,
    pub frequency: Frequency,
}

impl TimeSeriesDataset {
    /// Validates uniform spacing, finiteness and shape.
    pub fn from_parts(
        name: impl Into<String>,
        columns: Vec<String>,
        timestamps: Vec<NaiveDateTime>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let channels = columns.len();
        if channels == 0 {
            return Err(Error::Schema("no value columns".into()));
        }
        if values.len() != timestamps.len() * channels {
            return Err(Error::Schema(format!(
                "{} values for {} rows of {channels} channels",
                values.len(),
                timestamps.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("non-finite value in row {}", i / channels)));
        }
        if timestamps.len() < 2 {
            return Err(Error::Schema("need at least two rows to infer the sampling period".into()));
        }
        let step = (timestamps[1] - timestamps[0]).num_seconds();
        for (i, pair) in timestamps.windows(2).enumerate() {
            let gap = (pair[1] - pair[0]).num_seconds();
            if gap != step {
                return Err(Error::Schema(format!(
                    "non-uniform timestamps between rows {i} and {}: {gap}s vs {step}s",
                    i + 1
                )));
            }
        }
        let frequency = Frequency::from_seconds(step)
            .ok_or_else(|| Error::Schema(format!("unsupported sampling period of {step}s")))?;
        Ok(TimeSeriesDataset { name: name.into(), columns, timestamps, values, frequency })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.columns.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, channel: usize) -> f64 {
        self.values[row * self.channels() + channel]
    }

    /// Drops the given channel indices (e.g. an outlier sensor).
    pub fn exclude_channels(&self, exclude: &[usize]) -> Result<Self> {
        let f = self.channels();
        if let Some(&bad) = exclude.iter().find(|&&c| c >= f) {
            return Err(Error::config("exclude_channels", format!("channel {bad} out of range 0..{f}")));
        }
        let keep: Vec<usize> = (0..f).filter(|c| !exclude.contains(c)).collect();
        if keep.is_empty() {
            return Err(Error::config("exclude_channels", "every channel excluded"));
        }
        let mut values = Vec::with_capacity(self.len() * keep.len());
        for row in self.values.chunks(f) {
            values.extend(keep.iter().map(|&c| row[c]));
        }
        Ok(TimeSeriesDataset {
            name: self.name.clone(),
            columns: keep.iter().map(|&c| self.columns[c].clone()).collect(),
            timestamps: self.timestamps.clone(),
            values,
            frequency: self.frequency,
        })
    }

    /// Writes the dataset in the ingestion format.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        let f = self.channels();
        for (ts, row) in self.timestamps.iter().zip(self.values.chunks(f)) {
            let mut rec = vec![ts.format("%Y-%m-%d %H:%M:%S").to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

const TIMESTAMP_FORMATS: [&str; 5] =
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y/%m/%d %H:%M", "%Y/%m/%d %H:%M:%S"];

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads a benchmark CSV: a `date` column followed by numeric channels.
pub fn load_dataset(path: &Path, name: &str) -> Result<TimeSeriesDataset> {
    let file = std::fs::File::open(path)?;
    parse_csv(file, name)
}

/// Parses CSV bytes from any reader. Row errors carry the 1-based file line.
pub fn parse_csv<R: Read>(reader: R, name: &str) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if header.len() < 2 {
        return Err(Error::Schema("expected a date column and at least one channel".into()));
    }
    let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| Error::Parse { line, message: format!("bad timestamp `{}`", &record[0]) })?;
        timestamps.push(ts);
        for (j, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: `{field}` is not a number", columns[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("column `{}`: missing value", columns[j]) });
            }
            values.push(v);
        }
    }
    TimeSeriesDataset::from_parts(name, columns, timestamps, values)
}

/// Scaled series, split boundaries and scaler state for one experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub series: Series,
    pub splits: SplitRanges,
    pub scaler: Scaler,
    pub frequency: Frequency,
    pub lookback: usize,
    pub horizon: usize,
}

impl Prepared {
    pub fn windows(&self, split: Split) -> Result<Windows<'_>> {
        make_windows(&self.series, self.splits.range(split), self.lookback, self.horizon)
    }
}

/// Splits, fits the scaler on the rows touched by training windows only,
/// scales every row and attaches calendar features.
pub fn prepare(ds: &TimeSeriesDataset, spec: SplitSpec, lookback: usize, horizon: usize) -> Result<Prepared> {
    let splits = split_dataset(ds.len(), spec, lookback, horizon)?;
    let f = ds.channels();
    let train_rows = splits.scaler_rows(horizon);
    let scaler = Scaler::fit(&ds.values()[..train_rows.end * f], f)?;
    let values = scaler.apply(ds.values());
    let marks = extract_time_features(&ds.timestamps, ds.frequency);
    let series = Series::new(values, marks, ds.len(), f, time_feature_count(ds.frequency))?;
    Ok(Prepared { series, splits, scaler, frequency: ds.frequency, lookback, horizon })
}
