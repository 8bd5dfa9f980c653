//! Seeded synthetic series with the schema of a real benchmark.
//!
//! Used for smoke runs when the published CSVs are not on disk and for
//! tests. Values are a daily and weekly cycle per channel plus AR(1) noise.

use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetInfo, Frequency, TimeSeriesDataset};

pub fn start_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2016, 7, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

/// Seasonal series with `channels` columns named `0..channels`.
pub fn seasonal(
    name: &str,
    channels: usize,
    frequency: Frequency,
    rows: usize,
    noise: f64,
    seed: u64,
) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let step = frequency.seconds();
    let per_day = 86_400.0 / step as f64;
    let params: Vec<(f64, f64, f64, f64)> = (0..channels)
        .map(|_| {
            (
                rng.random_range(0.5..2.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.1..0.8),
                rng.random_range(-3.0..3.0),
            )
        })
        .collect();
    let mut ar = vec![0.0; channels];
    let mut values = Vec::with_capacity(rows * channels);
    for i in 0..rows {
        let day_phase = std::f64::consts::TAU * i as f64 / per_day;
        for (c, &(amp, phase, weekly, level)) in params.iter().enumerate() {
            ar[c] = 0.8 * ar[c] + noise * normal.sample(&mut rng);
            let v = level + amp * (day_phase + phase).sin() + weekly * (day_phase / 7.0).cos() + ar[c];
            values.push(v);
        }
    }
    let start = start_time();
    let timestamps = (0..rows).map(|i| start + chrono::Duration::seconds(step * i as i64)).collect();
    let columns = (0..channels).map(|c| c.to_string()).collect();
    TimeSeriesDataset::from_parts(name, columns, timestamps, values).expect("synthetic series is valid")
}

/// A stand-in with the registry's channel count and sampling period.
pub fn standin(info: &DatasetInfo, rows: usize, seed: u64) -> TimeSeriesDataset {
    seasonal(info.name, info.channels, info.frequency, rows, 0.1, seed)
}
