//! Built-in benchmark dataset schemas.

use super::{Frequency, SplitSpec};
use crate::error::{Error, Result};

/// How window counts are derived for a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// Fixed train/val/test window counts.
    Counts,
    /// Chronological train/test row fractions; validation takes the rest.
    Ratio { train: f64, test: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetInfo {
    pub name: &'static str,
    pub channels: usize,
    pub frequency: Frequency,
    /// Nominal train/val/test window counts at a 96-step lookback.
    pub windows: (usize, usize, usize),
    /// Row count of the published CSV.
    pub rows: usize,
    pub rule: SplitRule,
}

const RATIO: SplitRule = SplitRule::Ratio { train: 0.7, test: 0.2 };

pub const REGISTRY: [DatasetInfo; 7] = [
    DatasetInfo { name: "ETTh1", channels: 7, frequency: Frequency::Hourly, windows: (8545, 2881, 2881), rows: 17420, rule: SplitRule::Counts },
    DatasetInfo { name: "ETTh2", channels: 7, frequency: Frequency::Hourly, windows: (8545, 2881, 2881), rows: 17420, rule: SplitRule::Counts },
    DatasetInfo { name: "ETTm1", channels: 7, frequency: Frequency::FifteenMinutes, windows: (34465, 11521, 11521), rows: 69680, rule: SplitRule::Counts },
    DatasetInfo { name: "ETTm2", channels: 7, frequency: Frequency::FifteenMinutes, windows: (34465, 11521, 11521), rows: 69680, rule: SplitRule::Counts },
    DatasetInfo { name: "ECL", channels: 321, frequency: Frequency::Hourly, windows: (18317, 2633, 5261), rows: 26304, rule: RATIO },
    DatasetInfo { name: "Traffic", channels: 862, frequency: Frequency::Hourly, windows: (12280, 1754, 3508), rows: 17544, rule: RATIO },
    DatasetInfo { name: "Weather", channels: 21, frequency: Frequency::TenMinutes, windows: (36792, 5271, 10540), rows: 52696, rule: RATIO },
];

/// Case-insensitive lookup; `electricity` is accepted for ECL.
pub fn lookup(name: &str) -> Option<&'static DatasetInfo> {
    let key = if name.eq_ignore_ascii_case("electricity") { "ECL" } else { name };
    REGISTRY.iter().find(|d| d.name.eq_ignore_ascii_case(key))
}

/// Window counts for a series of `len` rows.
///
/// An explicit override wins. Fixed-count datasets use their registry
/// counts. Ratio datasets cut the rows at the train and test fractions and
/// keep every window whose target lies inside its own segment.
pub fn resolve_split(
    name: &str,
    override_counts: Option<(usize, usize, usize)>,
    len: usize,
    lookback: usize,
    horizon: usize,
) -> Result<SplitSpec> {
    if let Some((train, val, test)) = override_counts {
        return Ok(SplitSpec { train, val, test });
    }
    let info = lookup(name).ok_or_else(|| {
        Error::config("dataset", format!("unknown dataset `{name}` and no split override given"))
    })?;
    match info.rule {
        SplitRule::Counts => {
            let (train, val, test) = info.windows;
            Ok(SplitSpec { train, val, test })
        }
        SplitRule::Ratio { train, test } => ratio_split(len, train, test, lookback, horizon),
    }
}

/// Cuts `len` rows at the train and test fractions; validation takes the
/// rest. Each segment keeps the windows whose targets lie inside it.
pub fn ratio_split(len: usize, train: f64, test: f64, lookback: usize, horizon: usize) -> Result<SplitSpec> {
    let b1 = (len as f64 * train).floor() as usize;
    let b2 = len - (len as f64 * test).floor() as usize;
    let lost = horizon.saturating_sub(1);
    let count = |end: usize, start: usize| end.checked_sub(start + lost).filter(|&c| c > 0);
    match (count(b1, lookback), count(b2, b1), count(len, b2)) {
        (Some(train), Some(val), Some(test)) => Ok(SplitSpec { train, val, test }),
        _ => Err(Error::Bounds(format!(
            "{len} rows cannot hold ratio splits at lookback {lookback} and horizon {horizon}"
        ))),
    }
}

impl DatasetInfo {
    /// Train and test row fractions; 12/4/4 months for the ETT family.
    pub fn fractions(&self) -> (f64, f64) {
        match self.rule {
            SplitRule::Counts => (0.6, 0.2),
            SplitRule::Ratio { train, test } => (train, test),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_dataset;

    #[test]
    fn lookup_is_case_insensitive() {
        assert_eq!(lookup("etth1").unwrap().channels, 7);
        assert_eq!(lookup("electricity").unwrap().channels, 321);
        assert_eq!(lookup("Traffic").unwrap().channels, 862);
        assert!(lookup("nope").is_none());
    }

    #[test]
    fn ett_counts_fit_the_published_files_at_every_horizon() {
        for name in ["ETTh1", "ETTh2", "ETTm1", "ETTm2"] {
            let info = lookup(name).unwrap();
            for h in [96, 192, 336, 720] {
                let spec = resolve_split(name, None, info.rows, 96, h).unwrap();
                assert_eq!((spec.train, spec.val, spec.test), info.windows);
                split_dataset(info.rows, spec, 96, h).unwrap();
            }
        }
    }

    #[test]
    fn ratio_splits_tile_the_file() {
        let info = lookup("ECL").unwrap();
        let spec = resolve_split("ECL", None, info.rows, 96, 96).unwrap();
        let r = split_dataset(info.rows, spec, 96, 96).unwrap();
        assert_eq!(r.train.start, 96);
        assert_eq!(r.val.start, 18412);
        assert_eq!(r.test.start, info.rows - 5260);
        assert_eq!(r.test.end + 95, info.rows);
    }

    #[test]
    fn unknown_dataset_without_override() {
        assert!(matches!(resolve_split("mystery", None, 100, 10, 1), Err(Error::Config { .. })));
        assert!(resolve_split("mystery", Some((5, 5, 5)), 100, 10, 1).is_ok());
    }
}
