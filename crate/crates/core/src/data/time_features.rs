//! Calendar features mapped affinely onto `[-0.5, 0.5]`.

use chrono::{Datelike, NaiveDateTime, Timelike};

use super::Frequency;

/// A discrete calendar field with its zero-based range `0..cardinality`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalendarField {
    Minute,
    Hour,
    Weekday,
    MonthDay,
    YearDay,
}

impl CalendarField {
    pub fn cardinality(self) -> usize {
        match self {
            CalendarField::Minute => 60,
            CalendarField::Hour => 24,
            CalendarField::Weekday => 7,
            CalendarField::MonthDay => 31,
            CalendarField::YearDay => 366,
        }
    }

    /// Zero-based index of the field (Monday is weekday 0).
    pub fn index(self, ts: &NaiveDateTime) -> usize {
        (match self {
            CalendarField::Minute => ts.minute(),
            CalendarField::Hour => ts.hour(),
            CalendarField::Weekday => ts.weekday().num_days_from_monday(),
            CalendarField::MonthDay => ts.day() - 1,
            CalendarField::YearDay => ts.ordinal() - 1,
        }) as usize
    }

    pub fn encode(self, index: usize) -> f64 {
        index as f64 / (self.cardinality() - 1) as f64 - 0.5
    }

    /// Inverse of [`encode`](Self::encode), clamped to the valid range.
    pub fn decode(self, feature: f64) -> usize {
        let max = self.cardinality() - 1;
        let idx = ((feature + 0.5) * max as f64).round();
        if idx.is_nan() || idx < 0.0 {
            0
        } else {
            (idx as usize).min(max)
        }
    }

    /// Feature columns for a frequency, in column order.
    pub fn for_frequency(freq: Frequency) -> &'static [CalendarField] {
        use CalendarField::*;
        match freq {
            Frequency::Hourly => &[Hour, Weekday, MonthDay, YearDay],
            Frequency::TenMinutes | Frequency::FifteenMinutes => &[Minute, Hour, Weekday, MonthDay, YearDay],
        }
    }
}

pub fn time_feature_count(freq: Frequency) -> usize {
    CalendarField::for_frequency(freq).len()
}

/// Row-major `len × M` feature matrix.
pub fn extract_time_features(timestamps: &[NaiveDateTime], freq: Frequency) -> Vec<f64> {
    let fields = CalendarField::for_frequency(freq);
    timestamps
        .iter()
        .flat_map(|ts| fields.iter().map(move |f| f.encode(f.index(ts))))
        .collect()
}
