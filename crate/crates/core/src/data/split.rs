//! Chronological train/val/test partitioning.
//!
//! A window is identified by its anchor, the index of its first target row.
//! Its lookback is `anchor-T..anchor` and its target `anchor..anchor+H`.
//! Anchor ranges are laid out so that the target rows of the three splits
//! never overlap: each split's anchors start `H−1` rows after the previous
//! split's last anchor. Lookbacks may reach back into the preceding split.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Anchor ranges of the three splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    /// Target rows covered by a split's windows.
    pub fn label_rows(&self, split: Split, horizon: usize) -> Range<usize> {
        let r = self.range(split);
        r.start..r.end + horizon - 1
    }

    /// Every row a training window reads; the scaler is fit on these only.
    pub fn scaler_rows(&self, horizon: usize) -> Range<usize> {
        0..self.train.end + horizon - 1
    }
}

/// Lays out the anchor ranges for `spec` on a series of `len` rows.
pub fn split_dataset(len: usize, spec: SplitSpec, lookback: usize, horizon: usize) -> Result<SplitRanges> {
    if lookback == 0 {
        return Err(Error::config("T", "lookback must be positive"));
    }
    if horizon == 0 {
        return Err(Error::config("H", "horizon must be positive"));
    }
    if spec.train == 0 || spec.val == 0 || spec.test == 0 {
        return Err(Error::Bounds(format!("every split needs at least one window, got {spec:?}")));
    }
    let lost = horizon - 1;
    let need = lookback + spec.train + spec.val + spec.test + 3 * lost;
    if need > len {
        return Err(Error::Bounds(format!(
            "split {spec:?} with T={lookback}, H={horizon} needs {need} rows, series has {len}"
        )));
    }
    let train = lookback..lookback + spec.train;
    let val_start = train.end + lost;
    let val = val_start..val_start + spec.val;
    let test_start = val.end + lost;
    let test = test_start..test_start + spec.test;
    Ok(SplitRanges { train, val, test })
}
