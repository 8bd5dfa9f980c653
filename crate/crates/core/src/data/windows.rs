//! Stride-1 lookback/horizon windows over a scaled series.

use std::ops::Range;

use repnet_autograd::Tensor;

use crate::error::{Error, Result};

/// Scaled values and calendar features, both row-major.
#[derive(Debug, Clone)]
pub struct Series {
    values: Vec<f64>,
    marks: Vec<f64>,
    len: usize,
    channels: usize,
    marks_width: usize,
}

impl Series {
    pub fn new(values: Vec<f64>, marks: Vec<f64>, len: usize, channels: usize, marks_width: usize) -> Result<Self> {
        if values.len() != len * channels || marks.len() != len * marks_width {
            return Err(Error::Shape(format!(
                "series of {len} rows: {} values for {channels} channels, {} marks for width {marks_width}",
                values.len(),
                marks.len()
            )));
        }
        Ok(Series { values, marks, len, channels, marks_width })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn marks_width(&self) -> usize {
        self.marks_width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// One lookback/target pair, row-major matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub x: Vec<f64>,
    pub x_mark: Vec<f64>,
    pub y: Vec<f64>,
    pub y_mark: Vec<f64>,
}

/// A stack of windows ready for the model.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(B, T, F)`
    pub x: Tensor,
    /// `(B, T, M)`
    pub x_mark: Tensor,
    /// `(B, H, F)`
    pub y: Tensor,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.x.shape()[0]
    }
}

/// Windows whose anchors (first target rows) lie in a range.
#[derive(Debug, Clone)]
pub struct Windows<'a> {
    series: &'a Series,
    anchors: Range<usize>,
    lookback: usize,
    horizon: usize,
}

/// Enumerates every window anchored in `anchors`, in chronological order.
pub fn make_windows(series: &Series, anchors: Range<usize>, lookback: usize, horizon: usize) -> Result<Windows<'_>> {
    if horizon == 0 {
        return Err(Error::config("H", "horizon must be positive"));
    }
    if lookback == 0 {
        return Err(Error::config("T", "lookback must be positive"));
    }
    if anchors.is_empty() {
        return Err(Error::Input("empty window range".into()));
    }
    if anchors.start < lookback || anchors.end - 1 + horizon > series.len {
        return Err(Error::Bounds(format!(
            "anchors {anchors:?} need rows {}..{} for T={lookback}, H={horizon}; series has {}",
            anchors.start as isize - lookback as isize,
            anchors.end - 1 + horizon,
            series.len
        )));
    }
    Ok(Windows { series, anchors, lookback, horizon })
}

impl<'a> Windows<'a> {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors(&self) -> Range<usize> {
        self.anchors.clone()
    }

    /// Keeps only the first `n` windows.
    pub fn truncated(&self, n: usize) -> Windows<'a> {
        let end = self.anchors.start + n.min(self.len());
        Windows { anchors: self.anchors.start..end, ..self.clone() }
    }

    fn rows(data: &[f64], width: usize, rows: Range<usize>) -> &[f64] {
        &data[rows.start * width..rows.end * width]
    }

    pub fn sample(&self, i: usize) -> WindowSample {
        let a = self.anchors.start + i;
        let s = self.series;
        let past = a - self.lookback..a;
        let future = a..a + self.horizon;
        WindowSample {
            x: Self::rows(&s.values, s.channels, past.clone()).to_vec(),
            x_mark: Self::rows(&s.marks, s.marks_width, past).to_vec(),
            y: Self::rows(&s.values, s.channels, future.clone()).to_vec(),
            y_mark: Self::rows(&s.marks, s.marks_width, future).to_vec(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = WindowSample> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    /// Stacks the windows at the given positions.
    pub fn batch(&self, positions: &[usize]) -> Batch {
        let s = self.series;
        let (t, h, f, m) = (self.lookback, self.horizon, s.channels, s.marks_width);
        let mut x = Vec::with_capacity(positions.len() * t * f);
        let mut x_mark = Vec::with_capacity(positions.len() * t * m);
        let mut y = Vec::with_capacity(positions.len() * h * f);
        for &i in positions {
            let a = self.anchors.start + i;
            x.extend_from_slice(Self::rows(&s.values, f, a - t..a));
            x_mark.extend_from_slice(Self::rows(&s.marks, m, a - t..a));
            y.extend_from_slice(Self::rows(&s.values, f, a..a + h));
        }
        let b = positions.len();
        Batch {
            x: Tensor::new([b, t, f], x),
            x_mark: Tensor::new([b, t, m], x_mark),
            y: Tensor::new([b, h, f], y),
        }
    }

    /// Consecutive batches of at most `size` windows, in order.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let n = self.len();
        (0..n).step_by(size.max(1)).map(move |start| {
            let positions: Vec<usize> = (start..(start + size.max(1)).min(n)).collect();
            self.batch(&positions)
        })
    }
}
