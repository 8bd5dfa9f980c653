//! Per-channel z-score scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose variance was zero; their std was replaced by 1.
    pub degenerate: Vec<usize>,
}

impl Scaler {
    /// Fits population mean and std per channel on row-major `values`.
    pub fn fit(values: &[f64], channels: usize) -> Result<Self> {
        if channels == 0 || values.is_empty() || values.len() % channels != 0 {
            return Err(Error::Input(format!("cannot fit a scaler on {} values of {channels} channels", values.len())));
        }
        let rows = (values.len() / channels) as f64;
        let mut mean = vec![0.0; channels];
        for row in values.chunks(channels) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows);
        let mut var = vec![0.0; channels];
        for row in values.chunks(channels) {
            for c in 0..channels {
                let d = row[c] - mean[c];
                var[c] += d * d;
            }
        }
        let mut degenerate = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let s = (v / rows).sqrt();
                if s <= 1e-12 * mean[c].abs().max(1.0) {
                    degenerate.push(c);
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Scaler { mean, std, degenerate })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let f = self.channels();
        values.iter().enumerate().map(|(i, v)| (v - self.mean[i % f]) / self.std[i % f]).collect()
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        let f = self.channels();
        values.iter().enumerate().map(|(i, v)| v * self.std[i % f] + self.mean[i % f]).collect()
    }
}
