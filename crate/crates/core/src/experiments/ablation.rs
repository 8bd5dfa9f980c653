//! Factor ablation over a search history, with paired significance tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::search::Trial;
use crate::config::ModelConfig;
use crate::error::{Error, Result};

/// The architectural factors compared in the ablation grid, in column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Attention,
    TimeEmbedding,
    Glu,
    Lstm,
    MultiPatch,
    Memory,
    MultiMemory,
    CnnEmbedding,
}

impl Factor {
    pub const ALL: [Factor; 8] = [
        Factor::Attention,
        Factor::TimeEmbedding,
        Factor::Glu,
        Factor::Lstm,
        Factor::MultiPatch,
        Factor::Memory,
        Factor::MultiMemory,
        Factor::CnnEmbedding,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Factor::Attention => "Attention",
            Factor::TimeEmbedding => "Time Embedding",
            Factor::Glu => "GLU",
            Factor::Lstm => "LSTM",
            Factor::MultiPatch => "Multi Patch",
            Factor::Memory => "Memory",
            Factor::MultiMemory => "Multi Memory",
            Factor::CnnEmbedding => "CNN Embedding",
        }
    }

    /// `Some(true)` with the factor, `Some(false)` without it, `None` when
    /// the config is outside the factor's comparison.
    pub fn classify(self, cfg: &ModelConfig) -> Option<bool> {
        let n = cfg.memory.n;
        match self {
            Factor::Attention => (n >= 1).then_some(cfg.memory.use_attention),
            Factor::TimeEmbedding => Some(cfg.time_method.any()),
            Factor::Glu => (n >= 1).then_some(cfg.memory.use_glu),
            Factor::Lstm => Some(cfg.projection.r >= 1),
            Factor::MultiPatch => Some(cfg.extractors.len() > 1),
            Factor::Memory => match n {
                0 => Some(false),
                1 => Some(true),
                _ => None,
            },
            Factor::MultiMemory => match n {
                0 => None,
                1 => Some(false),
                _ => Some(true),
            },
            Factor::CnnEmbedding => Some(cfg.embedding.kind.is_cnn()),
        }
    }
}

/// Percent change of MSE from the variant without a factor to the one
/// with it; positive means the factor helped.
pub fn ablation_delta(mse_without: f64, mse_with: f64) -> Result<f64> {
    if !(mse_without > 0.0 && mse_with > 0.0) || !mse_without.is_finite() || !mse_with.is_finite() {
        return Err(Error::Input(format!("MSE values must be positive and finite: {mse_without}, {mse_with}")));
    }
    Ok(100.0 * (mse_without - mse_with) / mse_without)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Green,
    Yellow,
    Red,
}

/// Three-band coding: above +1 green, below −1 red, yellow in between.
pub fn band(pct: f64) -> Band {
    if pct > 1.0 {
        Band::Green
    } else if pct < -1.0 {
        Band::Red
    } else {
        Band::Yellow
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub df: usize,
    /// Set when the differences have zero variance and `p` is a sentinel.
    pub degenerate: bool,
}

/// Two-sided paired t-test on `a − b`.
///
/// Zero-variance differences give `p = 1` when their mean is zero and
/// `p = 0` otherwise.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Input(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Input("paired t-test needs at least two pairs".into()));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p_value: 1.0, df, degenerate: true }
        } else {
            TTest { t: mean.signum() * f64::INFINITY, p_value: 0.0, df, degenerate: true }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom");
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p_value, df, degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub dataset: String,
    pub horizon: usize,
    pub factor: Factor,
    pub pct_delta: f64,
    pub p_value: Option<f64>,
    pub stars: String,
    pub band: Band,
    pub mse_with: f64,
    pub mse_without: f64,
    pub configs_with: usize,
    pub configs_without: usize,
}

/// The `k` best trials by validation loss, summarized as mean test MSE and
/// mean per-window errors.
fn best_of(trials: &[&Trial], k: usize) -> Option<(f64, Vec<f64>)> {
    let mut ok: Vec<&&Trial> = trials.iter().filter(|t| t.val_loss.is_finite() && t.test_mse.is_finite()).collect();
    if ok.is_empty() {
        return None;
    }
    ok.sort_by(|a, b| a.val_loss.total_cmp(&b.val_loss));
    ok.truncate(k.max(1));
    let mse = ok.iter().map(|t| t.test_mse).sum::<f64>() / ok.len() as f64;
    let len = ok[0].test_window_mse.len();
    let errors = if ok.iter().all(|t| t.test_window_mse.len() == len) {
        (0..len).map(|i| ok.iter().map(|t| t.test_window_mse[i]).sum::<f64>() / ok.len() as f64).collect()
    } else {
        Vec::new()
    };
    Some((mse, errors))
}

/// One cell per (dataset, horizon, factor) with trials on both sides.
///
/// Each side is represented by its best validation-loss trial, or by the
/// mean of its `k` best.
pub fn ablation_cells(trials: &[Trial], k: usize) -> Result<Vec<AblationCell>> {
    let mut slices: BTreeMap<(String, usize), Vec<&Trial>> = BTreeMap::new();
    for t in trials {
        slices.entry((t.config.dataset.clone(), t.config.h)).or_default().push(t);
    }
    let mut cells = Vec::new();
    for ((dataset, horizon), group) in slices {
        for factor in Factor::ALL {
            let side = |want: bool| -> Vec<&Trial> {
                group.iter().copied().filter(|t| factor.classify(&t.config) == Some(want)).collect()
            };
            let (with, without) = (side(true), side(false));
            let (Some((mse_with, e_with)), Some((mse_without, e_without))) = (best_of(&with, k), best_of(&without, k))
            else {
                continue;
            };
            let pct_delta = ablation_delta(mse_without, mse_with)?;
            let p_value = if e_with.len() >= 2 && e_with.len() == e_without.len() {
                Some(paired_ttest(&e_without, &e_with)?.p_value)
            } else {
                None
            };
            cells.push(AblationCell {
                dataset: dataset.clone(),
                horizon,
                factor,
                pct_delta,
                p_value,
                stars: p_value.map(stars).unwrap_or("").to_string(),
                band: band(pct_delta),
                mse_with,
                mse_without,
                configs_with: with.len(),
                configs_without: without.len(),
            });
        }
    }
    Ok(cells)
}
