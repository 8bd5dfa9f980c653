//! Parameter count, step latency and peak memory at batch size one.

use repnet_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::{extract_time_features, synthetic::start_time, time_feature_count, Frequency};
use crate::error::{Error, Result};
use crate::model::{build_model, ParamCount};
use crate::nn::Mode;
use crate::training::loss_and_grads;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyProfile {
    pub params: ParamCount,
    /// Median forward + backward time.
    pub seconds_per_iteration: f64,
    /// Tape values plus the gradient peak of one step.
    pub peak_memory_bytes: usize,
    pub iterations: usize,
    pub batch_size: usize,
}

/// Times `iterations` training steps after `warmup` untimed ones.
pub fn profile_efficiency(
    cfg: &ModelConfig,
    channels: usize,
    frequency: Frequency,
    batch_size: usize,
    warmup: usize,
    iterations: usize,
) -> Result<EfficiencyProfile> {
    if iterations == 0 || batch_size == 0 {
        return Err(Error::config("profile", "iterations and batch size must be positive"));
    }
    let model = build_model(cfg, channels, frequency)?;
    let (t, h) = (cfg.t, cfg.h);
    let m = time_feature_count(frequency);
    let stamps: Vec<_> = (0..t)
        .map(|i| start_time() + chrono::Duration::seconds(frequency.seconds() * i as i64))
        .collect();
    let marks = extract_time_features(&stamps, frequency);
    let x = Tensor::from_fn([batch_size, t, channels], |i| (i as f64 * 0.37).sin());
    let x_mark = Tensor::from_fn([batch_size, t, m], |i| marks[i % (t * m)]);
    let y = Tensor::from_fn([batch_size, h, channels], |i| (i as f64 * 0.11).cos());
    let mut times = Vec::with_capacity(iterations);
    let mut peak = 0;
    for i in 0..warmup + iterations {
        let (_, stats) = loss_and_grads(&model, &x, &x_mark, &y, 1.0, Mode::Train, i as u64)?;
        peak = peak.max(stats.peak_bytes);
        if i >= warmup {
            times.push(stats.seconds);
        }
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    let median = if times.len() % 2 == 1 { times[mid] } else { 0.5 * (times[mid - 1] + times[mid]) };
    Ok(EfficiencyProfile {
        params: model.count_parameters(),
        seconds_per_iteration: median,
        peak_memory_bytes: peak,
        iterations,
        batch_size,
    })
}
