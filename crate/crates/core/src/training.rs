//! Losses, metrics, the Adam loop with early stopping and plateau learning
//! rate decay, and run reports.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use repnet_autograd::{huber_scalar, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{Prepared, Split, Windows};
use crate::error::{Error, Result};
use crate::model::{Model, ParamCount};
use crate::nn::{Ctx, Mode};
use crate::params::ParamStore;

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("prediction has {} values, target {}", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty prediction".into()));
    }
    Ok(())
}

/// Mean elementwise Huber loss.
pub fn huber(pred: &[f64], target: &[f64], delta: f64) -> Result<f64> {
    check_pair(pred, target)?;
    if !(delta > 0.0) {
        return Err(Error::config("train.delta", "must be positive"));
    }
    if pred.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite value in Huber loss".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| huber_scalar(p - t, delta)).sum::<f64>() / pred.len() as f64)
}

/// Derivative of the elementwise Huber term in the residual.
pub fn huber_grad(r: f64, delta: f64) -> f64 {
    if r.abs() < delta {
        r
    } else {
        delta * r.signum()
    }
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    Stop,
}

/// Counts consecutive epochs whose relative improvement over the best
/// loss so far falls below `min_rel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_rel: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_rel: f64) -> Self {
        EarlyStopping { patience, min_rel, best: None, bad_epochs: 0 }
    }

    pub fn step(&mut self, loss: f64) -> Decision {
        match self.best {
            None => self.best = Some(loss),
            Some(best) => {
                let rel = (best - loss) / best.abs().max(f64::MIN_POSITIVE);
                if rel < self.min_rel {
                    self.bad_epochs += 1;
                } else {
                    self.bad_epochs = 0;
                }
                self.best = Some(best.min(loss));
            }
        }
        if self.patience > 0 && self.bad_epochs >= self.patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }
}

/// Replays a validation history; returns the 1-based stopping epoch, if any.
pub fn early_stop_step(history: &[f64], patience: usize, min_rel: f64) -> Option<usize> {
    let mut es = EarlyStopping::new(patience, min_rel);
    history.iter().position(|&l| es.step(l) == Decision::Stop).map(|i| i + 1)
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// a strict improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauState {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        PlateauState { lr, patience, factor, best: None, bad_epochs: 0 }
    }

    pub fn step(&mut self, loss: f64) -> f64 {
        if self.best.is_none_or(|b| loss < b) {
            self.best = Some(loss);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after each epoch of a replayed history.
pub fn plateau_lr_step(history: &[f64], lr0: f64, patience: usize, factor: f64) -> Vec<f64> {
    let mut s = PlateauState::new(lr0, patience, factor);
    history.iter().map(|&l| s.step(l)).collect()
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads[i].data();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let w = store.get_mut(id).data_mut();
            for j in 0..w.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub huber: f64,
    pub windows: usize,
}

/// Forecasts of a window set in eval mode, with the stacked targets.
fn forecast_batches(model: &Model, windows: &Windows<'_>, batch_size: usize) -> Result<Vec<(Tensor, Tensor)>> {
    windows
        .batches(batch_size)
        .map(|b| {
            let pred = model.predict(&b.x, &b.x_mark)?;
            Ok((pred, b.y))
        })
        .collect()
}

/// Metrics averaged over every element of every window, dropout off.
pub fn evaluate(model: &Model, windows: &Windows<'_>, batch_size: usize, delta: f64) -> Result<Metrics> {
    let (mut se, mut ae, mut hu, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (pred, y) in forecast_batches(model, windows, batch_size)? {
        for (p, t) in pred.data().iter().zip(y.data()) {
            let r = p - t;
            se += r * r;
            ae += r.abs();
            hu += huber_scalar(r, delta);
        }
        n += y.numel();
    }
    if n == 0 {
        return Err(Error::Input("no windows to evaluate".into()));
    }
    let n_f = n as f64;
    Ok(Metrics { mse: se / n_f, mae: ae / n_f, huber: hu / n_f, windows: windows.len() })
}

/// Per-window MSE, in window order.
pub fn per_window_errors(model: &Model, windows: &Windows<'_>, batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(windows.len());
    for (pred, y) in forecast_batches(model, windows, batch_size)? {
        let per = y.numel() / y.shape()[0];
        for (p, t) in pred.data().chunks(per).zip(y.data().chunks(per)) {
            out.push(mse(p, t)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub dataset: String,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub seed: u64,
    pub instance_norm: bool,
    pub delta: f64,
    pub lr0: f64,
    pub batch_size: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub test_mse: Option<f64>,
    pub test_mae: Option<f64>,
    pub test_windows: usize,
    pub params: ParamCount,
    pub seconds_per_iteration: f64,
    pub peak_memory_bytes: usize,
    pub stop_reason: StopReason,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Loss curves as CSV.
    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_mse,lr,seconds\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_mse, e.lr, e.seconds));
        }
        s
    }

    pub fn val_history(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }
}

/// Cost of one training step at the current parameters.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    pub seconds: f64,
    /// Tape values plus the gradient peak of the backward sweep.
    pub peak_bytes: usize,
}

/// Forward + backward of the Huber loss on one batch; returns the
/// gradients in parameter order.
pub fn loss_and_grads(
    model: &Model,
    x: &Tensor,
    x_mark: &Tensor,
    y: &Tensor,
    delta: f64,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(Vec<Tensor>, StepStats)> {
    let start = Instant::now();
    let tape = Tape::new();
    let ctx = Ctx::with_grad(&tape, &model.store, mode, dropout_seed);
    let pred = model.forward(&ctx, x, x_mark)?;
    let loss = pred.huber_loss(y, delta);
    let value = loss.value().to_scalar();
    let mut g = tape.backward(loss);
    let grads = ctx
        .vars()
        .iter()
        .map(|&v| g.take(v).unwrap_or_else(|| Tensor::zeros(v.shape())))
        .collect();
    let peak_bytes = tape.value_bytes() + g.peak_grad_bytes();
    Ok((grads, StepStats { loss: value, seconds: start.elapsed().as_secs_f64(), peak_bytes }))
}

/// Trains on the train split, selects the best validation epoch and
/// evaluates it once on the test split.
pub fn fit(model: &mut Model, data: &Prepared, cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    let train = data.windows(Split::Train)?;
    let cap = cfg.max_eval_windows.unwrap_or(usize::MAX);
    let val = data.windows(Split::Val)?.truncated(cap);
    let test = data.windows(Split::Test)?.truncated(cap);
    let seed = model.config.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut adam = Adam::new(&model.store);
    let mut es = EarlyStopping::new(cfg.es_patience, cfg.es_min_rel_improve);
    let mut plateau = PlateauState::new(cfg.lr0, cfg.lr_patience, cfg.lr_factor);
    let mut report = RunReport {
        config_hash: model.config.hash(),
        dataset: model.config.dataset.clone(),
        lookback: model.config.t,
        horizon: model.config.h,
        channels: model.channels,
        seed,
        instance_norm: model.config.instance_norm,
        delta: cfg.delta,
        lr0: cfg.lr0,
        batch_size: cfg.batch_size,
        epochs: Vec::new(),
        best_epoch: None,
        best_val_loss: None,
        test_mse: None,
        test_mae: None,
        test_windows: 0,
        params: model.count_parameters(),
        seconds_per_iteration: 0.0,
        peak_memory_bytes: 0,
        stop_reason: StopReason::MaxEpochs,
    };
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let (mut iterations, mut step_seconds) = (0usize, 0.0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut chunks: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        if let Some(n) = cfg.max_batches_per_epoch {
            chunks.truncate(n);
        }
        let lr = plateau.lr;
        let mut loss_sum = 0.0;
        for chunk in &chunks {
            let batch = train.batch(chunk);
            let dropout_seed = seed.wrapping_mul(1_000_003).wrapping_add(iterations as u64);
            let (mut grads, stats) =
                loss_and_grads(model, &batch.x, &batch.x_mark, &batch.y, cfg.delta, Mode::Train, dropout_seed)?;
            if !stats.loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                report.stop_reason = StopReason::Diverged;
                return Err(Error::Divergence(Box::new(report)));
            }
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            adam.step(&mut model.store, &grads, lr);
            loss_sum += stats.loss;
            iterations += 1;
            step_seconds += stats.seconds;
            report.peak_memory_bytes = report.peak_memory_bytes.max(stats.peak_bytes);
        }
        let vm = evaluate(model, &val, cfg.eval_batch_size, cfg.delta);
        let vm = match vm {
            Ok(m) if m.huber.is_finite() => m,
            Ok(_) | Err(Error::Input(_)) => {
                report.stop_reason = StopReason::Diverged;
                return Err(Error::Divergence(Box::new(report)));
            }
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|(b, _)| vm.huber < *b) {
            best = Some((vm.huber, model.store.snapshot()));
            report.best_epoch = Some(epoch);
            report.best_val_loss = Some(vm.huber);
        }
        let decision = es.step(vm.huber);
        plateau.step(vm.huber);
        report.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / chunks.len().max(1) as f64,
            val_loss: vm.huber,
            val_mse: vm.mse,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} lr {lr:.2e} ({:.1}s)",
            loss_sum / chunks.len().max(1) as f64,
            vm.huber,
            started.elapsed().as_secs_f64()
        );
        if decision == Decision::Stop {
            report.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    if let Some((_, params)) = best {
        model.store.restore(&params);
    }
    let tm = evaluate(model, &test, cfg.eval_batch_size, cfg.delta)?;
    report.test_mse = Some(tm.mse);
    report.test_mae = Some(tm.mae);
    report.test_windows = tm.windows;
    report.seconds_per_iteration = if iterations > 0 { step_seconds / iterations as f64 } else { 0.0 };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_branches() {
        assert_eq!(huber(&[0.5], &[0.0], 1.0).unwrap(), 0.125);
        assert_eq!(huber(&[2.0], &[0.0], 1.0).unwrap(), 1.5);
        assert_eq!(huber(&[1.0], &[0.0], 1.0).unwrap(), 0.5);
        assert_eq!(0.5 * 1.0f64 * 1.0, 1.0 * (1.0 - 0.5));
        assert!(matches!(huber(&[f64::NAN], &[0.0], 1.0), Err(Error::Input(_))));
    }

    #[test]
    fn metric_basics() {
        let t = [1.0, -2.0, 3.0];
        assert_eq!((mse(&t, &t).unwrap(), mae(&t, &t).unwrap()), (0.0, 0.0));
        let p: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert_eq!((mse(&p, &t).unwrap(), mae(&p, &t).unwrap()), (1.0, 1.0));
        assert!(mse(&p, &t[..2]).is_err());
    }

    #[test]
    fn huber_gradient_bounded() {
        for delta in [0.1, 1.0, 3.0] {
            for k in -100..=100 {
                let r = k as f64 * delta / 10.0;
                assert!(huber_grad(r, delta).abs() <= delta);
            }
        }
    }

    #[test]
    fn scripted_early_stop_histories() {
        assert_eq!(early_stop_step(&[1.0, 0.90, 0.80], 3, 0.01), None);
        assert_eq!(early_stop_step(&[1.0, 0.999, 0.998, 0.997], 3, 0.01), Some(4));
        assert_eq!(early_stop_step(&[1.0, 0.999, 0.90, 0.999, 0.998, 0.997], 3, 0.01), Some(6));
    }

    #[test]
    fn scripted_plateau_histories() {
        assert_eq!(plateau_lr_step(&[1.0, 0.9, 0.8], 1e-3, 1, 0.5), vec![1e-3; 3]);
        assert_eq!(plateau_lr_step(&[1.0, 1.0], 1.0, 1, 0.5), vec![1.0, 0.5]);
        let lrs = plateau_lr_step(&[3.0, 2.0, 2.5, 2.5, 1.0, 4.0, 4.0], 1.0, 2, 0.1);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut store = ParamStore::new();
        store.add("w", crate::params::Partition::Memory, Tensor::from_fn([3], |i| i as f64));
        let before = store.clone();
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[Tensor::full([3], 5.0)], 0.0);
        assert_eq!(store, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", crate::params::Partition::Memory, Tensor::zeros([2]));
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[Tensor::new([2], vec![3.0, -0.2])], 0.1);
        let w = store.get(id).data();
        assert!((w[0] + 0.1).abs() < 1e-8 && (w[1] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::new([2], vec![3.0, 4.0])];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-12);
    }
}
