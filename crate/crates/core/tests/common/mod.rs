//! Oracles and fixtures shared by the integration tests and the
//! acceptance target.

#![allow(dead_code)]

use repnet::config::{EmbeddingKind, ExperimentConfig, ModelConfig};
use repnet::data::{extract_time_features, synthetic::start_time, CalendarField, Frequency};
use repnet::model::Model;
use repnet::nn::{Ctx, Mode};
use repnet_autograd::{Tape, Tensor};

pub const MICRO: &str = r#"
[data]
synthetic = { rows = 300, seed = 3 }

[model]
dataset = "ETTh1"
T = 16
H = 4
seed = 11
instance_norm = true
extractors = [{ cover = 3 }, { cover = 5 }]
embedding = { kind = "linear_gelu_glu", e_f = 4, e_t = 8 }
time_method = { use_timeF = true, use_tempEmb = true, use_posEmb = true }
memory = { N = 1, use_attention = true, heads = 4, use_glu = true, joint_feature_mix = false, dropout = 0.25 }
projection = { R = 1 }
"#;

pub fn micro_config() -> ModelConfig {
    ExperimentConfig::from_toml_str(MICRO).unwrap().model
}

/// The ETTh1 reference experiment shipped in `configs/`.
pub fn reference_config() -> ExperimentConfig {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/etth1_h96.toml");
    ExperimentConfig::load(std::path::Path::new(path)).unwrap()
}

/// Lookback and marks for `b` windows of a series on the hourly grid.
pub fn inputs(b: usize, t: usize, f: usize, freq: Frequency, seed: u64) -> (Tensor, Tensor) {
    let stamps: Vec<_> = (0..t + b)
        .map(|i| start_time() + chrono::Duration::seconds(freq.seconds() * (i as i64 + seed as i64 * 37)))
        .collect();
    let marks = extract_time_features(&stamps, freq);
    let m = marks.len() / stamps.len();
    let x = Tensor::from_fn([b, t, f], |i| ((i as f64 + seed as f64) * 0.731).sin() * 1.7 + 0.2 * (i % 5) as f64);
    let x_mark = Tensor::from_fn([b, t, m], |i| {
        let (bi, rest) = (i / (t * m), i % (t * m));
        marks[bi * m + rest]
    });
    (x, x_mark)
}

/// Mean squared error of an eval-mode forecast.
fn mse_of(model: &Model, x: &Tensor, x_mark: &Tensor, y: &Tensor) -> f64 {
    let p = model.predict(x, x_mark).unwrap();
    p.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.numel() as f64
}

/// Fourth-order central difference of `f` at zero.
pub fn five_point(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

/// Largest relative deviation between backprop and five-point differences,
/// with absolute floor `floor`. Checks every parameter element, or at most
/// `per_tensor` evenly spaced elements of each array.
pub fn model_gradcheck(
    model: &mut Model,
    x: &Tensor,
    x_mark: &Tensor,
    y: &Tensor,
    h: f64,
    floor: f64,
    per_tensor: Option<usize>,
) -> (f64, String) {
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let ctx = Ctx::with_grad(&tape, &model.store, Mode::Eval, 0);
        let loss = model.forward(&ctx, x, x_mark).unwrap().mse_loss(y);
        let mut g = tape.backward(loss);
        ctx.vars().iter().map(|&v| g.take(v).unwrap_or_else(|| Tensor::zeros(v.shape()))).collect()
    };
    let ids: Vec<_> = model.store.ids().collect();
    let (mut worst, mut at) = (0.0f64, String::new());
    for (pi, id) in ids.into_iter().enumerate() {
        let numel = model.store.get(id).numel();
        let step = per_tensor.map_or(1, |k| numel.div_ceil(k).max(1));
        for j in (0..numel).step_by(step) {
            let w0 = model.store.get(id).data()[j];
            let numeric = five_point(h, |d| {
                model.store.get_mut(id).data_mut()[j] = w0 + d;
                let v = mse_of(model, x, x_mark, y);
                model.store.get_mut(id).data_mut()[j] = w0;
                v
            });
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > worst {
                worst = rel;
                at = format!("{}[{j}] analytic {a:e} numeric {numeric:e}", model.store.param(id).name);
            }
        }
    }
    (worst, at)
}

fn lin(i: usize, o: usize) -> usize {
    i * o + o
}

fn embedder(kind: EmbeddingKind, cover: usize, c_in: usize, w: usize, ch: usize) -> usize {
    let flat = cover * c_in;
    match kind {
        EmbeddingKind::Linear1 => lin(flat, w),
        EmbeddingKind::Linear2 | EmbeddingKind::LinearGelu => lin(flat, w) + lin(w, w),
        EmbeddingKind::LinearGeluGlu => lin(flat, w) + lin(w, w) + lin(w, 2 * w),
        EmbeddingKind::CnnLinear => lin(3 * c_in, ch) + lin(cover * ch, w),
        EmbeddingKind::CnnGelu2 => lin(3 * c_in, ch) + lin(3 * ch, ch) + lin(cover * ch, w),
        EmbeddingKind::CnnMaxpool2 => lin(3 * c_in, ch) + lin(3 * ch, ch) + lin(cover / 9 * ch, w),
    }
}

/// Patch starts by enumeration.
pub fn brute_patch_count(t: usize, cover: usize, stride: usize, dilation: usize) -> usize {
    (0..t).step_by(stride).filter(|&s| s + (cover - 1) * dilation < t).count()
}

/// Closed-form parameter count `(total, without tables)` of a config.
pub fn oracle_param_count(cfg: &ModelConfig, channels: usize, freq: Frequency) -> (usize, usize) {
    let fields = CalendarField::for_frequency(freq);
    let m = fields.len();
    let specs = cfg.resolved_extractors().unwrap();
    let counts: Vec<usize> = specs.iter().map(|s| brute_patch_count(cfg.t, s.cover, s.stride, s.dilation)).collect();
    let emb = &cfg.embedding;
    let tm = cfg.time_method;
    let e = emb.e_f + if tm.any() { emb.e_t } else { 0 };
    let mut n = 0;
    for s in &specs {
        n += embedder(emb.kind, s.cover, 1, emb.e_f, emb.cnn_channels);
        if tm.use_time_f {
            n += embedder(emb.kind, s.cover, m, emb.e_t, emb.cnn_channels);
        }
    }
    let tables = if tm.use_temp_emb { fields.iter().map(|f| f.cardinality() * emb.e_t).sum() } else { 0 };
    let p: usize = counts.iter().sum();
    let mem = &cfg.memory;
    let mix = if mem.joint_feature_mix { channels * e } else { e };
    let mut block = 3 * 2 * e + lin(p, p) + lin(e, if mem.use_glu { 2 * e } else { e }) + lin(mix, mix);
    if mem.use_attention {
        block += 2 * e + 4 * lin(e, e);
    }
    n += mem.n * block;
    let r = cfg.projection.r;
    let hidden = if r == 0 { e } else { cfg.projection.hidden.unwrap_or(e) };
    for &nk in &counts {
        for layer in 0..r {
            let input = if layer == 0 { e } else { hidden };
            n += input * 4 * hidden + hidden * 4 * hidden + 4 * hidden;
        }
        n += lin(nk * hidden, cfg.h);
    }
    (n + tables, n)
}

/// Reference elementwise Huber term.
pub fn huber_ref(r: f64, delta: f64) -> f64 {
    if r.abs() < delta {
        r * r / 2.0
    } else {
        delta * r.abs() - delta * delta / 2.0
    }
}

/// Closed-form 1.5-entmax of two logits.
pub fn entmax2(z1: f64, z2: f64) -> (f64, f64) {
    let d = (z1 - z2) / 2.0;
    if d >= 1.0 {
        (1.0, 0.0)
    } else if d <= -1.0 {
        (0.0, 1.0)
    } else {
        let a = (d + (2.0 - d * d).sqrt()) / 2.0;
        (a * a, 1.0 - a * a)
    }
}
