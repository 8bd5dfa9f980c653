//! Representation → memory → projection, with optional instance
//! normalization around the whole pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use repnet_autograd::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::{time_feature_count, Frequency};
use crate::error::{Error, Result};
use crate::memory::Memory;
use crate::nn::{Ctx, Mode};
use crate::params::{Init, ParamStore, Partition};
use crate::projection::Projection;
use crate::representation::Representation;

/// Floor on the per-instance lookback std.
pub const INSTANCE_STD_FLOOR: f64 = 1e-5;

/// Parameter totals with and without the learned calendar tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub without_tables: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub channels: usize,
    pub frequency: Frequency,
    pub store: ParamStore,
    pub representation: Representation,
    pub memory: Memory,
    pub projection: Projection,
}

/// Builds and initializes a model; identical configs give identical
/// parameters.
pub fn build_model(cfg: &ModelConfig, channels: usize, frequency: Frequency) -> Result<Model> {
    cfg.validate()?;
    if channels == 0 {
        return Err(Error::config("data", "no channels left"));
    }
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init = Init::new(&mut rng);
    let representation = Representation::new(&mut store, &mut init, cfg, channels, frequency)?;
    let width = representation.width();
    let patches = representation.segments.total();
    let memory = Memory::new(&mut store, &mut init, &cfg.memory, patches, channels, width)?;
    let hidden = if cfg.projection.r == 0 { width } else { cfg.projection.hidden.unwrap_or(width) };
    let projection =
        Projection::new(&mut store, &mut init, representation.segments.clone(), width, hidden, cfg.projection.r, cfg.h);
    Ok(Model { config: cfg.clone(), channels, frequency, store, representation, memory, projection })
}

/// Per-instance, per-channel lookback mean and std, each `(B, F)`.
pub fn instance_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let (b, t, f) = (s[0], s[1], s[2]);
    let mut mean = vec![0.0; b * f];
    let mut std = vec![0.0; b * f];
    for bi in 0..b {
        for c in 0..f {
            let col = (0..t).map(|ti| x.data()[(bi * t + ti) * f + c]);
            let m = col.clone().sum::<f64>() / t as f64;
            let v = col.map(|v| (v - m) * (v - m)).sum::<f64>() / t as f64;
            mean[bi * f + c] = m;
            std[bi * f + c] = v.sqrt().max(INSTANCE_STD_FLOOR);
        }
    }
    (mean, std)
}

impl Model {
    pub fn lookback(&self) -> usize {
        self.config.t
    }

    pub fn horizon(&self) -> usize {
        self.config.h
    }

    pub fn marks_width(&self) -> usize {
        time_feature_count(self.frequency)
    }

    /// `(B, T, F)` and `(B, T, M)` to a `(B, H, F)` forecast.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: &Tensor, x_mark: &Tensor) -> Result<Var<'t>> {
        if !x.all_finite() || !x_mark.all_finite() {
            return Err(Error::Input("non-finite model input".into()));
        }
        let s = x.shape();
        if s.len() != 3 || s[1] != self.config.t || s[2] != self.channels {
            return Err(Error::Shape(format!("input {s:?}, expected (B, {}, {})", self.config.t, self.channels)));
        }
        let (b, t, f, h) = (s[0], s[1], s[2], self.config.h);
        let stats = self.config.instance_norm.then(|| instance_stats(x));
        let input = match &stats {
            Some((mean, std)) => {
                Tensor::from_fn([b, t, f], |i| (x.data()[i] - mean[(i / (t * f)) * f + i % f]) / std[(i / (t * f)) * f + i % f])
            }
            None => x.clone(),
        };
        let rep = self.representation.forward(ctx, ctx.constant(input), x_mark)?;
        let mem = self.memory.forward(ctx, rep);
        let y = self.projection.forward(ctx, mem)?;
        Ok(match stats {
            Some((mean, std)) => {
                let at = |v: &[f64], i: usize| v[(i / (h * f)) * f + i % f];
                let scale = Tensor::from_fn([b, h, f], |i| at(&std, i));
                let shift = Tensor::from_fn([b, h, f], |i| at(&mean, i));
                y.mul_const(&scale).add_const(&shift)
            }
            None => y,
        })
    }

    /// Eval-mode forecast.
    pub fn predict(&self, x: &Tensor, x_mark: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.store, Mode::Eval, 0);
        let y = self.forward(&ctx, x, x_mark)?.value();
        Ok((*y).clone())
    }

    pub fn count_parameters(&self) -> ParamCount {
        let total = self.store.count();
        ParamCount { total, without_tables: total - self.store.count_partition(Partition::TemporalTable) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    const CFG: &str = r#"
[data]
synthetic = { rows = 400 }

[model]
dataset = "ETTh1"
T = 96
H = 96
seed = 3
extractors = [{ cover = 10 }, { cover = 20 }]
embedding = { kind = "linear_1", e_f = 8, e_t = 8 }
time_method = { use_timeF = true, use_tempEmb = true }
memory = { N = 1, use_attention = true, heads = 4, use_glu = true, joint_feature_mix = false, dropout = 0.25 }
projection = { R = 1 }
"#;

    fn cfg() -> ModelConfig {
        ExperimentConfig::from_toml_str(CFG).unwrap().model
    }

    fn inputs(b: usize, t: usize, f: usize) -> (Tensor, Tensor) {
        let x = Tensor::from_fn([b, t, f], |i| (i as f64 * 0.13).sin() * 2.0 + 1.0);
        let m = Tensor::from_fn([b, t, 4], |i| ((i * 7) % 20) as f64 / 20.0 - 0.5);
        (x, m)
    }

    #[test]
    fn output_shape() {
        let model = build_model(&cfg(), 7, Frequency::Hourly).unwrap();
        let (x, m) = inputs(2, 96, 7);
        let y = model.predict(&x, &m).unwrap();
        assert_eq!(y.shape(), &[2, 96, 7]);
        assert!(y.all_finite());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model(&cfg(), 3, Frequency::Hourly).unwrap();
        let b = build_model(&cfg(), 3, Frequency::Hourly).unwrap();
        assert_eq!(a.store, b.store);
        let mut other = cfg();
        other.seed += 1;
        assert_ne!(build_model(&other, 3, Frequency::Hourly).unwrap().store, a.store);
    }

    #[test]
    fn impossible_extractor_is_geometry_error() {
        let mut c = cfg();
        c.extractors[1].cover = 64;
        c.extractors[1].dilation = Some(3);
        assert!(matches!(build_model(&c, 1, Frequency::Hourly), Err(Error::Geometry(_))));
    }

    #[test]
    fn bare_model_builds() {
        let mut c = cfg();
        c.memory.n = 0;
        c.projection.r = 0;
        let model = build_model(&c, 2, Frequency::Hourly).unwrap();
        assert_eq!(model.store.count_partition(Partition::Memory), 0);
        let (x, m) = inputs(1, 96, 2);
        assert_eq!(model.predict(&x, &m).unwrap().shape(), &[1, 96, 2]);
    }

    #[test]
    fn constant_input_restored_by_instance_norm() {
        let mut model = build_model(&cfg(), 2, Frequency::Hourly).unwrap();
        model.store.zero_all();
        let x = Tensor::from_fn([1, 96, 2], |i| if i % 2 == 0 { 3.5 } else { -2.0 });
        let (_, m) = inputs(1, 96, 2);
        let y = model.predict(&x, &m).unwrap();
        for h in 0..96 {
            assert!((y.at(&[0, h, 0]) - 3.5).abs() < 1e-9);
            assert!((y.at(&[0, h, 1]) + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let model = build_model(&cfg(), 1, Frequency::Hourly).unwrap();
        let (mut x, m) = inputs(1, 96, 1);
        x.data_mut()[5] = f64::NAN;
        assert!(matches!(model.predict(&x, &m), Err(Error::Input(_))));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let model = build_model(&cfg(), 2, Frequency::Hourly).unwrap();
        let (x, m) = inputs(2, 96, 2);
        assert_eq!(model.predict(&x, &m).unwrap(), model.predict(&x, &m).unwrap());
    }

    #[test]
    fn counts_with_and_without_tables() {
        let model = build_model(&cfg(), 2, Frequency::Hourly).unwrap();
        let pc = model.count_parameters();
        // hour, weekday, month day and year day tables at e_t = 8
        assert_eq!(pc.total - pc.without_tables, (24 + 7 + 31 + 366) * 8);
    }

    #[test]
    fn instance_stats_floor() {
        let x = Tensor::full([1, 4, 1], 2.0);
        let (m, s) = instance_stats(&x);
        assert_eq!((m[0], s[0]), (2.0, INSTANCE_STD_FLOOR));
    }
}
