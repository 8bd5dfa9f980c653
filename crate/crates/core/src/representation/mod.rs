//! Multi-scale time-informed patch representation.
//!
//! Each of the K extractors cuts the lookback into patches, embeds every
//! channel's patches with the feature embedder and the calendar timeline's
//! patches with separately parameterized time embedders, and concatenates
//! the two along the embedding axis. The K results are then joined along
//! the patch axis into one `(B, F, P, E)` tensor.

mod embedding;
mod geometry;

use std::rc::Rc;

use repnet_autograd::{Tensor, Var};

use crate::config::{EmbeddingKind, ModelConfig};
use crate::data::{CalendarField, Frequency};
use crate::error::{Error, Result};
use crate::nn::Ctx;
use crate::params::{Init, ParamId, ParamStore, Partition};

pub use embedding::Embedder;
pub use geometry::{
    channel_patch_index, concat_extractors, extract_patches, patch_count, resolve_extractors, row_patch_index,
    PatchExtractorSpec, SegmentMap,
};

/// Fixed sinusoidal code of patch indices: `(n, width)` with
/// `sin(p/10000^(2i/w))` in even and `cos` in odd dimensions.
pub fn sinusoidal(n: usize, width: usize) -> Tensor {
    Tensor::from_fn([n, width], |idx| {
        let (p, d) = (idx / width, idx % width);
        let i = (d / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / width as f64);
        if d % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

/// Broadcasts `(B, n, e_t)` across channels and appends it to `(B, F, n, e_f)`.
pub fn assemble_time_informed<'t>(feat: Var<'t>, time: Option<Var<'t>>) -> Result<Var<'t>> {
    let Some(time) = time else { return Ok(feat) };
    let (fs, ts) = (feat.shape(), time.shape());
    if fs.len() != 4 || ts.len() != 3 || fs[0] != ts[0] || fs[2] != ts[1] {
        return Err(Error::Shape(format!("feature embedding {fs:?} and time embedding {ts:?} disagree")));
    }
    let (b, f, n, e_t) = (fs[0], fs[1], fs[2], ts[2]);
    let mut idx = Vec::with_capacity(b * f * n * e_t);
    for bi in 0..b {
        for _ in 0..f {
            for p in 0..n {
                idx.extend((0..e_t).map(|e| ((bi * n + p) * e_t + e) as isize));
            }
        }
    }
    let tiled = time.gather(Rc::from(idx), &[b, f, n, e_t]);
    Ok(feat.tape().concat(&[feat, tiled], 3))
}

#[derive(Debug, Clone)]
pub struct Representation {
    pub specs: Vec<PatchExtractorSpec>,
    pub segments: SegmentMap,
    pub lookback: usize,
    pub channels: usize,
    pub e_f: usize,
    pub e_t: usize,
    fields: Vec<CalendarField>,
    feature: Vec<Embedder>,
    time_f: Vec<Embedder>,
    tables: Vec<(usize, CalendarField, ParamId)>,
    pos: bool,
}

impl Representation {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        cfg: &ModelConfig,
        channels: usize,
        frequency: Frequency,
    ) -> Result<Self> {
        let specs = cfg.resolved_extractors()?;
        let counts = specs.iter().map(|s| patch_count(cfg.t, s)).collect::<Result<Vec<_>>>()?;
        let segments = SegmentMap::new(counts)?;
        let emb = &cfg.embedding;
        let fields = CalendarField::for_frequency(frequency).to_vec();
        let mut feature = Vec::new();
        for (k, s) in specs.iter().enumerate() {
            feature.push(Embedder::new(
                store,
                init,
                &format!("repr.{k}.feature"),
                Partition::FeatureEmbedding,
                emb.kind,
                s.cover,
                1,
                emb.e_f,
                emb.cnn_channels,
            )?);
        }
        let tm = cfg.time_method;
        let mut time_f = Vec::new();
        if tm.use_time_f {
            for (k, s) in specs.iter().enumerate() {
                time_f.push(Embedder::new(
                    store,
                    init,
                    &format!("repr.{k}.time"),
                    Partition::TimeEmbedding,
                    emb.kind,
                    s.cover,
                    fields.len(),
                    emb.e_t,
                    emb.cnn_channels,
                )?);
            }
        }
        let mut tables = Vec::new();
        if tm.use_temp_emb {
            for (col, &field) in fields.iter().enumerate() {
                let name = format!("repr.table.{field:?}").to_lowercase();
                let t = init.normal(&[field.cardinality(), emb.e_t], 1.0);
                tables.push((col, field, store.add(name, Partition::TemporalTable, t)));
            }
        }
        Ok(Representation {
            specs,
            segments,
            lookback: cfg.t,
            channels,
            e_f: emb.e_f,
            e_t: emb.e_t,
            fields,
            feature,
            time_f,
            tables,
            pos: tm.use_pos_emb,
        })
    }

    pub fn has_time(&self) -> bool {
        !self.time_f.is_empty() || !self.tables.is_empty() || self.pos
    }

    /// Width `E` of a time-informed patch.
    pub fn width(&self) -> usize {
        self.e_f + if self.has_time() { self.e_t } else { 0 }
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.feature[0].kind
    }

    fn check_inputs(&self, x: &[usize], x_mark: &[usize]) -> Result<()> {
        if x.len() != 3 || x[1] != self.lookback || x[2] != self.channels {
            return Err(Error::Shape(format!("input {x:?}, expected (B, {}, {})", self.lookback, self.channels)));
        }
        if x_mark.len() != 3 || x_mark[0] != x[0] || x_mark[1] != self.lookback || x_mark[2] != self.fields.len() {
            return Err(Error::Shape(format!(
                "time features {x_mark:?}, expected ({}, {}, {})",
                x[0],
                self.lookback,
                self.fields.len()
            )));
        }
        Ok(())
    }

    /// Feature patch embeddings of extractor `k`: `(B, F, n_k, e_f)`.
    pub fn feature_embedding<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, k: usize) -> Var<'t> {
        let s = x.shape();
        let (b, t, f) = (s[0], s[1], s[2]);
        let spec = &self.specs[k];
        let n = self.segments.counts()[k];
        let patches = x.gather(channel_patch_index(b, t, f, spec, n), &[b * f * n, spec.cover, 1]);
        self.feature[k].forward(ctx, patches).reshape(&[b, f, n, self.e_f])
    }

    /// Time embedding of extractor `k`: `(B, n_k, e_t)`, or `None` when
    /// every time flag is off.
    pub fn time_embedding<'t>(&self, ctx: &Ctx<'t>, x_mark: &Tensor, k: usize) -> Option<Var<'t>> {
        if !self.has_time() {
            return None;
        }
        let s = x_mark.shape();
        let (b, t, m) = (s[0], s[1], s[2]);
        let spec = &self.specs[k];
        let n = self.segments.counts()[k];
        let mut parts = Vec::new();
        if let Some(emb) = self.time_f.get(k) {
            let marks = ctx.constant(x_mark.clone());
            let patches = marks.gather(row_patch_index(b, t, m, spec, n), &[b * n, spec.cover, m]);
            parts.push(emb.forward(ctx, patches));
        }
        for &(col, field, table) in &self.tables {
            let card = field.cardinality();
            let w = 1.0 / spec.cover as f64;
            let mut counts = vec![0.0; b * n * card];
            for bi in 0..b {
                for p in 0..n {
                    for j in 0..spec.cover {
                        let row = bi * t + p * spec.stride + j * spec.dilation;
                        let idx = field.decode(x_mark.data()[row * m + col]);
                        counts[(bi * n + p) * card + idx] += w;
                    }
                }
            }
            parts.push(ctx.constant(Tensor::new([b * n, card], counts)).matmul(ctx.p(table)));
        }
        if self.pos {
            let code = sinusoidal(n, self.e_t);
            let tiled = Tensor::from_fn([b * n, self.e_t], |i| code.data()[i % (n * self.e_t)]);
            parts.push(ctx.constant(tiled));
        }
        let sum = parts.into_iter().reduce(|a, c| a.add(c)).expect("at least one time part");
        Some(sum.reshape(&[b, n, self.e_t]))
    }

    /// `(B, T, F)` and `(B, T, M)` to `(B, F, P, E)`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, x_mark: &Tensor) -> Result<Var<'t>> {
        self.check_inputs(&x.shape(), x_mark.shape())?;
        let mut outs = Vec::with_capacity(self.specs.len());
        for k in 0..self.specs.len() {
            let feat = self.feature_embedding(ctx, x, k);
            let time = self.time_embedding(ctx, x_mark, k);
            outs.push(assemble_time_informed(feat, time)?);
        }
        Ok(if outs.len() == 1 { outs[0] } else { ctx.tape.concat(&outs, 2) })
    }
}
