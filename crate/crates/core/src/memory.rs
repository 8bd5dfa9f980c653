//! Stacked mixer memory over `(B, F, P, E)` representations.
//!
//! A block applies, in order, a positional mix along the patch axis, an
//! optional multi-head self-attention over patches per channel, a feature
//! linear with GLU gating, and a feature mix that is either per channel or
//! joint over all channels. Every sub-block is a pre-norm residual
//! `x + drop(f(LN(x)))`, so a block with all weights zero is the identity.

use repnet_autograd::Var;

use crate::config::{AttentionNormalizer, MemoryConfig};
use crate::error::{Error, Result};
use crate::nn::{Ctx, LayerNorm, Linear};
use crate::params::{Init, ParamStore, Partition};

const P: Partition = Partition::Memory;

#[derive(Debug, Clone)]
pub struct Attention {
    ln: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    pub heads: usize,
    pub normalizer: AttentionNormalizer,
}

impl Attention {
    fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        width: usize,
        heads: usize,
        normalizer: AttentionNormalizer,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::config("model.memory.heads", format!("{heads} heads do not divide width {width}")));
        }
        Ok(Attention {
            ln: LayerNorm::new(store, &format!("{name}.ln"), P, width),
            q: Linear::new(store, init, &format!("{name}.q"), P, width, width, true),
            k: Linear::new(store, init, &format!("{name}.k"), P, width, width, true),
            v: Linear::new(store, init, &format!("{name}.v"), P, width, width, true),
            o: Linear::new(store, init, &format!("{name}.o"), P, width, width, true),
            heads,
            normalizer,
        })
    }

    /// `(B, F, P, E)` to per-head `(B·F·h, P, E/h)`.
    fn split_heads<'t>(&self, x: Var<'t>) -> Var<'t> {
        let s = x.shape();
        let (b, f, p, e) = (s[0], s[1], s[2], s[3]);
        let d = e / self.heads;
        x.reshape(&[b * f, p, self.heads, d]).permute(&[0, 2, 1, 3]).reshape(&[b * f * self.heads, p, d])
    }

    /// Attention weights `(B·F·h, P, P)`; each row lies on the simplex.
    pub fn weights<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> (Var<'t>, Var<'t>) {
        let h = self.ln.forward(ctx, x);
        let e = x.shape()[3];
        let q = self.split_heads(self.q.forward(ctx, h));
        let k = self.split_heads(self.k.forward(ctx, h));
        let v = self.split_heads(self.v.forward(ctx, h));
        let scores = q.bmm(k, true).scale(1.0 / ((e / self.heads) as f64).sqrt());
        let w = match self.normalizer {
            AttentionNormalizer::Entmax15 => scores.entmax15_last(),
            AttentionNormalizer::Softmax => scores.softmax_last(),
        };
        (w, v)
    }

    fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>, dropout: f64) -> Var<'t> {
        let s = x.shape();
        let (b, f, p, e) = (s[0], s[1], s[2], s[3]);
        let (w, v) = self.weights(ctx, x);
        let d = e / self.heads;
        let mixed = w.bmm(v, false).reshape(&[b * f, self.heads, p, d]).permute(&[0, 2, 1, 3]).reshape(&[b, f, p, e]);
        x.add(ctx.dropout(self.o.forward(ctx, mixed), dropout))
    }
}

#[derive(Debug, Clone)]
pub struct MemoryBlock {
    pos_ln: LayerNorm,
    pos: Linear,
    pub attention: Option<Attention>,
    ff_ln: LayerNorm,
    ff: Linear,
    use_glu: bool,
    mix_ln: LayerNorm,
    mix: Linear,
    joint: bool,
    dropout: f64,
}

impl MemoryBlock {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        cfg: &MemoryConfig,
        patches: usize,
        channels: usize,
        width: usize,
    ) -> Result<Self> {
        let attention = if cfg.use_attention {
            Some(Attention::new(store, init, &format!("{name}.attn"), width, cfg.heads, cfg.attention_normalizer)?)
        } else {
            None
        };
        let ff_out = if cfg.use_glu { 2 * width } else { width };
        let mix_width = if cfg.joint_feature_mix { channels * width } else { width };
        Ok(MemoryBlock {
            pos_ln: LayerNorm::new(store, &format!("{name}.pos.ln"), P, width),
            pos: Linear::new(store, init, &format!("{name}.pos.lin"), P, patches, patches, true),
            attention,
            ff_ln: LayerNorm::new(store, &format!("{name}.ff.ln"), P, width),
            ff: Linear::new(store, init, &format!("{name}.ff.lin"), P, width, ff_out, true),
            use_glu: cfg.use_glu,
            mix_ln: LayerNorm::new(store, &format!("{name}.mix.ln"), P, width),
            mix: Linear::new(store, init, &format!("{name}.mix.lin"), P, mix_width, mix_width, true),
            joint: cfg.joint_feature_mix,
            dropout: cfg.dropout,
        })
    }

    /// Number of residual sub-blocks in use.
    pub fn active_sub_blocks(&self) -> usize {
        3 + usize::from(self.attention.is_some())
    }

    pub fn positional_mix<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Var<'t> {
        let h = self.pos_ln.forward(ctx, x).permute(&[0, 1, 3, 2]);
        let h = self.pos.forward(ctx, h).gelu().permute(&[0, 1, 3, 2]);
        x.add(ctx.dropout(h, self.dropout))
    }

    pub fn gated_linear<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Var<'t> {
        let h = self.ff.forward(ctx, self.ff_ln.forward(ctx, x));
        let h = if self.use_glu { h.glu_last() } else { h.gelu() };
        x.add(ctx.dropout(h, self.dropout))
    }

    pub fn feature_mix<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Var<'t> {
        let h = self.mix_ln.forward(ctx, x);
        let h = if self.joint {
            let s = x.shape();
            let (b, f, p, e) = (s[0], s[1], s[2], s[3]);
            let flat = h.permute(&[0, 2, 1, 3]).reshape(&[b, p, f * e]);
            self.mix.forward(ctx, flat).gelu().reshape(&[b, p, f, e]).permute(&[0, 2, 1, 3])
        } else {
            self.mix.forward(ctx, h).gelu()
        };
        x.add(ctx.dropout(h, self.dropout))
    }

    /// The outer residual of the block is carried by the identity path of
    /// the chained sub-block residuals.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Var<'t> {
        let mut h = self.positional_mix(ctx, x);
        if let Some(attn) = &self.attention {
            h = attn.forward(ctx, h, self.dropout);
        }
        let h = self.gated_linear(ctx, h);
        self.feature_mix(ctx, h)
    }
}

#[derive(Debug, Clone)]
pub struct Memory {
    pub blocks: Vec<MemoryBlock>,
}

impl Memory {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        cfg: &MemoryConfig,
        patches: usize,
        channels: usize,
        width: usize,
    ) -> Result<Self> {
        let blocks = (0..cfg.n)
            .map(|i| MemoryBlock::new(store, init, &format!("memory.{i}"), cfg, patches, channels, width))
            .collect::<Result<_>>()?;
        Ok(Memory { blocks })
    }

    /// `N` blocks applied in sequence; `N = 0` passes the input through.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Var<'t> {
        self.blocks.iter().fold(x, |h, b| b.forward(ctx, h))
    }
}
