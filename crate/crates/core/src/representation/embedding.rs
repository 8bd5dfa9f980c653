//! The seven patch embedding variants.
//!
//! An embedder maps `(rows, cover, c_in)` channel-last patches to
//! `(rows, width)`. Linear kinds flatten the patch first; CNN kinds
//! convolve along the patch with kernel 3 and same padding, then flatten
//! into a final linear map.

use repnet_autograd::Var;

use crate::config::EmbeddingKind;
use crate::error::{Error, Result};
use crate::nn::{conv3, maxpool3, Ctx, Linear};
use crate::params::{Init, ParamStore, Partition};

#[derive(Debug, Clone)]
enum Layers {
    Linear1(Linear),
    Linear2(Linear, Linear),
    LinearGelu(Linear, Linear),
    LinearGeluGlu(Linear, Linear, Linear),
    CnnLinear { conv: Linear, head: Linear },
    CnnGelu2 { conv1: Linear, conv2: Linear, head: Linear },
    CnnMaxpool2 { conv1: Linear, conv2: Linear, head: Linear },
}

#[derive(Debug, Clone)]
pub struct Embedder {
    pub kind: EmbeddingKind,
    pub cover: usize,
    pub c_in: usize,
    pub width: usize,
    layers: Layers,
}

impl Embedder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        partition: Partition,
        kind: EmbeddingKind,
        cover: usize,
        c_in: usize,
        width: usize,
        cnn_channels: usize,
    ) -> Result<Self> {
        if cover < kind.min_cover() {
            return Err(Error::config(
                "model.embedding.kind",
                format!("{} needs patches of at least {} steps, got {cover}", kind.name(), kind.min_cover()),
            ));
        }
        let flat = cover * c_in;
        let mut lin = |suffix: &str, i: usize, o: usize| Linear::new(store, init, &format!("{name}.{suffix}"), partition, i, o, true);
        let ch = cnn_channels;
        let layers = match kind {
            EmbeddingKind::Linear1 => Layers::Linear1(lin("lin1", flat, width)),
            EmbeddingKind::Linear2 => Layers::Linear2(lin("lin1", flat, width), lin("lin2", width, width)),
            EmbeddingKind::LinearGelu => Layers::LinearGelu(lin("lin1", flat, width), lin("lin2", width, width)),
            EmbeddingKind::LinearGeluGlu => Layers::LinearGeluGlu(
                lin("lin1", flat, width),
                lin("lin2", width, width),
                lin("glu", width, 2 * width),
            ),
            EmbeddingKind::CnnLinear => {
                Layers::CnnLinear { conv: lin("conv1", 3 * c_in, ch), head: lin("head", cover * ch, width) }
            }
            EmbeddingKind::CnnGelu2 => Layers::CnnGelu2 {
                conv1: lin("conv1", 3 * c_in, ch),
                conv2: lin("conv2", 3 * ch, ch),
                head: lin("head", cover * ch, width),
            },
            EmbeddingKind::CnnMaxpool2 => Layers::CnnMaxpool2 {
                conv1: lin("conv1", 3 * c_in, ch),
                conv2: lin("conv2", 3 * ch, ch),
                head: lin("head", (cover / 3 / 3) * ch, width),
            },
        };
        Ok(Embedder { kind, cover, c_in, width, layers })
    }

    /// `(rows, cover, c_in)` to `(rows, width)`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Var<'t> {
        let rows = x.shape()[0];
        let flat = |v: Var<'t>| {
            let s = v.shape();
            v.reshape(&[s[0], s[1..].iter().product()])
        };
        match &self.layers {
            Layers::Linear1(a) => a.forward(ctx, flat(x)),
            Layers::Linear2(a, b) => b.forward(ctx, a.forward(ctx, flat(x))),
            Layers::LinearGelu(a, b) => b.forward(ctx, a.forward(ctx, flat(x)).gelu()),
            Layers::LinearGeluGlu(a, b, g) => {
                let h = b.forward(ctx, a.forward(ctx, flat(x)).gelu());
                g.forward(ctx, h).glu_last()
            }
            Layers::CnnLinear { conv, head } => head.forward(ctx, flat(conv3(ctx, x, conv))),
            Layers::CnnGelu2 { conv1, conv2, head } => {
                let h = conv3(ctx, x, conv1).gelu();
                let h = conv3(ctx, h, conv2).gelu();
                head.forward(ctx, flat(h))
            }
            Layers::CnnMaxpool2 { conv1, conv2, head } => {
                let h = maxpool3(conv3(ctx, x, conv1));
                let h = maxpool3(conv3(ctx, h, conv2));
                debug_assert_eq!(h.shape()[0], rows);
                head.forward(ctx, flat(h))
            }
        }
    }

    /// Every linear map, in construction order.
    pub fn linears(&self) -> Vec<&Linear> {
        match &self.layers {
            Layers::Linear1(a) => vec![a],
            Layers::Linear2(a, b) | Layers::LinearGelu(a, b) => vec![a, b],
            Layers::LinearGeluGlu(a, b, g) => vec![a, b, g],
            Layers::CnnLinear { conv, head } => vec![conv, head],
            Layers::CnnGelu2 { conv1, conv2, head } | Layers::CnnMaxpool2 { conv1, conv2, head } => {
                vec![conv1, conv2, head]
            }
        }
    }

    /// The gating linear of `linear_gelu_glu`.
    pub fn glu_gate(&self) -> Option<&Linear> {
        match &self.layers {
            Layers::LinearGeluGlu(_, _, g) => Some(g),
            _ => None,
        }
    }
}
