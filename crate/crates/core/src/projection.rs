//! Per-extractor recurrent projection heads.
//!
//! The memory output is cut back into its K segments. Each segment runs
//! through R stacked LSTM layers along the patch axis, every hidden state
//! is flattened per channel and mapped linearly to the horizon, and the K
//! branch forecasts are summed.

use repnet_autograd::Var;

use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, LstmLayer};
use crate::params::{Init, ParamStore, Partition};
use crate::representation::SegmentMap;

const P: Partition = Partition::Projection;

/// Splits `(B, F, P, E)` along the patch axis into `(B, F, n_k, E)` parts.
pub fn split_segments<'t>(x: Var<'t>, map: &SegmentMap) -> Result<Vec<Var<'t>>> {
    let s = x.shape();
    if s.len() != 4 || s[2] != map.total() {
        return Err(Error::Shape(format!("representation {s:?} does not match segment total {}", map.total())));
    }
    if map.len() == 1 {
        return Ok(vec![x]);
    }
    Ok(map.counts().iter().zip(map.offsets()).map(|(&n, &o)| x.narrow(2, o, n)).collect())
}

/// Elementwise sum of equally shaped forecasts.
pub fn sum_forecasts<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts.first().ok_or_else(|| Error::Shape("no forecasts to sum".into()))?;
    let shape = first.shape();
    if let Some(bad) = parts.iter().find(|p| p.shape() != shape) {
        return Err(Error::Shape(format!("forecast shapes differ: {:?} vs {shape:?}", bad.shape())));
    }
    Ok(parts[1..].iter().fold(*first, |acc, &p| acc.add(p)))
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub lstm: Vec<LstmLayer>,
    pub head: Linear,
    pub patches: usize,
    pub hidden: usize,
}

impl Branch {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        patches: usize,
        width: usize,
        hidden: usize,
        depth: usize,
        horizon: usize,
    ) -> Self {
        let lstm = (0..depth)
            .map(|r| {
                let input = if r == 0 { width } else { hidden };
                LstmLayer::new(store, init, &format!("{name}.lstm.{r}"), P, input, hidden)
            })
            .collect();
        let out_width = if depth == 0 { width } else { hidden };
        let head = Linear::new(store, init, &format!("{name}.head"), P, patches * out_width, horizon, true);
        Branch { lstm, head, patches, hidden: out_width }
    }

    /// `(B, F, n, E)` to `(B, F, n, hidden)`; every step is kept.
    pub fn recurrent_encode<'t>(&self, ctx: &Ctx<'t>, seg: Var<'t>) -> Var<'t> {
        if self.lstm.is_empty() {
            return seg;
        }
        let s = seg.shape();
        let (b, f, n, e) = (s[0], s[1], s[2], s[3]);
        let h = self.lstm.iter().fold(seg.reshape(&[b * f, n, e]), |h, layer| layer.forward(ctx, h));
        h.reshape(&[b, f, n, self.hidden])
    }

    /// `(B, F, n, hidden)` to `(B, H, F)`.
    pub fn project_segment<'t>(&self, ctx: &Ctx<'t>, enc: Var<'t>) -> Result<Var<'t>> {
        let s = enc.shape();
        if s.len() != 4 || s[2] != self.patches || s[3] != self.hidden {
            return Err(Error::Shape(format!(
                "segment {s:?}, head built for {} patches of width {}",
                self.patches, self.hidden
            )));
        }
        let (b, f) = (s[0], s[1]);
        let y = self.head.forward(ctx, enc.reshape(&[b * f, self.patches * self.hidden]));
        Ok(y.reshape(&[b, f, self.head.fan_out]).permute(&[0, 2, 1]))
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, seg: Var<'t>) -> Result<Var<'t>> {
        self.project_segment(ctx, self.recurrent_encode(ctx, seg))
    }
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub branches: Vec<Branch>,
    pub segments: SegmentMap,
}

impl Projection {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        segments: SegmentMap,
        width: usize,
        hidden: usize,
        depth: usize,
        horizon: usize,
    ) -> Self {
        let branches = segments
            .counts()
            .iter()
            .enumerate()
            .map(|(k, &n)| Branch::new(store, init, &format!("proj.{k}"), n, width, hidden, depth, horizon))
            .collect();
        Projection { branches, segments }
    }

    /// Forecasts of every branch, `(B, H, F)` each.
    pub fn branch_forecasts<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Vec<Var<'t>>> {
        split_segments(x, &self.segments)?
            .into_iter()
            .zip(&self.branches)
            .map(|(seg, br)| br.forward(ctx, seg))
            .collect()
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        sum_forecasts(&self.branch_forecasts(ctx, x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use repnet_autograd::{Tape, Tensor};

    use crate::nn::Mode;

    fn build(counts: Vec<usize>, width: usize, hidden: usize, depth: usize, h: usize) -> (ParamStore, Projection) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = SegmentMap::new(counts).unwrap();
        let p = Projection::new(&mut store, &mut Init::new(&mut rng), map, width, hidden, depth, h);
        (store, p)
    }

    fn input(shape: [usize; 4]) -> Tensor {
        Tensor::from_fn(shape, |i| ((i * 13 % 29) as f64 / 14.0) - 1.0)
    }

    #[test]
    fn split_round_trip() {
        let tape = Tape::new();
        let x = input([2, 3, 9, 4]);
        let map = SegmentMap::new(vec![5, 3, 1]).unwrap();
        let parts = split_segments(tape.constant(x.clone()), &map).unwrap();
        assert_eq!(parts.iter().map(|p| p.shape()[2]).collect::<Vec<_>>(), vec![5, 3, 1]);
        assert_eq!(*tape.concat(&parts, 2).value(), x);
        let one = SegmentMap::new(vec![9]).unwrap();
        assert_eq!(*split_segments(tape.constant(x.clone()), &one).unwrap()[0].value(), x);
        let bad = SegmentMap::new(vec![4, 4]).unwrap();
        assert!(matches!(split_segments(tape.constant(x), &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_depth_encoding_is_identity() {
        let (store, p) = build(vec![4], 3, 3, 0, 5);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
        let x = input([1, 2, 4, 3]);
        assert_eq!(*p.branches[0].recurrent_encode(&ctx, ctx.constant(x.clone())).value(), x);
    }

    #[test]
    fn single_patch_recurrence_shape() {
        let (store, p) = build(vec![1], 4, 6, 1, 3);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
        let enc = p.branches[0].recurrent_encode(&ctx, ctx.constant(input([2, 3, 1, 4])));
        assert_eq!(enc.shape(), vec![2, 3, 1, 6]);
    }

    #[test]
    fn recurrence_is_causal() {
        let (store, p) = build(vec![5], 3, 4, 2, 2);
        let x = input([1, 2, 5, 3]);
        let run = |x: &Tensor| {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
            (*p.branches[0].recurrent_encode(&ctx, ctx.constant(x.clone())).value()).clone()
        };
        let base = run(&x);
        for j in 0..5 {
            let mut y = x.clone();
            for e in 0..3 {
                y.data_mut()[j * 3 + e] += 0.5;
            }
            let out = run(&y);
            for pos in 0..5 {
                let changed = (0..4).any(|h| out.at(&[0, 0, pos, h]) != base.at(&[0, 0, pos, h]));
                assert_eq!(changed, pos >= j, "perturbed {j}, position {pos}");
                // channel 1 untouched
                assert!((0..4).all(|h| out.at(&[0, 1, pos, h]) == base.at(&[0, 1, pos, h])));
            }
        }
    }

    #[test]
    fn zero_weights_give_bias_forecast() {
        let (mut store, p) = build(vec![3, 2], 4, 4, 0, 5);
        store.zero_all();
        let biases: Vec<Tensor> = (0..2).map(|k| Tensor::from_fn([5], |i| (k * 10 + i) as f64)).collect();
        for (br, b) in p.branches.iter().zip(&biases) {
            *store.get_mut(br.head.bias.unwrap()) = b.clone();
        }
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
        let y = p.forward(&ctx, ctx.constant(input([2, 3, 5, 4]))).unwrap().value();
        assert_eq!(y.shape(), &[2, 5, 3]);
        for b in 0..2 {
            for h in 0..5 {
                for f in 0..3 {
                    assert_eq!(y.at(&[b, h, f]), biases[0].data()[h] + biases[1].data()[h]);
                }
            }
        }
    }

    #[test]
    fn identity_head_returns_flattened_input() {
        let (mut store, p) = build(vec![2], 3, 3, 0, 6);
        let head = p.branches[0].head.clone();
        *store.get_mut(head.weight) = Tensor::from_fn([6, 6], |i| if i / 6 == i % 6 { 1.0 } else { 0.0 });
        *store.get_mut(head.bias.unwrap()) = Tensor::zeros([6]);
        let x = input([1, 2, 2, 3]);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
        let y = p.forward(&ctx, ctx.constant(x.clone())).unwrap().value();
        for f in 0..2 {
            for h in 0..6 {
                assert_eq!(y.at(&[0, h, f]), x.data()[f * 6 + h]);
            }
        }
    }

    #[test]
    fn head_rejects_wrong_patch_count() {
        let (store, p) = build(vec![3], 4, 4, 0, 2);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
        let r = p.branches[0].project_segment(&ctx, ctx.constant(input([1, 1, 4, 4])));
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn sum_is_additive() {
        let (store, p) = build(vec![3, 2, 4], 4, 5, 1, 3);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store, Mode::Eval, 0);
        let x = ctx.constant(input([2, 2, 9, 4]));
        let total = p.forward(&ctx, x).unwrap().value();
        let parts = p.branch_forecasts(&ctx, x).unwrap();
        let mut manual = Tensor::zeros([2, 3, 2]);
        for part in &parts {
            manual.add_assign(&part.value());
        }
        assert!(total.max_abs_diff(&manual) < 1e-12);
        let neg = parts[0].scale(-1.0);
        let zero = sum_forecasts(&[parts[0], neg]).unwrap().value();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(sum_forecasts(&[parts[0], ctx.constant(Tensor::zeros([1, 3, 2]))]).is_err());
    }
}
