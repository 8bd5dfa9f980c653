//! Layer primitives shared by the three model stages.

use std::cell::RefCell;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repnet_autograd::{Tape, Tensor, Var};

use crate::params::{Init, ParamId, ParamStore, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: the tape, bound parameters, mode and dropout stream.
pub struct Ctx<'t> {
    pub tape: &'t Tape,
    vars: Vec<Var<'t>>,
    pub mode: Mode,
    rng: RefCell<ChaCha8Rng>,
}

impl<'t> Ctx<'t> {
    /// Binds `store` to `tape`; parameters are trainable leaves in train
    /// mode and constants in eval mode.
    pub fn new(tape: &'t Tape, store: &ParamStore, mode: Mode, dropout_seed: u64) -> Self {
        Ctx {
            tape,
            vars: store.bind(tape, mode == Mode::Train),
            mode,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(dropout_seed)),
        }
    }

    /// Binds with explicit trainability, for gradient checks in eval mode.
    pub fn with_grad(tape: &'t Tape, store: &ParamStore, mode: Mode, dropout_seed: u64) -> Self {
        Ctx {
            tape,
            vars: store.bind(tape, true),
            mode,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(dropout_seed)),
        }
    }

    pub fn p(&self, id: ParamId) -> Var<'t> {
        self.vars[id.index()]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }

    /// Inverted dropout; the identity in eval mode or when `p == 0`.
    pub fn dropout(&self, x: Var<'t>, p: f64) -> Var<'t> {
        if self.mode == Mode::Eval || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let mut rng = self.rng.borrow_mut();
        let mask = Tensor::from_fn(x.shape(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        x.mul_const(&mask)
    }
}

/// Affine map `x·W + b` with `W` stored `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Uniform `±1/√fan_in` initialization for weight and bias.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        partition: Partition,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), partition, init.uniform(&[fan_in, fan_out], bound));
        let bias = bias.then(|| store.add(format!("{name}.bias"), partition, init.uniform(&[fan_out], bound)));
        Linear { weight, bias, fan_in, fan_out }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Var<'t> {
        x.linear(ctx.p(self.weight), self.bias.map(|b| ctx.p(b)))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, partition: Partition, width: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), partition, Tensor::full([width], 1.0));
        let bias = store.add(format!("{name}.bias"), partition, Tensor::zeros([width]));
        LayerNorm { gain, bias }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Var<'t> {
        x.layer_norm(ctx.p(self.gain), ctx.p(self.bias), Self::EPS)
    }
}

/// One LSTM layer; input `(N, L, I)`, output every hidden state `(N, L, H)`.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmLayer {
    /// Input weights uniform `±1/√H`, recurrent weights orthogonal per gate.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init<'_>,
        name: &str,
        partition: Partition,
        input: usize,
        hidden: usize,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add(format!("{name}.w_ih"), partition, init.uniform(&[input, 4 * hidden], bound));
        let mut whh = vec![0.0; hidden * 4 * hidden];
        for gate in 0..4 {
            let q = init.orthogonal(hidden);
            for r in 0..hidden {
                for c in 0..hidden {
                    whh[r * 4 * hidden + gate * hidden + c] = q[r * hidden + c];
                }
            }
        }
        let w_hh = store.add(format!("{name}.w_hh"), partition, Tensor::new([hidden, 4 * hidden], whh));
        let bias = store.add(format!("{name}.bias"), partition, init.uniform(&[4 * hidden], bound));
        LstmLayer { w_ih, w_hh, bias, hidden }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Var<'t> {
        x.lstm(ctx.p(self.w_ih), ctx.p(self.w_hh), ctx.p(self.bias))
    }
}

/// Index for a same-length kernel-3 convolution on channel-last input
/// `(rows, len, ch)`: output row `l` holds `[x[l−1], x[l], x[l+1]]`, with
/// zero padding at both ends.
pub fn conv3_index(rows: usize, len: usize, ch: usize) -> Rc<[isize]> {
    let mut idx = Vec::with_capacity(rows * len * 3 * ch);
    for r in 0..rows {
        for l in 0..len {
            for k in 0..3 {
                let src = l as isize + k as isize - 1;
                for c in 0..ch {
                    if src < 0 || src >= len as isize {
                        idx.push(-1);
                    } else {
                        idx.push(((r * len + src as usize) * ch + c) as isize);
                    }
                }
            }
        }
    }
    idx.into()
}

/// Kernel-3, stride-3 max pooling index: `(rows, len, ch)` to
/// `(rows, len/3, ch, 3)`, reduced afterwards over the last axis.
pub fn pool3_index(rows: usize, len: usize, ch: usize) -> Rc<[isize]> {
    let out = len / 3;
    let mut idx = Vec::with_capacity(rows * out * ch * 3);
    for r in 0..rows {
        for p in 0..out {
            for c in 0..ch {
                for k in 0..3 {
                    idx.push(((r * len + 3 * p + k) * ch + c) as isize);
                }
            }
        }
    }
    idx.into()
}

/// Kernel-3 same-padding convolution expressed as gather + linear.
pub fn conv3<'t>(ctx: &Ctx<'t>, x: Var<'t>, kernel: &Linear) -> Var<'t> {
    let s = x.shape();
    let (rows, len, ch) = (s[0], s[1], s[2]);
    let cols = x.gather(conv3_index(rows, len, ch), &[rows, len, 3 * ch]);
    kernel.forward(ctx, cols)
}

pub fn maxpool3<'t>(x: Var<'t>) -> Var<'t> {
    let s = x.shape();
    let (rows, len, ch) = (s[0], s[1], s[2]);
    x.gather(pool3_index(rows, len, ch), &[rows, len / 3, ch, 3]).max_last()
}
