//! Fused single-layer LSTM with full back-propagation through time.

use crate::gemm::{gemm, Layout};
use crate::ops::sigmoid_scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Gate blocks are packed `[input, forget, cell, output]` along the last
/// axis of the weights.
impl<'t> Var<'t> {
    /// Runs an LSTM over axis 1 of a `(N, L, I)` input with zero initial
    /// state and returns every hidden state as `(N, L, H)`.
    ///
    /// `w_ih` is `(I, 4H)`, `w_hh` is `(H, 4H)` and `bias` is `(4H,)`.
    pub fn lstm(self, w_ih: Var<'t>, w_hh: Var<'t>, bias: Var<'t>) -> Var<'t> {
        let x = self.value();
        let (wi, wh, b) = (w_ih.value(), w_hh.value(), bias.value());
        assert_eq!(x.ndim(), 3, "lstm: input must be (N, L, I)");
        let (n, len, inp) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert_eq!(wi.shape()[0], inp, "lstm: w_ih input width");
        let h4 = wi.shape()[1];
        assert!(h4 % 4 == 0, "lstm: gate width must be a multiple of 4");
        let h = h4 / 4;
        assert_eq!(wh.shape(), &[h, h4], "lstm: w_hh shape");
        assert_eq!(b.shape(), &[h4], "lstm: bias shape");

        let cache = forward_pass(x.data(), n, len, inp, h, wi.data(), wh.data(), b.data());
        let mut out = vec![0.0; n * len * h];
        for t in 0..len {
            for s in 0..n {
                let src = &cache.hidden[(t * n + s) * h..(t * n + s + 1) * h];
                out[(s * len + t) * h..(s * len + t + 1) * h].copy_from_slice(src);
            }
        }
        let need_x = self.requires_grad();
        self.tape.record(Tensor::new([n, len, h], out), &[self, w_ih, w_hh, bias], move |g, p, _| {
            let (x, wi, wh) = (&p[0], &p[1], &p[2]);
            backward_pass(&cache, g.data(), x.data(), n, len, inp, h, wi.data(), wh.data(), need_x)
        })
    }
}

/// Per-step activations, time-major: index `(t * n + s) * width`.
struct LstmCache {
    gates: Vec<f64>,  // activated i, f, g, o: (L, N, 4H)
    cell: Vec<f64>,   // c_t: (L, N, H)
    hidden: Vec<f64>, // h_t: (L, N, H)
}

#[allow(clippy::too_many_arguments)]
fn forward_pass(
    x: &[f64],
    n: usize,
    len: usize,
    inp: usize,
    h: usize,
    wi: &[f64],
    wh: &[f64],
    b: &[f64],
) -> LstmCache {
    let h4 = 4 * h;
    // x is (N, L, I); project every (s, t) row at once.
    let mut xw = vec![0.0; n * len * h4];
    gemm(n * len, inp, h4, x, Layout::Normal, wi, Layout::Normal, &mut xw, false);
    let mut gates = vec![0.0; len * n * h4];
    let mut cell = vec![0.0; len * n * h];
    let mut hidden = vec![0.0; len * n * h];
    let mut pre = vec![0.0; n * h4];
    for t in 0..len {
        for s in 0..n {
            let src = &xw[(s * len + t) * h4..(s * len + t + 1) * h4];
            let dst = &mut pre[s * h4..(s + 1) * h4];
            for j in 0..h4 {
                dst[j] = src[j] + b[j];
            }
        }
        if t > 0 {
            let prev = &hidden[(t - 1) * n * h..t * n * h];
            gemm(n, h, h4, prev, Layout::Normal, wh, Layout::Normal, &mut pre, true);
        }
        for s in 0..n {
            let a = &pre[s * h4..(s + 1) * h4];
            let gt = &mut gates[(t * n + s) * h4..(t * n + s + 1) * h4];
            for j in 0..h {
                gt[j] = sigmoid_scalar(a[j]);
                gt[h + j] = sigmoid_scalar(a[h + j]);
                gt[2 * h + j] = a[2 * h + j].tanh();
                gt[3 * h + j] = sigmoid_scalar(a[3 * h + j]);
            }
            for j in 0..h {
                let c_prev = if t > 0 { cell[((t - 1) * n + s) * h + j] } else { 0.0 };
                let c = gt[h + j] * c_prev + gt[j] * gt[2 * h + j];
                cell[(t * n + s) * h + j] = c;
                hidden[(t * n + s) * h + j] = gt[3 * h + j] * c.tanh();
            }
        }
    }
    LstmCache { gates, cell, hidden }
}

#[allow(clippy::too_many_arguments)]
fn backward_pass(
    cache: &LstmCache,
    g: &[f64],
    x: &[f64],
    n: usize,
    len: usize,
    inp: usize,
    h: usize,
    wi: &[f64],
    wh: &[f64],
    need_x: bool,
) -> Vec<Option<Tensor>> {
    let h4 = 4 * h;
    // pre-activation gradients, batch-major (N, L, 4H) to line up with x
    let mut da_all = vec![0.0; n * len * h4];
    let mut dwh = vec![0.0; h * h4];
    let mut dh_next = vec![0.0; n * h];
    let mut dc_next = vec![0.0; n * h];
    let mut da_t = vec![0.0; n * h4];
    for t in (0..len).rev() {
        for s in 0..n {
            let gt = &cache.gates[(t * n + s) * h4..(t * n + s + 1) * h4];
            let da = &mut da_t[s * h4..(s + 1) * h4];
            for j in 0..h {
                let idx = (t * n + s) * h + j;
                let c = cache.cell[idx];
                let tc = c.tanh();
                let c_prev = if t > 0 { cache.cell[((t - 1) * n + s) * h + j] } else { 0.0 };
                let (gi, gf, gg, go) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
                let dh = g[(s * len + t) * h + j] + dh_next[s * h + j];
                let d_o = dh * tc;
                let dc = dh * go * (1.0 - tc * tc) + dc_next[s * h + j];
                dc_next[s * h + j] = dc * gf;
                da[j] = dc * gg * gi * (1.0 - gi);
                da[h + j] = dc * c_prev * gf * (1.0 - gf);
                da[2 * h + j] = dc * gi * (1.0 - gg * gg);
                da[3 * h + j] = d_o * go * (1.0 - go);
            }
        }
        if t > 0 {
            let prev = &cache.hidden[(t - 1) * n * h..t * n * h];
            gemm(h, n, h4, prev, Layout::Transposed, &da_t, Layout::Normal, &mut dwh, true);
        }
        gemm(n, h4, h, &da_t, Layout::Normal, wh, Layout::Transposed, &mut dh_next, false);
        for s in 0..n {
            da_all[(s * len + t) * h4..(s * len + t + 1) * h4]
                .copy_from_slice(&da_t[s * h4..(s + 1) * h4]);
        }
    }
    let rows = n * len;
    let mut dwi = vec![0.0; inp * h4];
    gemm(inp, rows, h4, x, Layout::Transposed, &da_all, Layout::Normal, &mut dwi, false);
    let mut db = vec![0.0; h4];
    for row in da_all.chunks(h4) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    let dx = need_x.then(|| {
        let mut dx = vec![0.0; rows * inp];
        gemm(rows, h4, inp, &da_all, Layout::Normal, wi, Layout::Transposed, &mut dx, false);
        Tensor::new([n, len, inp], dx)
    });
    vec![
        dx,
        Some(Tensor::new([inp, h4], dwi)),
        Some(Tensor::new([h, h4], dwh)),
        Some(Tensor::new([h4], db)),
    ]
}
