//! Differentiable operations on [`Var`].

use std::rc::Rc;

use crate::gemm::{gemm, Layout};
use crate::sparsemax::{entmax15_backward, entmax15_forward};
use crate::tape::{Tape, Var};
use crate::tensor::{numel, Tensor};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + statrs::function::erf::erf(x / SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + statrs::function::erf::erf(x / SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(a: &Var<'_>, b: &Var<'_>, op: &str) {
    assert!(std::ptr::eq(a.tape, b.tape), "{op}: operands live on different tapes");
    let (sa, sb) = (a.shape(), b.shape());
    assert_eq!(sa, sb, "{op}: shape mismatch {sa:?} vs {sb:?}");
}

impl<'t> Var<'t> {
    fn unary(
        self,
        value: Tensor,
        backward: impl Fn(&Tensor, &Tensor, &Tensor) -> Tensor + 'static,
    ) -> Var<'t> {
        self.tape.record(value, &[self], move |g, p, out| vec![Some(backward(g, &p[0], out))])
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        same_shape(&self, &other, "add");
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.tape.record(v, &[self, other], |g, _, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        same_shape(&self, &other, "sub");
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.tape
            .record(v, &[self, other], |g, _, _| vec![Some(g.clone()), Some(g.map(|x| -x))])
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        same_shape(&self, &other, "mul");
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        self.tape.record(v, &[self, other], |g, p, _| {
            vec![Some(g.zip_map(&p[1], |g, b| g * b)), Some(g.zip_map(&p[0], |g, a| g * a))]
        })
    }

    /// Adds a constant tensor of identical shape.
    pub fn add_const(self, c: &Tensor) -> Var<'t> {
        let v = self.value().zip_map(c, |a, b| a + b);
        self.unary(v, |g, _, _| g.clone())
    }

    /// Multiplies elementwise by a constant tensor of identical shape.
    pub fn mul_const(self, c: &Tensor) -> Var<'t> {
        let v = self.value().zip_map(c, |a, b| a * b);
        let c = c.clone();
        self.unary(v, move |g, _, _| g.zip_map(&c, |g, c| g * c))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.value().map(|x| x * s);
        self.unary(v, move |g, _, _| g.map(|x| x * s))
    }

    pub fn gelu(self) -> Var<'t> {
        let v = self.value().map(gelu_scalar);
        self.unary(v, |g, x, _| g.zip_map(x, |g, x| g * gelu_grad_scalar(x)))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().map(sigmoid_scalar);
        self.unary(v, |g, _, y| g.zip_map(y, |g, y| g * y * (1.0 - y)))
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.unary(v, |g, _, y| g.zip_map(y, |g, y| g * (1.0 - y * y)))
    }

    /// Affine map along the last axis: `x · w + b` with `w` of shape
    /// `(in, out)` and `b` of shape `(out,)`.
    pub fn linear(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Var<'t> {
        let x = self.value();
        let w = weight.value();
        let xs = x.shape();
        assert!(!xs.is_empty(), "linear: scalar input");
        assert_eq!(w.ndim(), 2, "linear: weight must be 2-d");
        let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
        assert_eq!(*xs.last().unwrap(), fan_in, "linear: input width {xs:?} vs weight {:?}", w.shape());
        let rows = x.numel() / fan_in;
        let mut out = vec![0.0; rows * fan_out];
        gemm(rows, fan_in, fan_out, x.data(), Layout::Normal, w.data(), Layout::Normal, &mut out, false);
        if let Some(b) = &bias {
            let b = b.value();
            assert_eq!(b.shape(), &[fan_out], "linear: bias shape");
            for row in out.chunks_mut(fan_out) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let value = Tensor::new(shape, out);
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let has_bias = bias.is_some();
        let need_x = self.requires_grad();
        self.tape.record(value, &parents, move |g, p, _| {
            let (x, w) = (&p[0], &p[1]);
            let dx = need_x.then(|| {
                let mut dx = vec![0.0; rows * fan_in];
                gemm(rows, fan_out, fan_in, g.data(), Layout::Normal, w.data(), Layout::Transposed, &mut dx, false);
                Tensor::new(x.shape().to_vec(), dx)
            });
            let mut dw = vec![0.0; fan_in * fan_out];
            gemm(fan_in, rows, fan_out, x.data(), Layout::Transposed, g.data(), Layout::Normal, &mut dw, false);
            let mut grads = vec![dx, Some(Tensor::new([fan_in, fan_out], dw))];
            if has_bias {
                let mut db = vec![0.0; fan_out];
                for row in g.data().chunks(fan_out) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                grads.push(Some(Tensor::new([fan_out], db)));
            }
            grads
        })
    }

    /// Plain 2-d matrix product `(m, k) · (k, n)`.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.ndim(), 2, "matmul: lhs must be 2-d");
        assert_eq!(b.ndim(), 2, "matmul: rhs must be 2-d");
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        assert_eq!(b.shape()[0], k, "matmul: inner extent mismatch");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.data(), Layout::Normal, b.data(), Layout::Normal, &mut out, false);
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        self.tape.record(Tensor::new([m, n], out), &[self, other], move |g, p, _| {
            let da = need_a.then(|| {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), Layout::Normal, p[1].data(), Layout::Transposed, &mut da, false);
                Tensor::new([m, k], da)
            });
            let db = need_b.then(|| {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, p[0].data(), Layout::Transposed, g.data(), Layout::Normal, &mut db, false);
                Tensor::new([k, n], db)
            });
            vec![da, db]
        })
    }

    /// Batched product. `self` is `(N, m, k)`; `other` is `(N, k, n)`, or
    /// `(N, n, k)` when `transpose_other` is set.
    pub fn bmm(self, other: Var<'t>, transpose_other: bool) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.ndim(), 3, "bmm: lhs must be 3-d");
        assert_eq!(b.ndim(), 3, "bmm: rhs must be 3-d");
        let (batch, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let n = if transpose_other { b.shape()[1] } else { b.shape()[2] };
        let bk = if transpose_other { b.shape()[2] } else { b.shape()[1] };
        assert_eq!(b.shape()[0], batch, "bmm: batch mismatch");
        assert_eq!(bk, k, "bmm: inner extent mismatch");
        let b_layout = if transpose_other { Layout::Transposed } else { Layout::Normal };
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..(i + 1) * m * k],
                Layout::Normal,
                &b.data()[i * k * n..(i + 1) * k * n],
                b_layout,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        self.tape.record(Tensor::new([batch, m, n], out), &[self, other], move |g, p, _| {
            let (a, b) = (&p[0], &p[1]);
            let mut da = vec![0.0; batch * m * k];
            let mut db = vec![0.0; batch * k * n];
            for i in 0..batch {
                let gi = &g.data()[i * m * n..(i + 1) * m * n];
                let ai = &a.data()[i * m * k..(i + 1) * m * k];
                let bi = &b.data()[i * k * n..(i + 1) * k * n];
                let dai = &mut da[i * m * k..(i + 1) * m * k];
                let dbi = &mut db[i * k * n..(i + 1) * k * n];
                if transpose_other {
                    // B = Sᵀ with S stored (n, k)
                    gemm(m, n, k, gi, Layout::Normal, bi, Layout::Normal, dai, false);
                    gemm(n, m, k, gi, Layout::Transposed, ai, Layout::Normal, dbi, false);
                } else {
                    gemm(m, n, k, gi, Layout::Normal, bi, Layout::Transposed, dai, false);
                    gemm(k, m, n, ai, Layout::Transposed, gi, Layout::Normal, dbi, false);
                }
            }
            vec![
                Some(Tensor::new(a.shape().to_vec(), da)),
                Some(Tensor::new(b.shape().to_vec(), db)),
            ]
        })
    }

    pub fn permute(self, axes: &[usize]) -> Var<'t> {
        let v = self.value().permute(axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.unary(v, move |g, _, _| g.permute(&inverse))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = (*self.value()).clone().reshape(shape.to_vec());
        self.unary(v, |g, x, _| g.clone().reshape(x.shape().to_vec()))
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'t> {
        let v = self.value().narrow(axis, start, len);
        self.unary(v, move |g, x, _| {
            let xs = x.shape();
            let outer: usize = xs[..axis].iter().product();
            let inner: usize = xs[axis + 1..].iter().product();
            let dim = xs[axis];
            let mut d = vec![0.0; x.numel()];
            for o in 0..outer {
                let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                let base = o * dim * inner + start * inner;
                d[base..base + len * inner].copy_from_slice(src);
            }
            Tensor::new(xs.to_vec(), d)
        })
    }

    /// `out[i] = self[index[i]]`, or zero where `index[i] < 0`.
    pub fn gather(self, index: Rc<[isize]>, out_shape: &[usize]) -> Var<'t> {
        let src = self.value();
        assert_eq!(index.len(), numel(out_shape), "gather: index length vs output shape");
        let n = src.numel() as isize;
        let data = index
            .iter()
            .map(|&i| {
                assert!(i < n, "gather: index {i} out of range {n}");
                if i < 0 { 0.0 } else { src.data()[i as usize] }
            })
            .collect();
        let v = Tensor::new(out_shape.to_vec(), data);
        self.unary(v, move |g, x, _| {
            let mut d = vec![0.0; x.numel()];
            for (&i, gv) in index.iter().zip(g.data()) {
                if i >= 0 {
                    d[i as usize] += gv;
                }
            }
            Tensor::new(x.shape().to_vec(), d)
        })
    }

    /// Layer normalization over the last axis with affine `gain`/`bias`.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Var<'t> {
        let x = self.value();
        let d = *x.shape().last().expect("layer_norm: scalar input");
        let (gv, bv) = (gain.value(), bias.value());
        assert_eq!(gv.shape(), &[d], "layer_norm: gain shape");
        assert_eq!(bv.shape(), &[d], "layer_norm: bias shape");
        let mut out = vec![0.0; x.numel()];
        for (row, o) in x.data().chunks(d).zip(out.chunks_mut(d)) {
            let (mean, inv) = row_moments(row, eps);
            for j in 0..d {
                o[j] = (row[j] - mean) * inv * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out);
        self.tape.record(value, &[self, gain, bias], move |g, p, _| {
            let (x, gain) = (&p[0], &p[1]);
            let mut dx = vec![0.0; x.numel()];
            let mut dg = vec![0.0; d];
            let mut db = vec![0.0; d];
            let mut xhat = vec![0.0; d];
            let mut dxhat = vec![0.0; d];
            for ((row, grow), dxr) in x.data().chunks(d).zip(g.data().chunks(d)).zip(dx.chunks_mut(d)) {
                let (mean, inv) = row_moments(row, eps);
                let (mut m1, mut m2) = (0.0, 0.0);
                for j in 0..d {
                    xhat[j] = (row[j] - mean) * inv;
                    dg[j] += grow[j] * xhat[j];
                    db[j] += grow[j];
                    dxhat[j] = grow[j] * gain.data()[j];
                    m1 += dxhat[j];
                    m2 += dxhat[j] * xhat[j];
                }
                m1 /= d as f64;
                m2 /= d as f64;
                for j in 0..d {
                    dxr[j] = inv * (dxhat[j] - m1 - xhat[j] * m2);
                }
            }
            vec![
                Some(Tensor::new(x.shape().to_vec(), dx)),
                Some(Tensor::new([d], dg)),
                Some(Tensor::new([d], db)),
            ]
        })
    }

    pub fn softmax_last(self) -> Var<'t> {
        let x = self.value();
        let d = *x.shape().last().expect("softmax: scalar input");
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let value = Tensor::new(x.shape().to_vec(), out);
        self.unary(value, move |g, _, y| {
            let mut dx = vec![0.0; y.numel()];
            for ((gr, yr), dr) in g.data().chunks(d).zip(y.data().chunks(d)).zip(dx.chunks_mut(d)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    dr[j] = yr[j] * (gr[j] - dot);
                }
            }
            Tensor::new(y.shape().to_vec(), dx)
        })
    }

    /// 1.5-entmax over the last axis: a sparse probability mapping that can
    /// assign exact zeros.
    pub fn entmax15_last(self) -> Var<'t> {
        let x = self.value();
        let d = *x.shape().last().expect("entmax: scalar input");
        let mut out = vec![0.0; x.numel()];
        for (row, o) in x.data().chunks(d).zip(out.chunks_mut(d)) {
            entmax15_forward(row, o);
        }
        let value = Tensor::new(x.shape().to_vec(), out);
        self.unary(value, move |g, _, y| {
            let mut dx = vec![0.0; y.numel()];
            for ((gr, yr), dr) in g.data().chunks(d).zip(y.data().chunks(d)).zip(dx.chunks_mut(d)) {
                entmax15_backward(yr, gr, dr);
            }
            Tensor::new(y.shape().to_vec(), dx)
        })
    }

    /// Gated linear unit over the last axis: `a ⊙ σ(b)` for the two halves.
    /// Panics when the last extent is odd.
    pub fn glu_last(self) -> Var<'t> {
        let x = self.value();
        let two_m = *x.shape().last().expect("glu: scalar input");
        assert!(two_m % 2 == 0, "glu: last extent {two_m} is odd");
        let m = two_m / 2;
        let rows = x.numel() / two_m;
        let mut out = Vec::with_capacity(rows * m);
        for row in x.data().chunks(two_m) {
            for j in 0..m {
                out.push(row[j] * sigmoid_scalar(row[m + j]));
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        self.unary(Tensor::new(shape, out), move |g, x, _| {
            let mut dx = vec![0.0; x.numel()];
            for ((row, gr), dr) in x.data().chunks(two_m).zip(g.data().chunks(m)).zip(dx.chunks_mut(two_m)) {
                for j in 0..m {
                    let s = sigmoid_scalar(row[m + j]);
                    dr[j] = gr[j] * s;
                    dr[m + j] = gr[j] * row[j] * s * (1.0 - s);
                }
            }
            Tensor::new(x.shape().to_vec(), dx)
        })
    }

    /// Maximum over the last axis (which is removed). Ties route the
    /// gradient to the first maximal entry.
    pub fn max_last(self) -> Var<'t> {
        let x = self.value();
        let d = *x.shape().last().expect("max: scalar input");
        assert!(d > 0, "max over empty axis");
        let rows = x.numel() / d;
        let mut out = Vec::with_capacity(rows);
        let mut arg = Vec::with_capacity(rows);
        for row in x.data().chunks(d) {
            let (mut bi, mut bv) = (0, row[0]);
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > bv {
                    bi = j;
                    bv = v;
                }
            }
            out.push(bv);
            arg.push(bi);
        }
        let shape = x.shape()[..x.ndim() - 1].to_vec();
        self.unary(Tensor::new(shape, out), move |g, x, _| {
            let mut dx = vec![0.0; x.numel()];
            for (r, (&a, gv)) in arg.iter().zip(g.data()).enumerate() {
                dx[r * d + a] = *gv;
            }
            Tensor::new(x.shape().to_vec(), dx)
        })
    }

    pub fn sum_all(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, |g, x, _| Tensor::full(x.shape().to_vec(), g.to_scalar()))
    }

    pub fn mean_all(self) -> Var<'t> {
        let x = self.value();
        let n = x.numel() as f64;
        let v = Tensor::scalar(x.sum() / n);
        self.unary(v, move |g, x, _| Tensor::full(x.shape().to_vec(), g.to_scalar() / n))
    }

    /// Mean Huber loss against a constant target.
    pub fn huber_loss(self, target: &Tensor, delta: f64) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.shape(), target.shape(), "huber: shape mismatch");
        let n = x.numel() as f64;
        let total: f64 = x
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| huber_scalar(p - t, delta))
            .sum();
        let target = target.clone();
        self.unary(Tensor::scalar(total / n), move |g, x, _| {
            let s = g.to_scalar() / n;
            x.zip_map(&target, |p, t| {
                let r = p - t;
                s * if r.abs() < delta { r } else { delta * r.signum() }
            })
        })
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(self, target: &Tensor) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.shape(), target.shape(), "mse: shape mismatch");
        let n = x.numel() as f64;
        let total: f64 = x.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        let target = target.clone();
        self.unary(Tensor::scalar(total / n), move |g, x, _| {
            let s = 2.0 * g.to_scalar() / n;
            x.zip_map(&target, |p, t| s * (p - t))
        })
    }
}

/// Elementwise Huber term: quadratic inside `|r| < delta`, linear outside.
pub fn huber_scalar(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a < delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

impl Tape {
    /// Concatenates along `axis`.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of zero vars");
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat(&refs, axis);
        let widths: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.record(out, parts, move |g, _, _| {
            let mut start = 0;
            widths
                .iter()
                .map(|&w| {
                    let part = g.narrow(axis, start, w);
                    start += w;
                    Some(part)
                })
                .collect()
        })
    }
}
