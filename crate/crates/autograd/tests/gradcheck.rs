//! Central finite-difference checks for every differentiable operation.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repnet_autograd::{Tape, Tensor, Var};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Compares analytic and numerical gradients of `f` for every input.
fn check<F>(inputs: Vec<Tensor>, f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss);

    let eval = |xs: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).value().to_scalar()
    };
    let eps = 1e-5;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        for i in 0..input.numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += eps;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-7);
            let rel = (a - numeric).abs() / denom;
            assert!(rel < 1e-5, "input {k} elem {i}: analytic {a} vs numeric {numeric} (rel {rel})");
        }
    }
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn project<'t>(tape: &'t Tape, y: Var<'t>) -> Var<'t> {
    let shape = y.shape();
    let w = Tensor::from_fn(shape, |i| ((i as f64) * 0.37).sin() + 0.1);
    y.mul(tape.constant(w)).sum_all()
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random(&[3, 4], &mut rng), random(&[3, 4], &mut rng));
    check(vec![a.clone(), b.clone()], |t, v| project(t, v[0].add(v[1]).mul(v[0]).sub(v[1].scale(0.3))));
    check(vec![a.clone()], |t, v| project(t, v[0].gelu()));
    check(vec![a.clone()], |t, v| project(t, v[0].sigmoid()));
    check(vec![a.clone()], |t, v| project(t, v[0].tanh()));
    let c = random(&[3, 4], &mut rng);
    check(vec![a], move |t, v| project(t, v[0].mul_const(&c).add_const(&c)));
}

#[test]
fn linear_and_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 3, 5], &mut rng);
    let w = random(&[5, 4], &mut rng);
    let b = random(&[4], &mut rng);
    check(vec![x.clone(), w.clone(), b], |t, v| project(t, v[0].linear(v[1], Some(v[2]))));
    check(vec![x.clone(), w.clone()], |t, v| project(t, v[0].linear(v[1], None)));
    let a = random(&[3, 5], &mut rng);
    check(vec![a, w], |t, v| project(t, v[0].matmul(v[1])));
}

#[test]
fn batched_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[2, 3, 4], &mut rng);
    let b = random(&[2, 4, 5], &mut rng);
    let bt = random(&[2, 5, 4], &mut rng);
    check(vec![a.clone(), b], |t, v| project(t, v[0].bmm(v[1], false)));
    check(vec![a, bt], |t, v| project(t, v[0].bmm(v[1], true)));
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 3, 4], &mut rng);
    check(vec![x.clone()], |t, v| project(t, v[0].permute(&[2, 0, 1])));
    check(vec![x.clone()], |t, v| project(t, v[0].reshape(&[6, 4]).narrow(0, 1, 3)));
    let y = random(&[2, 2, 4], &mut rng);
    check(vec![x.clone(), y], |t, v| project(t, t.concat(&[v[0], v[1]], 1)));
    let index: Rc<[isize]> = vec![0, 5, -1, 5, 23, 7, 7, 2].into();
    check(vec![x], move |t, v| project(t, v[0].gather(index.clone(), &[2, 4])));
}

#[test]
fn normalizers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[3, 6], &mut rng);
    let g = random(&[6], &mut rng);
    let b = random(&[6], &mut rng);
    check(vec![x.clone(), g, b], |t, v| project(t, v[0].layer_norm(v[1], v[2], 1e-5)));
    check(vec![x.clone()], |t, v| project(t, v[0].softmax_last()));
    check(vec![x.map(|v| 2.0 * v)], |t, v| project(t, v[0].entmax15_last()));
    check(vec![x.clone()], |t, v| project(t, v[0].glu_last()));
    check(vec![x], |t, v| project(t, v[0].max_last()));
}

#[test]
fn lstm_bptt() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, len, inp, h) = (2, 4, 3, 2);
    let x = random(&[n, len, inp], &mut rng);
    let wi = random(&[inp, 4 * h], &mut rng);
    let wh = random(&[h, 4 * h], &mut rng);
    let b = random(&[4 * h], &mut rng);
    check(vec![x, wi, wh, b], |t, v| project(t, v[0].lstm(v[1], v[2], v[3])));
}

#[test]
fn stacked_lstm_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 3;
    let x = random(&[1, 5, h], &mut rng);
    let params: Vec<Tensor> = (0..2)
        .flat_map(|_| [random(&[h, 4 * h], &mut rng), random(&[h, 4 * h], &mut rng), random(&[4 * h], &mut rng)])
        .collect();
    let mut inputs = vec![x];
    inputs.extend(params);
    check(inputs, |t, v| project(t, v[0].lstm(v[1], v[2], v[3]).lstm(v[4], v[5], v[6])));
}

#[test]
fn losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = random(&[4, 5], &mut rng);
    // residuals kept away from the Huber knee
    let target = p.zip_map(&random(&[4, 5], &mut rng), |p, r| p - if r.abs() > 0.45 && r.abs() < 0.55 { 0.8 } else { r });
    let t1 = target.clone();
    check(vec![p.clone()], move |_, v| v[0].huber_loss(&t1, 0.5));
    check(vec![p.clone()], move |_, v| v[0].mse_loss(&target));
    check(vec![p], |_, v| v[0].mean_all());
}

#[test]
fn constants_receive_no_gradient() {
    let tape = Tape::new();
    let c = tape.constant(Tensor::full([2], 3.0));
    let w = tape.leaf(Tensor::full([2], 2.0));
    let loss = c.mul(w).sum_all();
    let grads = tape.backward(loss);
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(w).unwrap().data(), &[3.0, 3.0]);
}

#[test]
fn reused_var_accumulates() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new([1], vec![3.0]));
    let loss = x.mul(x).add(x).sum_all();
    let grads = tape.backward(loss);
    assert_eq!(grads.get(x).unwrap().data(), &[7.0]);
}
