//! Exact sort-based 1.5-entmax.
//!
//! `entmax15(z) = [z/2 − τ]₊²` where the threshold `τ` is chosen so the
//! output sums to one. Sorting the halved logits gives every candidate
//! support size; the largest consistent one fixes `τ`.

/// Writes `entmax15(z)` into `out`.
pub fn entmax15_forward(z: &[f64], out: &mut [f64]) {
    let d = z.len();
    assert_eq!(out.len(), d);
    if d == 0 {
        return;
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let half: Vec<f64> = z.iter().map(|v| (v - max) / 2.0).collect();
    let mut sorted = half.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));

    let (mut cum, mut cum_sq) = (0.0, 0.0);
    let mut tau_star = sorted[0] - 1.0;
    for (i, &v) in sorted.iter().enumerate() {
        let rho = (i + 1) as f64;
        cum += v;
        cum_sq += v * v;
        let mean = cum / rho;
        let ss = rho * (cum_sq / rho - mean * mean);
        let delta = ((1.0 - ss) / rho).max(0.0);
        let tau = mean - delta.sqrt();
        if tau <= v {
            tau_star = tau;
        } else {
            break;
        }
    }
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(&half) {
        let t = (v - tau_star).max(0.0);
        *o = t * t;
        total += *o;
    }
    // removes rounding drift off the simplex
    out.iter_mut().for_each(|o| *o /= total);
}

/// Vector-Jacobian product of 1.5-entmax given its output `y`.
pub fn entmax15_backward(y: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..y.len() {
        let s = y[i].sqrt();
        grad_in[i] = grad_out[i] * s;
        num += grad_in[i];
        den += s;
    }
    let q = if den > 0.0 { num / den } else { 0.0 };
    for i in 0..y.len() {
        grad_in[i] -= q * y[i].sqrt();
    }
}
