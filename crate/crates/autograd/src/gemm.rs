//! Thin safe wrapper around `matrixmultiply::dgemm`.

/// Layout of a matrix operand stored row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Stored as the logical `(rows, cols)` matrix.
    Normal,
    /// Stored as the transpose `(cols, rows)`.
    Transposed,
}

/// `c = a · b (+ c when accumulate)` with `a` logically `(m, k)` and `b`
/// logically `(k, n)`; `c` is `(m, n)` row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_layout: Layout,
    b: &[f64],
    b_layout: Layout,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs has wrong size");
    assert_eq!(b.len(), k * n, "gemm: rhs has wrong size");
    assert_eq!(c.len(), m * n, "gemm: output has wrong size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    if !accumulate {
        c.iter_mut().for_each(|v| *v = 0.0);
    }
    // SAFETY: the pointer/stride pairs describe exactly the slices checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
