//! Minimal matrix kernels backing the convolution path.
//!
//! Accumulation order is fixed (ascending over the contraction index),
//! which keeps results bit-identical across runs and lets the dilation-1
//! convolution match a direct nested-loop reference exactly.

use crate::tensor::Element;

/// `out[m, n] += a[m, k] * b[k, n]`, accumulating over `k` in ascending
/// order into whatever `out` already holds (e.g. a broadcast bias).
pub(crate) fn matmul_acc<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

/// `out[m, n] = a[m, k] * b[n, k]^T` — contraction over the shared last
/// axis. Used for the weight gradient, where both operands are row-major
/// over the contraction index.
pub(crate) fn matmul_nt<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = E::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Row-major transpose of an `r x c` matrix.
pub(crate) fn transpose<E: Element>(a: &[E], r: usize, c: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), r * c);
    let mut out = vec![E::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
