//! Dense matrix kernels.
//!
//! Everything funnels through [`mm_nn`], an ikj-ordered accumulate kernel
//! whose inner loop is a contiguous axpy the compiler can vectorize. The
//! transposed variants materialize the transpose once and reuse it, which
//! beats strided inner loops on every size this library touches.

use crate::tensor::Element;

/// c += a @ b, where a is m×k, b is k×n, c is m×n, all row-major.
pub fn mm_nn<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                c_row[j] = c_row[j].add(av.mul(b_row[j]));
            }
        }
    }
}

/// Row-major transpose of an m×n matrix into a fresh n×m buffer.
pub fn transpose<E: Element>(a: &[E], m: usize, n: usize) -> Vec<E> {
    debug_assert_eq!(a.len(), m * n);
    let mut out = vec![E::ZERO; n * m];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// c += a @ bᵀ, where a is m×k, b is n×k, c is m×n.
pub fn mm_nt<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    let bt = transpose(b, n, k);
    mm_nn(a, &bt, c, m, k, n);
}

/// c += aᵀ @ b, where a is k×m, b is k×n, c is m×n.
pub fn mm_tn<E: Element>(a: &[E], b: &[E], c: &mut [E], m: usize, k: usize, n: usize) {
    let at = transpose(a, k, m);
    mm_nn(&at, b, c, m, k, n);
}
