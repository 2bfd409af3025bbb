//! Row-major dense kernels used by the model. GEMM is delegated to
//! `matrixmultiply`; output rows are split into fixed-size blocks that run in
//! parallel, which keeps per-element summation order independent of the
//! worker count.

use crate::par;

const ROW_BLOCK: usize = 64;

/// Raw strided GEMM: `c = a·b + beta·c` for an `m×k` by `k×n` product.
///
/// Strides are in elements. Callers guarantee the views stay in bounds.
#[allow(clippy::too_many_arguments)]
fn gemm_block(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the debug assertions above state the bounds every caller checks
    // via the public wrappers' length asserts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// `out = a·b` with `a: m×k`, `b: k×n`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_into(a, b, m, k, n, &mut out, false);
    out
}

/// `out (+)= a·b` with `a: m×k`, `b: k×n`.
pub fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64], accumulate: bool) {
    assert_eq!(a.len(), m * k, "lhs shape");
    assert_eq!(b.len(), k * n, "rhs shape");
    assert_eq!(out.len(), m * n, "out shape");
    if n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    par::for_each_chunk_mut(out, ROW_BLOCK * n, |bi, block| {
        let rows = block.len() / n;
        let r0 = bi * ROW_BLOCK;
        gemm_block(rows, k, n, &a[r0 * k..(r0 + rows) * k], k, 1, b, n, 1, beta, block, n);
    });
}

/// `out (+)= aᵀ·b` with `a: m×k`, `b: m×n`, `out: k×n`. Weight gradients.
pub fn matmul_tn_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64], accumulate: bool) {
    assert_eq!(a.len(), m * k, "lhs shape");
    assert_eq!(b.len(), m * n, "rhs shape");
    assert_eq!(out.len(), k * n, "out shape");
    if n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    par::for_each_chunk_mut(out, ROW_BLOCK * n, |bi, block| {
        let rows = block.len() / n;
        let r0 = bi * ROW_BLOCK;
        // aᵀ restricted to rows r0..r0+rows is column block of a.
        gemm_block(rows, m, n, &a[r0..], 1, k, b, n, 1, beta, block, n);
    });
}

/// `out (+)= a·bᵀ` with `a: m×n`, `b: k×n`, `out: m×k`. Input gradients.
pub fn matmul_nt_into(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, out: &mut [f64], accumulate: bool) {
    assert_eq!(a.len(), m * n, "lhs shape");
    assert_eq!(b.len(), k * n, "rhs shape");
    assert_eq!(out.len(), m * k, "out shape");
    if k == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    par::for_each_chunk_mut(out, ROW_BLOCK * k, |bi, block| {
        let rows = block.len() / k;
        let r0 = bi * ROW_BLOCK;
        gemm_block(rows, n, k, &a[r0 * n..(r0 + rows) * n], n, 1, b, 1, n, beta, block, k);
    });
}

/// Row-major `rows×cols` → `cols×rows`.
pub fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(src.len(), rows * cols);
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

/// Sums the rows of a `rows×cols` matrix into `out`.
pub fn add_column_sums(src: &[f64], cols: usize, out: &mut [f64]) {
    assert_eq!(out.len(), cols);
    for row in src.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn seq(len: usize, salt: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64 + salt) * 0.37).sin()).collect()
    }

    #[test]
    fn gemm_variants_match_naive() {
        let (m, k, n) = (131, 7, 5);
        let a = seq(m * k, 1.0);
        let b = seq(k * n, 2.0);
        let want = naive(&a, &b, m, k, n);
        let got = matmul(&a, &b, m, k, n);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }

        // aᵀ·c where a is m×k, c is m×n
        let c = seq(m * n, 3.0);
        let at = transpose(&a, m, k);
        let want_tn = naive(&at, &c, k, m, n);
        let mut got_tn = vec![0.0; k * n];
        matmul_tn_into(&a, &c, m, k, n, &mut got_tn, false);
        for (g, w) in got_tn.iter().zip(&want_tn) {
            assert!((g - w).abs() < 1e-10);
        }

        // c·bᵀ where c is m×n, b is k×n
        let bt = transpose(&b, k, n);
        let want_nt = naive(&c, &bt, m, n, k);
        let mut got_nt = vec![1.0; m * k];
        matmul_nt_into(&c, &b, m, n, k, &mut got_nt, true);
        for (g, w) in got_nt.iter().zip(&want_nt) {
            assert!((g - (w + 1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn softplus_and_silu_derivatives() {
        for &x in &[-5.0, -0.3, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((fd - sigmoid(x)).abs() < 1e-8);
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
