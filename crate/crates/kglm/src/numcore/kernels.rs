//! Inner compute loops shared by the tape ops.
//!
//! Parallel variants split work by output row; every element is produced by
//! exactly one task with a fixed-order inner loop, so parallel and sequential
//! execution produce identical bits.

use crate::numcore::parallel::for_each_row;
use crate::numcore::Scalar;

/// Work threshold (in multiply-adds) below which matmul stays sequential.
/// Set high: training parallelizes across batch samples, so intra-op
/// parallelism only pays off for standalone large calls.
const MATMUL_PAR_MIN: usize = 1 << 23;
/// Minimum row count before row-wise kernels bother with the thread pool.
const ROWS_PAR_MIN: usize = 1 << 12;

/// C[m x n] = A[m x k] * B[k x n], accumulated in input order (ikj).
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let min_rows = if m * n * k >= MATMUL_PAR_MIN {
        2
    } else {
        usize::MAX
    };
    for_each_row(out, n, min_rows, |i, row| {
        row.fill(S::zero());
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            let br = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br.iter()) {
                *o += av * bv;
            }
        }
    });
}

/// C[m x n] = A[m x k] * B^T where B is [n x k]. Used by backward passes so
/// gradients never materialize an explicit transpose.
pub fn matmul_bt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let min_rows = if m * n * k >= MATMUL_PAR_MIN {
        2
    } else {
        usize::MAX
    };
    for_each_row(out, n, min_rows, |i, row| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let br = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&av, &bv) in ar.iter().zip(br.iter()) {
                acc += av * bv;
            }
            *o = acc;
        }
    });
}

/// C[m x n] = A^T * B where A is [k x m], B is [k x n].
pub fn matmul_at<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let min_rows = if m * n * k >= MATMUL_PAR_MIN {
        2
    } else {
        usize::MAX
    };
    for_each_row(out, n, min_rows, |i, row| {
        row.fill(S::zero());
        for p in 0..k {
            let av = a[p * m + i];
            let br = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(br.iter()) {
                *o += av * bv;
            }
        }
    });
}

pub fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
pub fn gelu<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (S::one() + u.tanh())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::from_f64(GELU_C);
    let a = S::from_f64(GELU_A);
    let half = S::from_f64(0.5);
    let three = S::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = S::one() - t * t;
    half * (S::one() + t) + half * x * sech2 * c * (S::one() + three * a * x * x)
}

pub fn gelu_rows<S: Scalar>(x: &[S], out: &mut [S], width: usize) {
    debug_assert_eq!(x.len(), out.len());
    for_each_row(out, width, ROWS_PAR_MIN, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            *o = gelu(x[i * width + j]);
        }
    });
}

/// Row softmax with hard masking: entries where `allowed` is false get weight
/// exactly zero and take no part in the normalization. Returns an error index
/// if some row has no allowed entry.
pub fn softmax_rows_masked<S: Scalar>(
    x: &[S],
    allowed: Option<&[bool]>,
    rows: usize,
    cols: usize,
    out: &mut [S],
) -> Option<usize> {
    debug_assert_eq!(x.len(), rows * cols);
    if let Some(a) = allowed {
        debug_assert_eq!(a.len(), rows * cols);
        for r in 0..rows {
            if !a[r * cols..(r + 1) * cols].iter().any(|&x| x) {
                return Some(r);
            }
        }
    }
    for_each_row(out, cols, ROWS_PAR_MIN, |r, row| {
        let xr = &x[r * cols..(r + 1) * cols];
        let ar = allowed.map(|a| &a[r * cols..(r + 1) * cols]);
        let open = |j: usize| ar.map_or(true, |a| a[j]);
        let mut mx = S::neg_infinity();
        for j in 0..cols {
            if open(j) && xr[j] > mx {
                mx = xr[j];
            }
        }
        let mut sum = S::zero();
        for j in 0..cols {
            if open(j) {
                let e = (xr[j] - mx).exp();
                row[j] = e;
                sum += e;
            } else {
                row[j] = S::zero();
            }
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    });
    None
}

/// Row log-softmax (unmasked).
pub fn log_softmax_rows<S: Scalar>(x: &[S], rows: usize, cols: usize, out: &mut [S]) {
    debug_assert_eq!(x.len(), rows * cols);
    for_each_row(out, cols, ROWS_PAR_MIN, |r, row| {
        let xr = &x[r * cols..(r + 1) * cols];
        let mut mx = S::neg_infinity();
        for &v in xr {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = S::zero();
        for &v in xr {
            sum += (v - mx).exp();
        }
        let lse = mx + sum.ln();
        for (o, &v) in row.iter_mut().zip(xr.iter()) {
            *o = v - lse;
        }
    });
}

/// Per-row layer norm: y = gain * (x - mean) / sqrt(var + eps) + bias.
/// Also writes the normalized values (x_hat) used by the backward pass.
pub fn layer_norm_rows<S: Scalar>(
    x: &[S],
    gain: &[S],
    bias: &[S],
    eps: S,
    rows: usize,
    cols: usize,
    out: &mut [S],
    x_hat: &mut [S],
) {
    debug_assert_eq!(x.len(), rows * cols);
    debug_assert_eq!(gain.len(), cols);
    debug_assert_eq!(bias.len(), cols);
    let inv_n = S::one() / S::from_usize(cols);
    // memory-bound; batch-level parallelism covers it
    for (r, (o, h)) in out.chunks_mut(cols).zip(x_hat.chunks_mut(cols)).enumerate() {
        let xr = &x[r * cols..(r + 1) * cols];
        let mut mean = S::zero();
        for &v in xr {
            mean += v;
        }
        mean = mean * inv_n;
        let mut var = S::zero();
        for &v in xr {
            let d = v - mean;
            var += d * d;
        }
        var = var * inv_n;
        let inv_std = S::one() / (var + eps).sqrt();
        for j in 0..cols {
            let xh = (xr[j] - mean) * inv_std;
            h[j] = xh;
            o[j] = gain[j] * xh + bias[j];
        }
    }
}
