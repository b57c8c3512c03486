//! Raw slice kernels shared by the tape ops and by data preprocessing.

use super::Scalar;
use crate::parallel::for_each_chunk;

const ROWS_PER_TASK: usize = 8;

/// `out[m,n] = a[m,k] · b[k,n]`.
pub fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for_each_chunk(out, ROWS_PER_TASK * n, m * k * n, |chunk_idx, rows| {
        let row0 = chunk_idx * ROWS_PER_TASK;
        for (r, out_row) in rows.chunks_mut(n).enumerate() {
            let a_row = &a[(row0 + r) * k..(row0 + r + 1) * k];
            out_row.iter_mut().for_each(|x| *x = T::zero());
            for (p, &av) in a_row.iter().enumerate() {
                let b_row = &b[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    });
}

/// `out[m,n] = a[m,k] · b[n,k]ᵀ`.
pub fn gemm_a_bt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for_each_chunk(out, ROWS_PER_TASK * n, m * k * n, |chunk_idx, rows| {
        let row0 = chunk_idx * ROWS_PER_TASK;
        for (r, out_row) in rows.chunks_mut(n).enumerate() {
            let a_row = &a[(row0 + r) * k..(row0 + r + 1) * k];
            for (j, o) in out_row.iter_mut().enumerate() {
                *o = dot(a_row, &b[j * k..(j + 1) * k]);
            }
        }
    });
}

/// `out[k,n] = a[m,k]ᵀ · b[m,n]`.
pub fn gemm_at_b<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for_each_chunk(out, n, m * k * n, |p, out_row| {
        out_row.iter_mut().for_each(|x| *x = T::zero());
        for i in 0..m {
            let av = a[i * k + p];
            let b_row = &b[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
}

/// Fixed-order dot product with eight partial sums.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Source taps for one output coordinate of a half-pixel bilinear resize.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Taps<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
}

pub(crate) fn bilinear_taps<T: Scalar>(src: usize, dst: usize) -> Vec<Taps<T>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Taps {
                lo,
                hi,
                frac: T::lit(s - lo as f64),
            }
        })
        .collect()
}

/// Bilinear resize of one channels-last image (align-corners off).
pub fn resize_bilinear_hwc<T: Scalar>(
    src: &[T],
    (h, w, c): (usize, usize, usize),
    (out_h, out_w): (usize, usize),
) -> Vec<T> {
    debug_assert_eq!(src.len(), h * w * c);
    let ty = bilinear_taps::<T>(h, out_h);
    let tx = bilinear_taps::<T>(w, out_w);
    let mut out = vec![T::zero(); out_h * out_w * c];
    for (oy, y) in ty.iter().enumerate() {
        for (ox, x) in tx.iter().enumerate() {
            let o = (oy * out_w + ox) * c;
            let p00 = (y.lo * w + x.lo) * c;
            let p01 = (y.lo * w + x.hi) * c;
            let p10 = (y.hi * w + x.lo) * c;
            let p11 = (y.hi * w + x.hi) * c;
            for ch in 0..c {
                let top = src[p00 + ch] + (src[p01 + ch] - src[p00 + ch]) * x.frac;
                let bot = src[p10 + ch] + (src[p11 + ch] - src[p10 + ch]) * x.frac;
                out[o + ch] = top + (bot - top) * y.frac;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

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

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn gemm_variants_agree_with_triple_loop() {
        let mut rng = StdRng::seed_from_u64(3);
        let (m, k, n) = (37, 19, 23);
        let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = naive(&a, &b, m, k, n);

        let mut out = vec![0.0; m * n];
        gemm(&a, &b, &mut out, m, k, n);
        out.iter().zip(&want).for_each(|(x, y)| assert!((x - y).abs() < 1e-12));

        gemm_a_bt(&a, &transpose(&b, k, n), &mut out, m, k, n);
        out.iter().zip(&want).for_each(|(x, y)| assert!((x - y).abs() < 1e-12));

        let mut out_t = vec![0.0; m * n];
        gemm_at_b(&transpose(&a, m, k), &b, &mut out_t, k, m, n);
        out_t.iter().zip(&want).for_each(|(x, y)| assert!((x - y).abs() < 1e-12));
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let src: Vec<f32> = (0..5 * 7 * 3).map(|i| i as f32).collect();
        assert_eq!(resize_bilinear_hwc(&src, (5, 7, 3), (5, 7)), src);
    }
}
