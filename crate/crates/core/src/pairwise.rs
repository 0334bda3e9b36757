//! Off-diagonal sums `Σ_{j≠i} K_ij v_j` over a symmetric kernel matrix.
//!
//! Each output entry is reduced sequentially in index order by one task, so
//! results are identical for any thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;

/// `(K₀ v)_i = Σ_{j≠i} K_ij v_j` for symmetric `K`.
pub(crate) fn offdiag_matvec(k: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    debug_assert_eq!(k.shape(), (n, n));
    (0..n)
        .into_par_iter()
        .map(|i| {
            // Column i equals row i for a symmetric matrix and is contiguous.
            let col = k.column(i);
            let col = col.as_slice();
            dot(&col[..i], &v[..i]) + dot(&col[i + 1..], &v[i + 1..])
        })
        .collect()
}

/// `K₀ V` for an `n × p` matrix `V`, one pass over `K`.
pub(crate) fn offdiag_matmul(k: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = v.shape();
    debug_assert_eq!(k.shape(), (n, n));
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let col = k.column(i);
            let col = col.as_slice();
            (0..p)
                .map(|l| {
                    let vl = v.column(l);
                    let vl = vl.as_slice();
                    dot(&col[..i], &vl[..i]) + dot(&col[i + 1..], &vl[i + 1..])
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n, p, |i, l| rows[i][l])
}

/// `Σ a_i b_i` over four interleaved partial sums, combined in a fixed order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() / 4 * 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for lane in 0..4 {
            acc[lane] += x[lane] * y[lane];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Largest `|x|`, vectorizable.
pub(crate) fn max_abs(x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (head, tail) = x.split_at(x.len() / 4 * 4);
    for c in head.chunks_exact(4) {
        for lane in 0..4 {
            let a = c[lane].abs();
            acc[lane] = if a > acc[lane] { a } else { acc[lane] };
        }
    }
    tail.iter().chain(&acc).fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
}
