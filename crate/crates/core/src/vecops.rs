//! Slice arithmetic shared by the network and consensus code.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `y += scale * x`
#[inline]
pub(crate) fn axpy(y: &mut [f64], scale: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += scale * xi;
    }
}

/// Row-major `(rows x cols) * x`, written into `out`.
#[inline]
pub(crate) fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// Row-major `(rows x cols)^T * y`, written into `out`.
#[inline]
pub(crate) fn matvec_t(w: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for r in 0..rows {
        axpy(out, y[r], &w[r * cols..(r + 1) * cols]);
    }
}

/// Element-wise mean of equally sized vectors.
pub(crate) fn mean_of(vectors: &[Vec<f64>]) -> Vec<f64> {
    let n = vectors.len();
    let dim = vectors.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for v in vectors {
        axpy(&mut out, 1.0, v);
    }
    out.iter_mut().for_each(|x| *x /= n as f64);
    out
}
