use alloc::vec;
use alloc::vec::Vec;

use crate::{gemm, MatMut, MatRef, Scalar};

/// A fully connected layer: `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseSpec {
    pub in_features: usize,
    pub out_features: usize,
}

impl DenseSpec {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        DenseSpec { in_features, out_features }
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

/// Below this batch size the forward pass uses row dot products; packing a
/// large weight matrix for GEMM costs more than the product itself.
const DOT_BATCH: usize = 4;

pub(crate) fn forward<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, batch: usize, inf: usize, outf: usize) -> Vec<T> {
    if batch < DOT_BATCH {
        return forward_dot(x, w, b, batch, inf, outf);
    }
    let mut y = vec![T::zero(); batch * outf];
    if let Some(b) = b {
        for row in y.chunks_mut(outf) {
            row.copy_from_slice(b);
        }
    }
    gemm(
        T::one(),
        MatRef::row_major(x, batch, inf),
        MatRef::row_major(w, outf, inf).t(),
        if b.is_some() { T::one() } else { T::zero() },
        MatMut::row_major(&mut y, batch, outf),
    );
    y
}

fn forward_dot<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, batch: usize, inf: usize, outf: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(batch * outf);
    for xr in x.chunks_exact(inf).take(batch) {
        for (o, wr) in w.chunks_exact(inf).take(outf).enumerate() {
            let bias = b.map_or(T::zero(), |b| b[o]);
            y.push(bias + dot(xr, wr));
        }
    }
    y
}

/// Lanes of independent partial sums; enough to hide add latency once the
/// loop vectorises.
const DOT_LANES: usize = 32;

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); DOT_LANES];
    let (ca, cb) = (a.chunks_exact(DOT_LANES), b.chunks_exact(DOT_LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (pa, pb) in ca.zip(cb) {
        for i in 0..DOT_LANES {
            acc[i] = acc[i] + pa[i] * pb[i];
        }
    }
    let mut width = DOT_LANES;
    while width > 1 {
        width /= 2;
        for i in 0..width {
            acc[i] = acc[i] + acc[i + width];
        }
    }
    let mut s = acc[0];
    for (&p, &q) in ra.iter().zip(rb) {
        s = s + p * q;
    }
    s
}

pub(crate) fn backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    (batch, inf, outf): (usize, usize, usize),
    need: (bool, bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let dx = need.0.then(|| {
        let mut dx = vec![T::zero(); batch * inf];
        gemm(
            T::one(),
            MatRef::row_major(dy, batch, outf),
            MatRef::row_major(w, outf, inf),
            T::zero(),
            MatMut::row_major(&mut dx, batch, inf),
        );
        dx
    });
    let dw = need.1.then(|| {
        let mut dw = vec![T::zero(); outf * inf];
        gemm(
            T::one(),
            MatRef::row_major(dy, batch, outf).t(),
            MatRef::row_major(x, batch, inf),
            T::zero(),
            MatMut::row_major(&mut dw, outf, inf),
        );
        dw
    });
    let db = need.2.then(|| {
        let mut db = vec![T::zero(); outf];
        for row in dy.chunks(outf) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d = *d + g;
            }
        }
        db
    });
    (dx, dw, db)
}

/// Plain `[m,k] x [k,n]` product.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    gemm(
        T::one(),
        MatRef::row_major(a, m, k),
        MatRef::row_major(b, k, n),
        T::zero(),
        MatMut::row_major(&mut c, m, n),
    );
    c
}

pub(crate) fn matmul_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    dc: &[T],
    (m, k, n): (usize, usize, usize),
    need: (bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let da = need.0.then(|| {
        let mut da = vec![T::zero(); m * k];
        gemm(
            T::one(),
            MatRef::row_major(dc, m, n),
            MatRef::row_major(b, k, n).t(),
            T::zero(),
            MatMut::row_major(&mut da, m, k),
        );
        da
    });
    let db = need.1.then(|| {
        let mut db = vec![T::zero(); k * n];
        gemm(
            T::one(),
            MatRef::row_major(a, m, k).t(),
            MatRef::row_major(dc, m, n),
            T::zero(),
            MatMut::row_major(&mut db, k, n),
        );
        db
    });
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_path_matches_gemm_path() {
        let (inf, outf) = (19, 5);
        let x: Vec<f64> = (0..8 * inf).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..outf * inf).map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.5).collect();
        let b: Vec<f64> = (0..outf).map(|i| i as f64).collect();
        let wide = forward(&x, &w, Some(&b), 8, inf, outf);
        let narrow = forward(&x[..inf], &w, Some(&b), 1, inf, outf);
        for (p, q) in narrow.iter().zip(&wide[..outf]) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
