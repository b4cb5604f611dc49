use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::valid_range;
use crate::{gemm, Error, MatMut, MatRef, Result, Scalar};

/// Hyper-parameters of a 2-D convolution (cross-correlation, zero padding).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    /// Zero padding, in pixels per side.
    pub padding: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            bias: true,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + if self.bias { self.out_channels } else { 0 }
    }

    /// `floor((in + 2p - k) / s) + 1` for both axes.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = |len: usize, k: usize| {
            (len + 2 * self.padding >= k && self.stride > 0)
                .then(|| (len + 2 * self.padding - k) / self.stride + 1)
        };
        match (out(h, self.kernel_h), out(w, self.kernel_w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::WindowOverrun {
                window: (self.kernel_h, self.kernel_w),
                input: (h, w),
                padding: self.padding,
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::shape("conv2d", input, weight));
        }
        if input[1] != weight[1] {
            return Err(Error::shape("conv2d channels", input, weight));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be >= 1"));
        }
        let spec = ConvSpec {
            in_channels: weight[1],
            out_channels: weight[0],
            kernel_h: weight[2],
            kernel_w: weight[3],
            stride,
            padding: pad,
            bias: false,
        };
        let (out_h, out_w) = spec.output_hw(input[2], input[3])?;
        Ok(ConvGeom {
            batch: input[0],
            in_c: input[1],
            in_h: input[2],
            in_w: input[3],
            out_c: weight[0],
            kh: weight[2],
            kw: weight[3],
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_c, self.out_h, self.out_w]
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn columns(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

/// Unfolds the input into a `[C*kh*kw, B*out_h*out_w]` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let mut cols = vec![T::zero(); g.patch() * g.columns()];
    im2col_rows(x, g, 0..g.out_h, &mut cols);
    cols
}

/// Unfolds output rows `rows` of every image into `cols`, which must be
/// zeroed and hold `C*kh*kw` rows of `B*rows.len()*out_w` columns.
fn im2col_rows<T: Scalar>(x: &[T], g: &ConvGeom, rows: Range<usize>, cols: &mut [T]) {
    let plane = rows.len() * g.out_w;
    let n = g.batch * plane;
    for c in 0..g.in_c {
        for i in 0..g.kh {
            let (y_lo, y_hi) = valid_range(g.out_h, g.stride, i as isize - g.pad as isize, g.in_h);
            let (y_lo, y_hi) = (y_lo.max(rows.start), y_hi.min(rows.end));
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let offset = j as isize - g.pad as isize;
                let (x_lo, x_hi) = valid_range(g.out_w, g.stride, offset, g.in_w);
                let dst_row = &mut cols[row * n..(row + 1) * n];
                for b in 0..g.batch {
                    let src = &x[(b * g.in_c + c) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    let dst = &mut dst_row[b * plane..(b + 1) * plane];
                    for oy in y_lo..y_hi {
                        let iy = oy * g.stride + i - g.pad;
                        let src_row = &src[iy * g.in_w..(iy + 1) * g.in_w];
                        let dst_row = &mut dst[(oy - rows.start) * g.out_w..][..g.out_w];
                        if x_hi <= x_lo {
                            continue;
                        }
                        let ix = (x_lo as isize * g.stride as isize + offset) as usize;
                        if g.stride == 1 {
                            dst_row[x_lo..x_hi].copy_from_slice(&src_row[ix..ix + (x_hi - x_lo)]);
                        } else {
                            let src = src_row[ix..].iter().step_by(g.stride);
                            for (d, &s) in dst_row[x_lo..x_hi].iter_mut().zip(src) {
                                *d = s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Folds column gradients back onto the input, accumulating overlaps.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let n = g.columns();
    let plane = g.out_h * g.out_w;
    for c in 0..g.in_c {
        for i in 0..g.kh {
            let (y_lo, y_hi) = valid_range(g.out_h, g.stride, i as isize - g.pad as isize, g.in_h);
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let offset = j as isize - g.pad as isize;
                let (x_lo, x_hi) = valid_range(g.out_w, g.stride, offset, g.in_w);
                let src_row = &cols[row * n..(row + 1) * n];
                for b in 0..g.batch {
                    let dst = &mut dx[(b * g.in_c + c) * g.in_h * g.in_w..][..g.in_h * g.in_w];
                    let src = &src_row[b * plane..(b + 1) * plane];
                    for oy in y_lo..y_hi {
                        let iy = oy * g.stride + i - g.pad;
                        let d = &mut dst[iy * g.in_w..(iy + 1) * g.in_w];
                        let s = &src[oy * g.out_w..(oy + 1) * g.out_w];
                        for ox in x_lo..x_hi {
                            let ix = (ox as isize * g.stride as isize + offset) as usize;
                            d[ix] = d[ix] + s[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Upper bound on unfolded elements per chunk in the forward pass. Late
/// layers with small planes batch several images into one wide product.
const COLS_BUDGET: usize = 1 << 17;
/// Output planes at least this large are already wide enough products on
/// their own, so images run one at a time and write straight to the output.
const WIDE_PLANE: usize = 256;
/// Unfolded elements per row tile of a single image; sized to stay in L2.
const TILE_ELEMS: usize = 1 << 16;

pub(crate) fn forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let plane = g.out_h * g.out_w;
    let per_image = (g.patch() * plane).max(1);
    let chunk = if plane >= WIDE_PLANE {
        1
    } else {
        (COLS_BUDGET / per_image).clamp(1, g.batch.max(1))
    };
    let in_len = g.in_c * g.in_h * g.in_w;
    let out_len = g.out_c * plane;
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut b0 = 0;
    while b0 < g.batch {
        let nb = chunk.min(g.batch - b0);
        let sub = ConvGeom { batch: nb, ..*g };
        let x = &x[b0 * in_len..(b0 + nb) * in_len];
        let out = &mut out[b0 * out_len..(b0 + nb) * out_len];
        if nb == 1 {
            forward_image(x, w, bias, &sub, out);
        } else {
            forward_batched(x, w, bias, &sub, out);
        }
        b0 += nb;
    }
    out
}

/// One image; the `[out_c, plane]` output layout matches the product, so
/// each row tile lands in place with no scatter.
fn forward_image<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom, out: &mut [T]) {
    let k = g.patch();
    let plane = g.out_h * g.out_w;
    if let Some(bias) = bias {
        for (o, dst) in out.chunks_mut(plane).enumerate() {
            dst.fill(bias[o]);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    if g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0 {
        gemm(
            T::one(),
            MatRef::row_major(w, g.out_c, k),
            MatRef::row_major(x, k, plane),
            beta,
            MatMut::row_major(out, g.out_c, plane),
        );
        return;
    }
    let tile_rows = (TILE_ELEMS / (k * g.out_w).max(1)).clamp(1, g.out_h);
    let mut cols = vec![T::zero(); k * tile_rows * g.out_w];
    let mut r0 = 0;
    while r0 < g.out_h {
        let r1 = (r0 + tile_rows).min(g.out_h);
        let n = (r1 - r0) * g.out_w;
        let cols = &mut cols[..k * n];
        cols.fill(T::zero());
        im2col_rows(x, g, r0..r1, cols);
        let p0 = r0 * g.out_w;
        gemm(
            T::one(),
            MatRef::row_major(w, g.out_c, k),
            MatRef::row_major(cols, k, n),
            beta,
            MatMut::strided(&mut out[p0..], g.out_c, n, plane, 1),
        );
        r0 = r1;
    }
}

fn forward_batched<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom, out: &mut [T]) {
    let (k, n) = (g.patch(), g.columns());
    let plane = g.out_h * g.out_w;
    let cols = im2col(x, g);
    let mut tmp = vec![T::zero(); g.out_c * n];
    gemm(
        T::one(),
        MatRef::row_major(w, g.out_c, k),
        MatRef::row_major(&cols, k, n),
        T::zero(),
        MatMut::row_major(&mut tmp, g.out_c, n),
    );
    for b in 0..g.batch {
        for o in 0..g.out_c {
            let bo = bias.map_or(T::zero(), |bias| bias[o]);
            let src = &tmp[o * n + b * plane..][..plane];
            let dst = &mut out[(b * g.out_c + o) * plane..][..plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bo;
            }
        }
    }
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (k, n) = (g.patch(), g.columns());
    let plane = g.out_h * g.out_w;
    let mut dym = vec![T::zero(); g.out_c * n];
    for b in 0..g.batch {
        for o in 0..g.out_c {
            dym[o * n + b * plane..][..plane].copy_from_slice(&dy[(b * g.out_c + o) * plane..][..plane]);
        }
    }
    let dw = need.1.then(|| {
        let cols = im2col(x, g);
        let mut dw = vec![T::zero(); g.out_c * k];
        gemm(
            T::one(),
            MatRef::row_major(&dym, g.out_c, n),
            MatRef::row_major(&cols, k, n).t(),
            T::zero(),
            MatMut::row_major(&mut dw, g.out_c, k),
        );
        dw
    });
    let db = need.2.then(|| (0..g.out_c).map(|o| dym[o * n..(o + 1) * n].iter().copied().sum()).collect());
    let dx = need.0.then(|| {
        let mut dcols = vec![T::zero(); k * n];
        gemm(
            T::one(),
            MatRef::row_major(w, g.out_c, k).t(),
            MatRef::row_major(&dym, g.out_c, n),
            T::zero(),
            MatMut::row_major(&mut dcols, k, n),
        );
        let mut dx = vec![T::zero(); x.len()];
        col2im(&dcols, g, &mut dx);
        dx
    });
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.out_c * g.out_h * g.out_w];
        for b in 0..g.batch {
            for o in 0..g.out_c {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut s = 0.0;
                        for c in 0..g.in_c {
                            for i in 0..g.kh {
                                for j in 0..g.kw {
                                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + j) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                        continue;
                                    }
                                    let xv = x[((b * g.in_c + c) * g.in_h + iy as usize) * g.in_w + ix as usize];
                                    s += xv * w[((o * g.in_c + c) * g.kh + i) * g.kw + j];
                                }
                            }
                        }
                        out[((b * g.out_c + o) * g.out_h + oy) * g.out_w + ox] = s;
                    }
                }
            }
        }
        out
    }

    fn check(input: [usize; 4], weight: [usize; 4], stride: usize, pad: usize) {
        let g = ConvGeom::new(&input, &weight, stride, pad).unwrap();
        let x: Vec<f64> = (0..input.iter().product::<usize>()).map(|i| ((i * 31) % 17) as f64 - 8.0).collect();
        let w: Vec<f64> = (0..weight.iter().product::<usize>()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let got = forward(&x, &w, None, &g);
        assert_eq!(got, direct(&x, &w, &g));
    }

    #[test]
    fn chunked_batches_match_direct_convolution() {
        // 27 * 4096 unfolded elements per image forces several chunks.
        check([12, 3, 64, 64], [2, 3, 3, 3], 1, 1);
    }

    #[test]
    fn single_image_and_pointwise_paths() {
        check([1, 4, 9, 7], [3, 4, 3, 3], 2, 1);
        check([1, 5, 6, 6], [4, 5, 1, 1], 1, 0);
        check([3, 5, 6, 6], [4, 5, 1, 1], 1, 0);
    }

    #[test]
    fn row_tiles_cover_large_planes() {
        // 147 x 40 unfolded elements per output row: several tiles plus a
        // ragged last one.
        check([1, 3, 80, 80], [4, 3, 7, 7], 2, 3);
        check([2, 3, 80, 80], [4, 3, 7, 7], 2, 3);
    }
}
