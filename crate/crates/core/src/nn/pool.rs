use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Average,
}

/// Pooling window. Padded positions never take part in a window: max
/// ignores them and average divides by the number of real elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub pool_h: usize,
    pub pool_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn max(size: usize, stride: usize, padding: usize) -> Self {
        PoolSpec {
            kind: PoolKind::Max,
            pool_h: size,
            pool_w: size,
            stride,
            padding,
        }
    }

    pub fn average(size: usize, stride: usize) -> Self {
        PoolSpec {
            kind: PoolKind::Average,
            pool_h: size,
            pool_w: size,
            stride,
            padding: 0,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let overrun = || Error::WindowOverrun {
            window: (self.pool_h, self.pool_w),
            input: (h, w),
            padding: self.padding,
        };
        if self.stride == 0 || self.padding >= self.pool_h.min(self.pool_w) {
            return Err(overrun());
        }
        let out = |len: usize, k: usize| {
            (len + 2 * self.padding >= k).then(|| (len + 2 * self.padding - k) / self.stride + 1)
        };
        match (out(h, self.pool_h), out(w, self.pool_w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(overrun()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub spec: PoolSpec,
}

impl PoolGeom {
    pub fn new(shape: &[usize], spec: &PoolSpec) -> Result<Self> {
        if shape.len() != 4 {
            return Err(Error::shape("pool2d", shape, &[spec.pool_h, spec.pool_w]));
        }
        let (out_h, out_w) = spec.output_hw(shape[2], shape[3])?;
        Ok(PoolGeom {
            planes: shape[0] * shape[1],
            in_h: shape[2],
            in_w: shape[3],
            out_h,
            out_w,
            spec: *spec,
        })
    }

    /// Clipped input ranges covered by output `(oy, ox)`.
    fn window(&self, oy: usize, ox: usize) -> (core::ops::Range<usize>, core::ops::Range<usize>) {
        let s = &self.spec;
        let clip = |o: usize, k: usize, len: usize| {
            let start = (o * s.stride) as isize - s.padding as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + k as isize) as usize).min(len);
            lo..hi
        };
        (clip(oy, s.pool_h, self.in_h), clip(ox, s.pool_w, self.in_w))
    }
}

pub(crate) struct PoolOut<T> {
    pub y: Vec<T>,
    /// Flat input index of each output's maximum (max pooling only).
    pub argmax: Vec<u32>,
    /// Smallest gap between a window's maximum and its runner-up.
    pub min_gap: Option<T>,
}

pub(crate) fn forward<T: Scalar>(x: &[T], g: &PoolGeom, track_gap: bool) -> PoolOut<T> {
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    let mut y = vec![T::zero(); g.planes * plane_out];
    let mut argmax = Vec::new();
    let mut min_gap: Option<T> = None;
    if g.spec.kind == PoolKind::Max {
        argmax = vec![0u32; y.len()];
    }
    if g.spec.kind == PoolKind::Max && !track_gap {
        max_forward(x, g, &mut y, &mut argmax);
        return PoolOut { y, argmax, min_gap };
    }
    for p in 0..g.planes {
        let src = &x[p * plane_in..(p + 1) * plane_in];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let (ys, xs) = g.window(oy, ox);
                let o = p * plane_out + oy * g.out_w + ox;
                match g.spec.kind {
                    PoolKind::Max => {
                        let mut best = T::neg_infinity();
                        let mut second = T::neg_infinity();
                        let mut at = 0;
                        for iy in ys.clone() {
                            for ix in xs.clone() {
                                let v = src[iy * g.in_w + ix];
                                // strict comparison keeps the lowest flat index on ties
                                if v > best {
                                    second = best;
                                    best = v;
                                    at = iy * g.in_w + ix;
                                } else if v > second {
                                    second = v;
                                }
                            }
                        }
                        y[o] = best;
                        argmax[o] = (p * plane_in + at) as u32;
                        if track_gap && second.is_finite() {
                            let gap = best - second;
                            min_gap = Some(min_gap.map_or(gap, |m| m.min(gap)));
                        }
                    }
                    PoolKind::Average => {
                        let count = ys.len() * xs.len();
                        let mut total = T::zero();
                        for iy in ys.clone() {
                            for ix in xs.clone() {
                                total = total + src[iy * g.in_w + ix];
                            }
                        }
                        y[o] = total / T::lit(count as f64);
                    }
                }
            }
        }
    }
    PoolOut { y, argmax, min_gap }
}

/// Max pooling without runner-up tracking. Same tie rule as the general
/// loop: the lowest flat index wins.
fn max_forward<T: Scalar>(x: &[T], g: &PoolGeom, y: &mut [T], argmax: &mut [u32]) {
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    for p in 0..g.planes {
        let src = &x[p * plane_in..(p + 1) * plane_in];
        let base = p * plane_in;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let (ys, xs) = g.window(oy, ox);
                let mut best = T::neg_infinity();
                let mut at = ys.start * g.in_w + xs.start;
                for iy in ys {
                    let row = &src[iy * g.in_w..][..g.in_w];
                    for ix in xs.clone() {
                        let v = row[ix];
                        let better = v > best;
                        best = if better { v } else { best };
                        at = if better { iy * g.in_w + ix } else { at };
                    }
                }
                let o = p * plane_out + oy * g.out_w + ox;
                y[o] = best;
                argmax[o] = (base + at) as u32;
            }
        }
    }
}

pub(crate) fn backward<T: Scalar>(dy: &[T], g: &PoolGeom, argmax: &[u32]) -> Vec<T> {
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    let mut dx = vec![T::zero(); g.planes * plane_in];
    match g.spec.kind {
        PoolKind::Max => {
            for (&d, &at) in dy.iter().zip(argmax) {
                dx[at as usize] = dx[at as usize] + d;
            }
        }
        PoolKind::Average => {
            for p in 0..g.planes {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let (ys, xs) = g.window(oy, ox);
                        let share = dy[p * plane_out + oy * g.out_w + ox] / T::lit((ys.len() * xs.len()) as f64);
                        for iy in ys {
                            for ix in xs.clone() {
                                let i = p * plane_in + iy * g.in_w + ix;
                                dx[i] = dx[i] + share;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}
