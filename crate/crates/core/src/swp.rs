//! Spatially-weighted pooling.
//!
//! `K` learnable `H x W` masks pool a `[batch, C, H, W]` feature map into a
//! `[batch, K*C]` vector: `out[b, k*C + c] = sum_ij mask[k,i,j] * x[b,c,i,j]`.
//! Masks are unconstrained weights initialised to `1/(H*W)`, so a fresh layer
//! reproduces global average pooling in each of its `K` slots.

use alloc::vec;
use alloc::vec::Vec;

use crate::{gemm, Error, MatMut, MatRef, Result, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwpSpec {
    pub num_masks: usize,
    pub mask_h: usize,
    pub mask_w: usize,
}

impl Default for SwpSpec {
    fn default() -> Self {
        SwpSpec {
            num_masks: 9,
            mask_h: 7,
            mask_w: 7,
        }
    }
}

impl SwpSpec {
    pub fn new(num_masks: usize, mask_h: usize, mask_w: usize) -> Result<Self> {
        if num_masks == 0 || mask_h == 0 || mask_w == 0 {
            return Err(Error::invalid("SWP needs at least one mask of at least 1x1"));
        }
        Ok(SwpSpec { num_masks, mask_h, mask_w })
    }

    pub fn param_count(&self) -> usize {
        self.num_masks * self.mask_h * self.mask_w
    }

    pub fn output_width(&self, channels: usize) -> usize {
        self.num_masks * channels
    }

    pub fn mask_shape(&self) -> [usize; 3] {
        [self.num_masks, self.mask_h, self.mask_w]
    }

    /// Every mask entry equal to `1/(H*W)`.
    pub fn uniform_masks<T: Scalar>(&self) -> Tensor<T> {
        let v = T::lit(1.0 / (self.mask_h * self.mask_w) as f64);
        Tensor::full(&self.mask_shape(), v)
            .expect("validated spec")
            .with_grad()
    }
}

pub fn swp_param_count(spec: &SwpSpec) -> usize {
    spec.param_count()
}

/// The learnable state of one SWP layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SwpState<T> {
    pub spec: SwpSpec,
    pub masks: Tensor<T>,
}

impl<T: Scalar> SwpState<T> {
    pub fn new(spec: SwpSpec) -> Self {
        SwpState {
            spec,
            masks: spec.uniform_masks(),
        }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, features: Var) -> Result<Var> {
        let masks = tape.leaf(&self.masks);
        tape.swp(features, masks)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct SwpGeom {
    pub batch: usize,
    pub channels: usize,
    pub masks: usize,
    pub plane: usize,
}

impl SwpGeom {
    pub fn new(features: &[usize], masks: &[usize]) -> Result<Self> {
        if features.len() != 4 || masks.len() != 3 || features[2..] != masks[1..] {
            return Err(Error::shape("swp", features, masks));
        }
        Ok(SwpGeom {
            batch: features[0],
            channels: features[1],
            masks: masks[0],
            plane: masks[1] * masks[2],
        })
    }
}

pub(crate) fn forward<T: Scalar>(x: &[T], masks: &[T], g: &SwpGeom) -> Vec<T> {
    let width = g.masks * g.channels;
    let mut out = vec![T::zero(); g.batch * width];
    for b in 0..g.batch {
        let xb = &x[b * g.channels * g.plane..][..g.channels * g.plane];
        gemm(
            T::one(),
            MatRef::row_major(masks, g.masks, g.plane),
            MatRef::row_major(xb, g.channels, g.plane).t(),
            T::zero(),
            MatMut::row_major(&mut out[b * width..(b + 1) * width], g.masks, g.channels),
        );
    }
    out
}

pub(crate) fn backward<T: Scalar>(
    x: &[T],
    masks: &[T],
    dy: &[T],
    g: &SwpGeom,
    need: (bool, bool),
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let width = g.masks * g.channels;
    let dx = need.0.then(|| {
        let mut dx = vec![T::zero(); x.len()];
        for b in 0..g.batch {
            gemm(
                T::one(),
                MatRef::row_major(&dy[b * width..(b + 1) * width], g.masks, g.channels).t(),
                MatRef::row_major(masks, g.masks, g.plane),
                T::zero(),
                MatMut::row_major(&mut dx[b * g.channels * g.plane..][..g.channels * g.plane], g.channels, g.plane),
            );
        }
        dx
    });
    let dm = need.1.then(|| {
        let mut dm = vec![T::zero(); masks.len()];
        for b in 0..g.batch {
            gemm(
                T::one(),
                MatRef::row_major(&dy[b * width..(b + 1) * width], g.masks, g.channels),
                MatRef::row_major(&x[b * g.channels * g.plane..][..g.channels * g.plane], g.channels, g.plane),
                T::one(),
                MatMut::row_major(&mut dm, g.masks, g.plane),
            );
        }
        dm
    });
    (dx, dm)
}

/// Grid arrangement of a flattened SWP output for heatmap rendering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeatmapLayout {
    pub rows: usize,
    pub cols: usize,
}

impl HeatmapLayout {
    /// One row per mask, one column per channel.
    pub fn masks_by_channels(spec: &SwpSpec, channels: usize) -> Self {
        HeatmapLayout {
            rows: spec.num_masks,
            cols: channels,
        }
    }
}

/// Min-max normalises `values` to 8-bit gray levels, lighter meaning larger.
/// A constant vector maps to mid-gray 128.
pub fn heatmap_pixels<T: Scalar>(values: &[T], layout: HeatmapLayout) -> Result<Vec<u8>> {
    if layout.rows * layout.cols != values.len() || values.is_empty() {
        return Err(Error::invalid(alloc::format!(
            "heatmap layout {}x{} does not hold {} values",
            layout.rows,
            layout.cols,
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "heatmap" });
    }
    let lo = values.iter().copied().fold(T::infinity(), T::min).as_f64();
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
    if hi <= lo {
        return Ok(vec![128; values.len()]);
    }
    Ok(values
        .iter()
        .map(|v| {
            let t = (v.as_f64() - lo) / (hi - lo);
            num_traits::Float::round(t * 255.0).clamp(0.0, 255.0) as u8
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_counts() {
        assert_eq!(swp_param_count(&SwpSpec::default()), 441);
        assert_eq!(swp_param_count(&SwpSpec::new(1, 1, 1).unwrap()), 1);
        assert_eq!(swp_param_count(&SwpSpec::new(4, 3, 5).unwrap()), 60);
    }

    #[test]
    fn output_width_full_scale() {
        assert_eq!(SwpSpec::default().output_width(2048), 18432);
    }

    #[test]
    fn zero_masks_rejected() {
        assert!(SwpSpec::new(0, 7, 7).is_err());
        assert!(SwpSpec::new(9, 0, 7).is_err());
    }

    #[test]
    fn heatmap_constant_is_mid_gray() {
        let px = heatmap_pixels(&[0.3f32; 6], HeatmapLayout { rows: 2, cols: 3 }).unwrap();
        assert_eq!(px, vec![128; 6]);
    }

    #[test]
    fn heatmap_endpoints() {
        let px = heatmap_pixels(&[0.0f32, 4.5], HeatmapLayout { rows: 1, cols: 2 }).unwrap();
        assert_eq!(px, vec![0, 255]);
    }

    #[test]
    fn heatmap_layout_mismatch() {
        assert!(heatmap_pixels(&[0.0f32; 5], HeatmapLayout { rows: 2, cols: 3 }).is_err());
    }
}
