//! How a sample becomes a network input.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::binning::{enlarge_box, BoundingBox};
use crate::image::{crop_to_box, resize_largest_side, write_planar, RgbImage};
use crate::preprocess::{preprocess_eval_center, preprocess_train, PreprocessConfig};
use crate::synth::{record_rng, Sample};
use crate::{Error, Result, Scalar, Tensor};

/// Box enlargement applied before cropping for the second stage.
pub const BOX_ENLARGE: f64 = 1.10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum View {
    /// Random rescale and crop, redrawn every epoch.
    Augment(PreprocessConfig),
    /// Deterministic eval rescale and central crop.
    CentralCrop(PreprocessConfig),
    /// Ground-truth box enlarged by `enlarge`, cropped and letterboxed to
    /// `size`. With `jitter > 0` each draw shifts the centre by up to
    /// `jitter` times the box extent and rescales each extent by up to
    /// `1 +- jitter`, mimicking localisation error.
    BoxCrop { enlarge: f64, size: usize, jitter: f64 },
}

impl View {
    pub fn input_size(&self) -> usize {
        match self {
            View::Augment(c) | View::CentralCrop(c) => c.crop_size,
            View::BoxCrop { size, .. } => *size,
        }
    }

    /// Same output for every draw.
    pub fn is_deterministic(&self) -> bool {
        match self {
            View::Augment(_) => false,
            View::CentralCrop(_) => true,
            View::BoxCrop { jitter, .. } => *jitter == 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            View::Augment(_) => "augment",
            View::CentralCrop(_) => "central-crop",
            View::BoxCrop { .. } => "box-crop",
        }
    }
}

/// A rendered input and, where meaningful, the box in its frame.
pub struct Rendered {
    pub image: RgbImage,
    pub bbox: Option<BoundingBox>,
}

/// Renders sample `index` for draw `draw` (the epoch, for augmentation).
pub fn render(sample: &Sample, index: usize, draw: u64, view: &View) -> Result<Rendered> {
    match view {
        View::Augment(cfg) => {
            let mut rng = record_rng(cfg.seed ^ draw.wrapping_mul(0x9E37_79B9_7F4A_7C15), index as u64);
            let (image, b) = preprocess_train(&sample.image, &sample.bbox, cfg, &mut rng)?;
            Ok(Rendered { image, bbox: Some(b) })
        }
        View::CentralCrop(cfg) => {
            let (image, t) = preprocess_eval_center(&sample.image, cfg)?;
            Ok(Rendered {
                image,
                bbox: t.crop_box(&sample.bbox),
            })
        }
        View::BoxCrop { enlarge, size, jitter } => {
            let mut b = sample.bbox;
            if *jitter > 0.0 {
                let mut rng = record_rng(draw.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ 0xB0C5, index as u64);
                let mut u = || rng.random_range(-*jitter..=*jitter);
                b = BoundingBox {
                    cx: b.cx + u() * b.w,
                    cy: b.cy + u() * b.h,
                    w: b.w * (1.0 + u()),
                    h: b.h * (1.0 + u()),
                };
            }
            Ok(Rendered {
                image: box_crop(&sample.image, &b, *enlarge, *size)?,
                bbox: None,
            })
        }
    }
}

/// Crops `bbox` enlarged by `enlarge` and letterboxes it to `size`.
pub fn box_crop(image: &RgbImage, bbox: &BoundingBox, enlarge: f64, size: usize) -> Result<RgbImage> {
    let crop = crop_to_box(image, &enlarge_box(bbox, enlarge))?;
    resize_largest_side(&crop, size)
}

/// Planar inputs for deterministic views, rendered once.
pub struct InputCache<T> {
    size: usize,
    data: Vec<T>,
    boxes: Vec<Option<BoundingBox>>,
}

impl<T: Scalar> InputCache<T> {
    pub fn build(samples: &[Sample], view: &View) -> Result<Self> {
        if !view.is_deterministic() {
            return Err(Error::invalid("only deterministic views can be cached"));
        }
        let size = view.input_size();
        let plane = 3 * size * size;
        let mut data = vec![T::zero(); plane * samples.len()];
        let mut boxes = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let r = render(s, i, 0, view)?;
            write_planar(&r.image, &mut data[i * plane..(i + 1) * plane]);
            boxes.push(r.bbox);
        }
        Ok(InputCache { size, data, boxes })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn bbox(&self, i: usize) -> Option<BoundingBox> {
        self.boxes[i]
    }

    /// Gathers `indices` into a `[B, 3, S, S]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let plane = 3 * self.size * self.size;
        let mut out = Vec::with_capacity(plane * indices.len());
        for &i in indices {
            out.extend_from_slice(&self.data[i * plane..(i + 1) * plane]);
        }
        Tensor::from_vec(&[indices.len(), 3, self.size, self.size], out)
    }
}

/// Where batches come from: a cache, or fresh renders per draw.
pub enum Source<'s, T> {
    Cached(InputCache<T>),
    Live { samples: &'s [Sample], view: View },
}

impl<'s, T: Scalar> Source<'s, T> {
    pub fn new(samples: &'s [Sample], view: &View) -> Result<Self> {
        if view.is_deterministic() {
            Ok(Source::Cached(InputCache::build(samples, view)?))
        } else {
            Ok(Source::Live { samples, view: *view })
        }
    }

    /// Batch tensor and per-sample boxes in the input frame.
    pub fn batch(&self, indices: &[usize], draw: u64) -> Result<(Tensor<T>, Vec<Option<BoundingBox>>)> {
        match self {
            Source::Cached(c) => Ok((c.batch(indices)?, indices.iter().map(|&i| c.bbox(i)).collect())),
            Source::Live { samples, view } => {
                let size = view.input_size();
                let plane = 3 * size * size;
                let mut data = vec![T::zero(); plane * indices.len()];
                let mut boxes = Vec::with_capacity(indices.len());
                for (k, &i) in indices.iter().enumerate() {
                    let r = render(&samples[i], i, draw, view)?;
                    write_planar(&r.image, &mut data[k * plane..(k + 1) * plane]);
                    boxes.push(r.bbox);
                }
                Ok((Tensor::from_vec(&[indices.len(), 3, size, size], data)?, boxes))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SynthConfig};

    fn samples() -> Vec<Sample> {
        generate_dataset(&SynthConfig::new(2, 2, 96, 5)).unwrap()
    }

    #[test]
    fn cache_matches_live_render() {
        let s = samples();
        let view = View::CentralCrop(PreprocessConfig::for_input(64));
        let cached = Source::<f32>::new(&s, &view).unwrap();
        let live = Source::<f32>::Live { samples: &s, view };
        let (a, ba) = cached.batch(&[3, 1], 7).unwrap();
        let (b, bb) = live.batch(&[3, 1], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(ba, bb);
        assert_eq!(a.shape(), &[2, 3, 64, 64]);
    }

    #[test]
    fn augment_changes_with_draw_only() {
        let s = samples();
        let view = View::Augment(PreprocessConfig::for_input(64));
        let src = Source::<f32>::new(&s, &view).unwrap();
        let (a, _) = src.batch(&[0], 1).unwrap();
        let (b, _) = src.batch(&[0], 1).unwrap();
        let (c, _) = src.batch(&[0], 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn box_crop_is_square_input() {
        let s = samples();
        let r = render(&s[0], 0, 0, &View::BoxCrop { enlarge: BOX_ENLARGE, size: 48, jitter: 0.0 }).unwrap();
        assert_eq!((r.image.width(), r.image.height()), (48, 48));
        assert!(r.bbox.is_none());
    }
}
