//! Train-time augmentation, the eval-time central crop, and bin occupancy.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::binning::{encode_box, BinSpec, BoundingBox};
use crate::image::RgbImage;
use crate::{Error, Result};

/// Geometry of both input transforms.
///
/// Scales are relative to the eval-time normalisation: a train scale of `s`
/// resizes the image so its shorter side is `s * eval_scale`, then crops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    pub crop_size: usize,
    pub eval_scale: usize,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            scale_min: 0.875,
            scale_max: 1.3,
            crop_size: 224,
            eval_scale: 256,
            seed: 0,
        }
    }
}

/// Attempts before giving up on finding a crop that keeps part of the box.
pub const MAX_CROP_ATTEMPTS: usize = 16;

/// Boxes thinner than this after clipping count as cropped out.
pub const MIN_BOX_EXTENT: f64 = 1.0;

impl PreprocessConfig {
    /// Same ratios, rescaled to a different network input size.
    pub fn for_input(input: usize) -> Self {
        let d = Self::default();
        PreprocessConfig {
            crop_size: input,
            eval_scale: (input * d.eval_scale).div_ceil(d.crop_size),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite()) {
            return Err(Error::invalid("need 0 < scale_min <= scale_max"));
        }
        if self.crop_size == 0 || self.eval_scale < self.crop_size {
            return Err(Error::invalid("need 0 < crop_size <= eval_scale"));
        }
        if ((self.eval_scale as f64 * self.scale_min).round() as usize) < self.crop_size {
            return Err(Error::invalid(alloc::format!(
                "crop {} exceeds the smallest rescaled side {}",
                self.crop_size,
                self.eval_scale as f64 * self.scale_min
            )));
        }
        Ok(())
    }
}

/// A scale followed by an integer-offset crop: `p -> p * (sx, sy) - (ox, oy)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropTransform {
    pub sx: f64,
    pub sy: f64,
    pub ox: usize,
    pub oy: usize,
    pub size: usize,
}

impl CropTransform {
    pub fn apply(&self, image: &RgbImage) -> Result<RgbImage> {
        image.resample(self.size, self.size, self.sx, self.sy, self.ox, self.oy)
    }

    /// Box in crop coordinates, unclipped.
    pub fn forward_box(&self, b: &BoundingBox) -> BoundingBox {
        b.transform(self.sx, self.sy, self.ox as f64, self.oy as f64)
    }

    /// Box in crop coordinates clipped to the crop, `None` if cropped out.
    pub fn crop_box(&self, b: &BoundingBox) -> Option<BoundingBox> {
        let s = self.size as f64;
        self.forward_box(b).clip(s, s, MIN_BOX_EXTENT)
    }

    /// Maps a box in crop coordinates back to the source image.
    pub fn inverse_box(&self, b: &BoundingBox) -> BoundingBox {
        BoundingBox {
            cx: (b.cx + self.ox as f64) / self.sx,
            cy: (b.cy + self.oy as f64) / self.sy,
            w: b.w / self.sx,
            h: b.h / self.sy,
        }
    }
}

fn scaled_dims(width: usize, height: usize, shorter: f64) -> (usize, usize, f64, f64) {
    let f = shorter / width.min(height) as f64;
    let nw = ((width as f64 * f).round() as usize).max(1);
    let nh = ((height as f64 * f).round() as usize).max(1);
    (nw, nh, nw as f64 / width as f64, nh as f64 / height as f64)
}

/// Shorter side to `eval_scale`, then the central `crop_size` square.
pub fn eval_transform(width: usize, height: usize, cfg: &PreprocessConfig) -> Result<CropTransform> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::ZeroExtent(vec![height, width]));
    }
    let (nw, nh, sx, sy) = scaled_dims(width, height, cfg.eval_scale as f64);
    Ok(CropTransform {
        sx,
        sy,
        ox: (nw - cfg.crop_size) / 2,
        oy: (nh - cfg.crop_size) / 2,
        size: cfg.crop_size,
    })
}

pub fn preprocess_eval_center(image: &RgbImage, cfg: &PreprocessConfig) -> Result<(RgbImage, CropTransform)> {
    let t = eval_transform(image.width(), image.height(), cfg)?;
    Ok((t.apply(image)?, t))
}

/// Random crop geometry with an explicit scale draw; the offset is uniform
/// over all positions where the crop fits.
pub fn train_transform_at<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    scale: f64,
    cfg: &PreprocessConfig,
    rng: &mut R,
) -> Result<CropTransform> {
    let (nw, nh, sx, sy) = scaled_dims(width, height, scale * cfg.eval_scale as f64);
    if nw < cfg.crop_size || nh < cfg.crop_size {
        return Err(Error::invalid(alloc::format!(
            "rescaled image {nw}x{nh} is smaller than the {} crop",
            cfg.crop_size
        )));
    }
    Ok(CropTransform {
        sx,
        sy,
        ox: rng.random_range(0..=nw - cfg.crop_size),
        oy: rng.random_range(0..=nh - cfg.crop_size),
        size: cfg.crop_size,
    })
}

/// Draws scale and offset until the clipped box keeps at least
/// [`MIN_BOX_EXTENT`] pixels on both axes.
pub fn sample_train_transform<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    bbox: &BoundingBox,
    cfg: &PreprocessConfig,
    rng: &mut R,
) -> Result<(CropTransform, BoundingBox)> {
    cfg.validate()?;
    for _ in 0..MAX_CROP_ATTEMPTS {
        let s = if cfg.scale_max > cfg.scale_min {
            rng.random_range(cfg.scale_min..=cfg.scale_max)
        } else {
            cfg.scale_min
        };
        let t = train_transform_at(width, height, s, cfg, rng)?;
        if let Some(b) = t.crop_box(bbox) {
            return Ok((t, b));
        }
    }
    Err(Error::DegenerateCrop(MAX_CROP_ATTEMPTS))
}

/// Random rescale and crop, with the box carried along and clipped.
pub fn preprocess_train<R: Rng + ?Sized>(
    image: &RgbImage,
    bbox: &BoundingBox,
    cfg: &PreprocessConfig,
    rng: &mut R,
) -> Result<(RgbImage, BoundingBox)> {
    let (t, b) = sample_train_transform(image.width(), image.height(), bbox, cfg, rng)?;
    Ok((t.apply(image)?, b))
}

/// Per-bin counts of the four localisation targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinHistogram {
    pub cx: Vec<u64>,
    pub cy: Vec<u64>,
    pub w: Vec<u64>,
    pub h: Vec<u64>,
}

impl BinHistogram {
    pub fn new(loc: &BinSpec, size: &BinSpec) -> Self {
        BinHistogram {
            cx: vec![0; loc.n_bins],
            cy: vec![0; loc.n_bins],
            w: vec![0; size.n_bins],
            h: vec![0; size.n_bins],
        }
    }

    pub fn outputs(&self) -> [&[u64]; 4] {
        [&self.cx, &self.cy, &self.w, &self.h]
    }
}

/// Which coordinates the histogram is taken in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HistogramView {
    Raw,
    EvalCentre(PreprocessConfig),
    /// One augmentation draw per record, seeded by `seed` and the record index.
    Train(PreprocessConfig),
}

/// Boxes in the chosen view, one per `(width, height, box)` record.
pub fn view_boxes(records: &[(usize, usize, BoundingBox)], view: &HistogramView) -> Result<Vec<BoundingBox>> {
    records
        .iter()
        .enumerate()
        .map(|(i, (w, h, b))| match view {
            HistogramView::Raw => Ok(*b),
            HistogramView::EvalCentre(cfg) => {
                let t = eval_transform(*w, *h, cfg)?;
                t.crop_box(b).ok_or(Error::DegenerateCrop(0))
            }
            HistogramView::Train(cfg) => {
                let mut rng = crate::synth::record_rng(cfg.seed, i as u64);
                sample_train_transform(*w, *h, b, cfg, &mut rng).map(|(_, b)| b)
            }
        })
        .collect()
}

/// Occupancy of each bin for the four targets.
pub fn bin_histogram(boxes: &[BoundingBox], loc: &BinSpec, size: &BinSpec) -> Result<BinHistogram> {
    let mut hist = BinHistogram::new(loc, size);
    for b in boxes {
        let clamped = BoundingBox {
            cx: b.cx.max(0.0),
            cy: b.cy.max(0.0),
            ..*b
        };
        let t = encode_box(&clamped, loc, size)?;
        hist.cx[t.bx] += 1;
        hist.cy[t.by] += 1;
        hist.w[t.bw] += 1;
        hist.h[t.bh] += 1;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_config_is_consistent() {
        PreprocessConfig::default().validate().unwrap();
        let mut bad = PreprocessConfig::default();
        bad.scale_min = 0.8;
        assert!(bad.validate().is_err());
        PreprocessConfig::for_input(112).validate().unwrap();
        assert_eq!(PreprocessConfig::for_input(112).eval_scale, 128);
    }

    #[test]
    fn unit_scale_at_origin_is_identity() {
        let cfg = PreprocessConfig::default();
        let t = CropTransform {
            sx: 1.0,
            sy: 1.0,
            ox: 0,
            oy: 0,
            size: cfg.crop_size,
        };
        let b = BoundingBox::new(60.0, 70.0, 40.0, 30.0).unwrap();
        assert_eq!(t.forward_box(&b), b);
        assert_eq!(t.inverse_box(&b), b);
    }

    #[test]
    fn double_scale_doubles_box() {
        let t = CropTransform {
            sx: 2.0,
            sy: 2.0,
            ox: 0,
            oy: 0,
            size: 224,
        };
        let b = BoundingBox::new(30.0, 40.0, 20.0, 10.0).unwrap();
        assert_eq!(t.forward_box(&b), BoundingBox::new(60.0, 80.0, 40.0, 20.0).unwrap());
    }

    #[test]
    fn eval_centre_of_square_canvas() {
        let cfg = PreprocessConfig::default();
        let t = eval_transform(256, 256, &cfg).unwrap();
        assert_eq!((t.sx, t.ox, t.oy), (1.0, 16, 16));
        let wide = eval_transform(512, 256, &cfg).unwrap();
        assert_eq!((wide.sx, wide.sy, wide.ox, wide.oy), (1.0, 1.0, 144, 16));
    }

    #[test]
    fn cropped_out_box_is_resampled_then_fails() {
        let cfg = PreprocessConfig {
            scale_min: 1.3,
            scale_max: 1.3,
            ..PreprocessConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // A box in the far corner survives only some crops.
        let corner = BoundingBox::from_corners(0.0, 0.0, 60.0, 60.0).unwrap();
        let (_, b) = sample_train_transform(256, 256, &corner, &cfg, &mut rng).unwrap();
        assert!(b.w >= MIN_BOX_EXTENT);
        let tiny = BoundingBox::from_corners(0.0, 0.0, 0.1, 0.1).unwrap();
        assert_eq!(
            sample_train_transform(256, 256, &tiny, &cfg, &mut rng),
            Err(Error::DegenerateCrop(MAX_CROP_ATTEMPTS))
        );
    }

    #[test]
    fn histogram_conservation_and_overflow() {
        let (loc, size) = (BinSpec::location(7.0), BinSpec::size(7.0));
        let boxes = vec![BoundingBox::new(50.0, 50.0, 300.0, 20.0).unwrap(); 5];
        let h = bin_histogram(&boxes, &loc, &size).unwrap();
        for out in h.outputs() {
            assert_eq!(out.iter().sum::<u64>(), 5);
            assert_eq!(out.iter().filter(|&&c| c > 0).count(), 1);
        }
        assert_eq!(h.w[39], 5);
    }
}
