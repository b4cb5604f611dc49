//! 8-bit RGB rasters and the resampling used by the input pipeline.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::binning::BoundingBox;
use crate::{Error, Result, Scalar, Tensor};

/// Interleaved 8-bit RGB image, row-major from the top-left.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    /// A black image.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroExtent(vec![height, width]));
        }
        Ok(RgbImage {
            width,
            height,
            data: rgb.iter().copied().cycle().take(width * height * 3).collect(),
        })
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroExtent(vec![height, width]));
        }
        if data.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                shape: vec![height, width, 3],
                len: data.len(),
            });
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy of the rectangle at `(x0, y0)`; the rectangle must lie inside.
    pub fn sub_image(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<RgbImage> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::invalid("sub-image outside the source"));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        RgbImage::from_raw(w, h, data)
    }

    /// Bilinear resize to `out_w x out_h`; same size returns a copy.
    pub fn resize(&self, out_w: usize, out_h: usize) -> Result<RgbImage> {
        if out_w == self.width && out_h == self.height {
            return Ok(self.clone());
        }
        let sx = out_w as f64 / self.width as f64;
        let sy = out_h as f64 / self.height as f64;
        self.resample(out_w, out_h, sx, sy, 0, 0)
    }

    /// Window `out_w x out_h` at integer offset `(ox, oy)` of this image
    /// scaled by `(sx, sy)`, sampled bilinearly with half-pixel centres and
    /// edge clamping.
    pub fn resample(&self, out_w: usize, out_h: usize, sx: f64, sy: f64, ox: usize, oy: usize) -> Result<RgbImage> {
        if out_w == 0 || out_h == 0 {
            return Err(Error::ZeroExtent(vec![out_h, out_w]));
        }
        if !(sx > 0.0 && sy > 0.0) {
            return Err(Error::invalid("resample scale must be positive"));
        }
        let taps = |n_out: usize, off: usize, s: f64, n_in: usize| -> Vec<(usize, usize, f32)> {
            (0..n_out)
                .map(|i| {
                    let src = ((i + off) as f64 + 0.5) / s - 0.5;
                    let src = src.clamp(0.0, (n_in - 1) as f64);
                    let lo = src.floor() as usize;
                    let hi = (lo + 1).min(n_in - 1);
                    (lo, hi, (src - lo as f64) as f32)
                })
                .collect()
        };
        let xs = taps(out_w, ox, sx, self.width);
        let ys = taps(out_h, oy, sy, self.height);
        let mut data = vec![0u8; out_w * out_h * 3];
        let stride = self.width * 3;
        for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
            let (r0, r1) = (&self.data[y0 * stride..][..stride], &self.data[y1 * stride..][..stride]);
            let out_row = &mut data[y * out_w * 3..][..out_w * 3];
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                for c in 0..3 {
                    let top = r0[x0 * 3 + c] as f32 * (1.0 - fx) + r0[x1 * 3 + c] as f32 * fx;
                    let bot = r1[x0 * 3 + c] as f32 * (1.0 - fx) + r1[x1 * 3 + c] as f32 * fx;
                    out_row[x * 3 + c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        RgbImage::from_raw(out_w, out_h, data)
    }

    /// Pastes `src` with its top-left corner at `(x0, y0)`, clipping at the
    /// edges.
    pub fn paste(&mut self, src: &RgbImage, x0: usize, y0: usize) {
        let w = src.width.min(self.width.saturating_sub(x0));
        let h = src.height.min(self.height.saturating_sub(y0));
        for y in 0..h {
            let d = ((y0 + y) * self.width + x0) * 3;
            let s = y * src.width * 3;
            self.data[d..d + w * 3].copy_from_slice(&src.data[s..s + w * 3]);
        }
    }
}

/// Pixel rectangle `(x0, y0, w, h)` covered by `bbox`, rounded outward and
/// intersected with a `width x height` image.
pub fn box_pixel_rect(bbox: &BoundingBox, width: usize, height: usize) -> Result<(usize, usize, usize, usize)> {
    let x0 = bbox.x0().floor().max(0.0);
    let y0 = bbox.y0().floor().max(0.0);
    let x1 = bbox.x1().ceil().min(width as f64);
    let y1 = bbox.y1().ceil().min(height as f64);
    if !(x1 > x0 && y1 > y0) {
        return Err(Error::EmptyIntersection);
    }
    Ok((x0 as usize, y0 as usize, (x1 - x0) as usize, (y1 - y0) as usize))
}

/// The image region under `bbox`, rounded outward to whole pixels.
pub fn crop_to_box(image: &RgbImage, bbox: &BoundingBox) -> Result<RgbImage> {
    let (x0, y0, w, h) = box_pixel_rect(bbox, image.width(), image.height())?;
    image.sub_image(x0, y0, w, h)
}

/// Where [`resize_largest_side`] placed the content inside the square.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Letterbox {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
    pub scale: f64,
}

pub fn letterbox_geometry(width: usize, height: usize, target: usize) -> Letterbox {
    let scale = target as f64 / width.max(height) as f64;
    let w = ((width as f64 * scale).round() as usize).clamp(1, target);
    let h = ((height as f64 * scale).round() as usize).clamp(1, target);
    Letterbox {
        x0: (target - w) / 2,
        y0: (target - h) / 2,
        w,
        h,
        scale,
    }
}

/// Aspect-preserving resize so the longer side equals `target`, centred on
/// a black `target x target` square.
pub fn resize_largest_side(image: &RgbImage, target: usize) -> Result<RgbImage> {
    let g = letterbox_geometry(image.width(), image.height(), target);
    let content = image.resize(g.w, g.h)?;
    if g.w == target && g.h == target {
        return Ok(content);
    }
    let mut out = RgbImage::new(target, target)?;
    out.paste(&content, g.x0, g.y0);
    Ok(out)
}

/// Writes `image` as planar `[3, H, W]` values in `[0, 1]`.
pub fn write_planar<T: Scalar>(image: &RgbImage, out: &mut [T]) {
    let plane = image.width * image.height;
    debug_assert_eq!(out.len(), plane * 3);
    let lut: Vec<T> = (0..256).map(|v| T::lit(v as f64 / 255.0)).collect();
    for (i, px) in image.data.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = lut[px[c] as usize];
        }
    }
}

/// Stacks same-sized images into a `[B, 3, H, W]` tensor.
pub fn to_tensor<T: Scalar>(images: &[&RgbImage]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::ZeroExtent(vec![0]))?;
    let (w, h) = (first.width, first.height);
    if images.iter().any(|im| im.width != w || im.height != h) {
        return Err(Error::invalid("batched images must share one size"));
    }
    let mut data = vec![T::zero(); images.len() * 3 * w * h];
    for (im, chunk) in images.iter().zip(data.chunks_exact_mut(3 * w * h)) {
        write_planar(im, chunk);
    }
    Tensor::from_vec(&[images.len(), 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> RgbImage {
        let data = (0..w * h * 3).map(|i| (i * 7 % 251) as u8).collect();
        RgbImage::from_raw(w, h, data).unwrap()
    }

    #[test]
    fn crop_whole_image() {
        let im = ramp(6, 4);
        let b = BoundingBox::from_corners(0.0, 0.0, 6.0, 4.0).unwrap();
        assert_eq!(crop_to_box(&im, &b).unwrap(), im);
    }

    #[test]
    fn crop_centre_block() {
        let im = ramp(4, 4);
        let b = BoundingBox::new(2.0, 2.0, 2.0, 2.0).unwrap();
        let c = crop_to_box(&im, &b).unwrap();
        assert_eq!((c.width(), c.height()), (2, 2));
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(c.pixel(x, y), im.pixel(x + 1, y + 1));
            }
        }
    }

    #[test]
    fn crop_outside_errors() {
        let im = ramp(4, 4);
        let b = BoundingBox::new(20.0, 20.0, 2.0, 2.0).unwrap();
        assert_eq!(crop_to_box(&im, &b), Err(Error::EmptyIntersection));
    }

    #[test]
    fn crop_rounds_outward() {
        let im = ramp(10, 10);
        let b = BoundingBox::from_corners(1.5, 2.2, 4.1, 5.0).unwrap();
        let c = crop_to_box(&im, &b).unwrap();
        assert_eq!((c.width(), c.height()), (4, 3));
        assert_eq!(c.pixel(0, 0), im.pixel(1, 2));
    }

    #[test]
    fn letterbox_wide() {
        let g = letterbox_geometry(448, 224, 224);
        assert_eq!((g.w, g.h, g.x0, g.y0), (224, 112, 0, 56));
        let im = RgbImage::filled(448, 224, [200, 100, 50]).unwrap();
        let out = resize_largest_side(&im, 224).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
        assert_eq!(out.pixel(10, 10), [0, 0, 0]);
        assert_eq!(out.pixel(10, 120), [200, 100, 50]);
    }

    #[test]
    fn letterbox_identity_and_upscale() {
        let im = ramp(224, 224);
        assert_eq!(resize_largest_side(&im, 224).unwrap(), im);
        let small = ramp(10, 10);
        let up = resize_largest_side(&small, 224).unwrap();
        assert_eq!((up.width(), up.height()), (224, 224));
        assert_eq!(up.pixel(0, 0), small.pixel(0, 0));
    }

    #[test]
    fn downscale_by_two_averages_pairs() {
        let mut im = RgbImage::new(4, 2).unwrap();
        for x in 0..4 {
            for y in 0..2 {
                im.put_pixel(x, y, [(x * 20) as u8, 0, 0]);
            }
        }
        let half = im.resize(2, 1).unwrap();
        assert_eq!(half.pixel(0, 0)[0], 10);
        assert_eq!(half.pixel(1, 0)[0], 50);
    }

    #[test]
    fn planar_tensor() {
        let mut im = RgbImage::new(2, 1).unwrap();
        im.put_pixel(1, 0, [255, 51, 0]);
        let t = to_tensor::<f32>(&[&im]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 0.2, 0.0, 0.0]);
    }
}
