//! Synthetic "vehicle" glyphs with class labels and exact boxes.
//!
//! A glyph is a body slab spanning its box, a cabin touching the top edge and
//! two wheels touching the bottom edge. Classes differ in four normalised
//! parameters (body aspect, cabin offset, wheel radius, body intensity), each
//! quantised to `r = floor(1/margin) + 1` levels so any two classes differ by
//! at least `margin` in some parameter.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binning::{BinSpec, BoundingBox};
use crate::image::RgbImage;
use crate::preprocess::{eval_transform, PreprocessConfig};
use crate::{Error, Result};

/// The deterministic stream for record `index` under `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Rendering parameters of one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlyphClassSpec {
    pub class_id: usize,
    /// Body width over glyph height.
    pub aspect: f64,
    /// Cabin centre as a fraction of the glyph width.
    pub cabin_offset: f64,
    /// Wheel radius as a fraction of the glyph height.
    pub wheel_radius: f64,
    pub intensity: u8,
    /// The four normalised parameters in `[0, 1]`.
    pub levels: [f64; 4],
}

impl GlyphClassSpec {
    /// Number of levels per parameter for `margin`.
    pub fn radix(margin: f64) -> Result<usize> {
        if !(margin > 0.0 && margin <= 1.0) {
            return Err(Error::invalid("similarity margin must lie in (0, 1]"));
        }
        Ok((1.0 / margin).floor() as usize + 1)
    }

    /// Largest class count representable at `margin`.
    pub fn capacity(margin: f64) -> Result<usize> {
        Ok(Self::radix(margin)?.saturating_pow(4))
    }

    /// Class `id`: base-`r` digits mixed by `e_i = d_i + sum_{j<i} d_j (mod r)`,
    /// a bijection that spreads consecutive ids over several parameters.
    pub fn for_class(id: usize, margin: f64) -> Result<Self> {
        let r = Self::radix(margin)?;
        if id >= Self::capacity(margin)? {
            return Err(Error::invalid(alloc::format!("class {id} exceeds the {} distinct glyphs at margin {margin}", r.pow(4))));
        }
        let mut digits = [0usize; 4];
        let mut rest = id;
        for d in digits.iter_mut() {
            *d = rest % r;
            rest /= r;
        }
        let mut levels = [0.0; 4];
        let mut prefix = 0;
        for i in 0..4 {
            let e = (digits[i] + prefix) % r;
            prefix += digits[i];
            levels[i] = e as f64 / (r - 1) as f64;
        }
        Ok(GlyphClassSpec {
            class_id: id,
            aspect: 1.5 + levels[0],
            cabin_offset: 0.3 + 0.4 * levels[1],
            wheel_radius: 0.14 + 0.12 * levels[2],
            intensity: (120.0 + 130.0 * levels[3]).round() as u8,
            levels,
        })
    }

    fn colours(&self) -> ([u8; 3], [u8; 3], [u8; 3]) {
        let i = self.intensity as f64;
        let body = [i as u8, (i * 0.8) as u8, (i * 0.55) as u8];
        let cabin = [(i * 0.6) as u8, (i * 0.75) as u8, (i * 0.95).min(255.0) as u8];
        (body, cabin, [24, 24, 28])
    }

    /// Paints the glyph into the integer box `[x0, x0+w) x [y0, y0+h)` and
    /// returns the painted pixel coordinates.
    pub fn render(&self, image: &mut RgbImage, x0: usize, y0: usize, w: usize, h: usize) -> Vec<(usize, usize)> {
        let (body, cabin, wheel) = self.colours();
        let (wf, hf) = (w as f64, h as f64);
        let radius = (self.wheel_radius * hf).max(1.0);
        let body_top = 0.42 * hf;
        let body_bottom = (hf - radius).max(body_top + 1.0);
        let cabin_w = 0.45 * wf;
        let cabin_x0 = (self.cabin_offset * wf - cabin_w / 2.0).clamp(0.0, wf - cabin_w);
        let wheel_xs = [(0.2 * wf).max(radius), (0.8 * wf).min(wf - radius)];
        let wheel_y = hf - radius;
        let mut painted = Vec::new();
        for py in 0..h {
            for px in 0..w {
                let (fx, fy) = (px as f64 + 0.5, py as f64 + 0.5);
                let in_wheel = wheel_xs
                    .iter()
                    .any(|&cx| (fx - cx).powi(2) + (fy - wheel_y).powi(2) <= radius * radius);
                let colour = if in_wheel {
                    Some(wheel)
                } else if fy >= body_top && fy < body_bottom {
                    Some(body)
                } else if fy < body_top && fx >= cabin_x0 && fx < cabin_x0 + cabin_w {
                    Some(cabin)
                } else {
                    None
                };
                if let Some(c) = colour {
                    image.put_pixel(x0 + px, y0 + py, c);
                    painted.push((x0 + px, y0 + py));
                }
            }
        }
        painted
    }
}

/// How glyph boxes are placed on the canvas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Placement {
    /// Glyph width a uniform fraction of the eval crop, position uniform
    /// inside it.
    Jittered { min_frac: f64, max_frac: f64 },
    /// Centre and both extents near bin midpoints in eval-crop coordinates
    /// (within half a pixel), with width and height drawn independently.
    BinAligned { bin_size: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub per_class: usize,
    /// Square canvas side in pixels.
    pub canvas: usize,
    pub margin: f64,
    pub seed: u64,
    pub placement: Placement,
    /// Eval geometry the glyph must stay inside.
    pub frame: PreprocessConfig,
    pub clutter: usize,
    pub noise: u8,
}

impl SynthConfig {
    pub const DEFAULT_MARGIN: f64 = 0.25;

    pub fn new(n_classes: usize, per_class: usize, canvas: usize, seed: u64) -> Self {
        let input = canvas * 7 / 8;
        SynthConfig {
            n_classes,
            per_class,
            canvas,
            margin: Self::DEFAULT_MARGIN,
            seed,
            placement: Placement::Jittered {
                min_frac: 0.35,
                max_frac: 0.7,
            },
            frame: PreprocessConfig::for_input(input),
            clutter: 6,
            noise: 6,
        }
    }

    pub fn len(&self) -> usize {
        self.n_classes * self.per_class
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if self.per_class == 0 {
            return Err(Error::invalid("need at least one image per class"));
        }
        if self.n_classes > GlyphClassSpec::capacity(self.margin)? {
            return Err(Error::invalid(alloc::format!(
                "{} classes exceed the {} distinct glyphs at margin {}",
                self.n_classes,
                GlyphClassSpec::capacity(self.margin)?,
                self.margin
            )));
        }
        self.frame.validate()?;
        let (lo, hi) = self.safe_region()?;
        let room = hi - lo;
        let needed = match self.placement {
            Placement::Jittered { min_frac, max_frac } => {
                if !(min_frac > 0.0 && min_frac <= max_frac && max_frac <= 1.0) {
                    return Err(Error::invalid("need 0 < min_frac <= max_frac <= 1"));
                }
                min_frac * room
            }
            Placement::BinAligned { bin_size } => {
                if !(bin_size > 0.0) {
                    return Err(Error::invalid("bin size must be positive"));
                }
                4.0 * bin_size
            }
        };
        if needed < MIN_GLYPH {
            return Err(Error::invalid(alloc::format!(
                "canvas {} too small: glyph would be under {MIN_GLYPH} px",
                self.canvas
            )));
        }
        Ok(())
    }

    /// Raw-canvas interval `[lo, hi)` covered by the eval crop, per axis.
    fn safe_region(&self) -> Result<(f64, f64)> {
        let t = eval_transform(self.canvas, self.canvas, &self.frame)?;
        let lo = (t.ox as f64 / t.sx).ceil();
        let hi = (((t.ox + t.size) as f64) / t.sx).floor().min(self.canvas as f64);
        Ok((lo, hi))
    }
}

const MIN_GLYPH: f64 = 12.0;

/// One rendered record.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub class: usize,
    /// Tight bounds of the painted glyph.
    pub bbox: BoundingBox,
}

/// Integer glyph rectangle `(x0, y0, w, h)` on the canvas.
fn place<R: Rng>(cfg: &SynthConfig, spec: &GlyphClassSpec, rng: &mut R) -> Result<(usize, usize, usize, usize)> {
    let (lo, hi) = cfg.safe_region()?;
    let room = hi - lo;
    match cfg.placement {
        Placement::Jittered { min_frac, max_frac } => {
            let frac = if max_frac > min_frac { rng.random_range(min_frac..max_frac) } else { min_frac };
            let w = (frac * room).round().max(MIN_GLYPH);
            let h = (w / spec.aspect).round().max(MIN_GLYPH / 2.0);
            let x0 = lo + rng.random_range(0.0..=room - w).floor();
            let y0 = lo + rng.random_range(0.0..=room - h).floor();
            Ok((x0 as usize, y0 as usize, w as usize, h as usize))
        }
        Placement::BinAligned { bin_size } => {
            let t = eval_transform(cfg.canvas, cfg.canvas, &cfg.frame)?;
            let crop = t.size as f64;
            let (loc, size) = (BinSpec::location(bin_size), BinSpec::size(bin_size));
            let mid = |b: usize, s: &BinSpec| b as f64 * s.bin_size + s.bin_size / 2.0;
            let fits = |b: usize, s: &BinSpec| {
                let v = mid(b, s);
                v >= MIN_GLYPH && v <= 0.75 * crop && b < s.n_bins
            };
            let size_bins: Vec<usize> = (0..size.n_bins).filter(|&b| fits(b, &size)).collect();
            if size_bins.is_empty() {
                return Err(Error::invalid("no size bin fits inside the eval crop"));
            }
            let axis = |rng: &mut R| -> Result<(f64, f64)> {
                let extent = mid(size_bins[rng.random_range(0..size_bins.len())], &size);
                let ext = (extent + rng.random_range(-0.5..=0.5)).round();
                let centres: Vec<usize> = (0..loc.n_bins)
                    .filter(|&b| {
                        let c = mid(b, &loc);
                        c - ext / 2.0 >= 1.0 && c + ext / 2.0 <= crop - 1.0
                    })
                    .collect();
                if centres.is_empty() {
                    return Err(Error::invalid("no location bin keeps the glyph inside the crop"));
                }
                let c = mid(centres[rng.random_range(0..centres.len())], &loc);
                // Integer corner in crop coordinates, then back to the canvas.
                let start = (c - ext / 2.0 + rng.random_range(-0.25..=0.25)).round();
                Ok((start, ext))
            };
            let (cx0, w) = axis(rng)?;
            let (cy0, h) = axis(rng)?;
            let to_raw = |v: f64, o: usize, s: f64| ((v + o as f64) / s).round();
            let x0 = to_raw(cx0, t.ox, t.sx);
            let y0 = to_raw(cy0, t.oy, t.sy);
            Ok((x0 as usize, y0 as usize, (w / t.sx).round() as usize, (h / t.sy).round() as usize))
        }
    }
}

fn paint_background<R: Rng>(image: &mut RgbImage, cfg: &SynthConfig, rng: &mut R) {
    let n = cfg.canvas;
    let base: u8 = rng.random_range(35..=80);
    *image = RgbImage::filled(n, n, [base, base, base.saturating_add(6)]).expect("non-empty canvas");
    for _ in 0..cfg.clutter {
        let w = rng.random_range(n / 20..=n / 4).max(1);
        let h = rng.random_range(n / 20..=n / 4).max(1);
        let x0 = rng.random_range(0..=n - w);
        let y0 = rng.random_range(0..=n - h);
        let c = [rng.random_range(10..=100), rng.random_range(10..=100), rng.random_range(10..=100)];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                image.put_pixel(x, y, c);
            }
        }
    }
}

fn add_noise<R: Rng>(image: &mut RgbImage, amplitude: u8, rng: &mut R) {
    if amplitude == 0 {
        return;
    }
    let a = amplitude as i16;
    let (w, h) = (image.width(), image.height());
    for y in 0..h {
        for x in 0..w {
            let mut p = image.pixel(x, y);
            for v in p.iter_mut() {
                *v = (*v as i16 + rng.random_range(-a..=a)).clamp(0, 255) as u8;
            }
            image.put_pixel(x, y, p);
        }
    }
}

/// Renders record `index` and also returns the painted glyph pixels.
pub fn generate_sample_with_mask(cfg: &SynthConfig, index: usize) -> Result<(Sample, Vec<(usize, usize)>)> {
    let class = index / cfg.per_class;
    if class >= cfg.n_classes {
        return Err(Error::invalid(alloc::format!("record {index} beyond the {} generated", cfg.len())));
    }
    let spec = GlyphClassSpec::for_class(class, cfg.margin)?;
    let mut rng = record_rng(cfg.seed, index as u64);
    let (x0, y0, w, h) = place(cfg, &spec, &mut rng)?;
    if w == 0 || h == 0 || x0 + w > cfg.canvas || y0 + h > cfg.canvas {
        return Err(Error::invalid(alloc::format!("glyph does not fit on a {} canvas", cfg.canvas)));
    }
    let mut image = RgbImage::new(cfg.canvas, cfg.canvas)?;
    paint_background(&mut image, cfg, &mut rng);
    let mask = spec.render(&mut image, x0, y0, w, h);
    add_noise(&mut image, cfg.noise, &mut rng);
    let (mut bx0, mut by0, mut bx1, mut by1) = (usize::MAX, usize::MAX, 0, 0);
    for &(x, y) in &mask {
        bx0 = bx0.min(x);
        by0 = by0.min(y);
        bx1 = bx1.max(x + 1);
        by1 = by1.max(y + 1);
    }
    let bbox = BoundingBox::from_corners(bx0 as f64, by0 as f64, bx1 as f64, by1 as f64)?;
    Ok((Sample { image, class, bbox }, mask))
}

pub fn generate_sample(cfg: &SynthConfig, index: usize) -> Result<Sample> {
    generate_sample_with_mask(cfg, index).map(|(s, _)| s)
}

/// All `n_classes * per_class` records, class-major.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..cfg.len()).map(|i| generate_sample(cfg, i)).collect()
}

/// Keeps records whose class is in `ids`, relabelled densely in the order
/// given. Returns the records and the `(old, new)` mapping.
pub fn subset_classes<R: Clone>(
    records: &[R],
    class_of: impl Fn(&R) -> usize,
    relabel: impl Fn(&mut R, usize),
    ids: &[usize],
) -> Result<(Vec<R>, Vec<(usize, usize)>)> {
    if ids.is_empty() {
        return Err(Error::invalid("empty class selection"));
    }
    let mut mapping = Vec::with_capacity(ids.len());
    for (new, &old) in ids.iter().enumerate() {
        if mapping.iter().any(|&(o, _)| o == old) {
            return Err(Error::invalid(alloc::format!("class {old} selected twice")));
        }
        if !records.iter().any(|r| class_of(r) == old) {
            return Err(Error::invalid(alloc::format!("class {old} not present")));
        }
        mapping.push((old, new));
    }
    let out = records
        .iter()
        .filter_map(|r| {
            let new = mapping.iter().find(|&&(o, _)| o == class_of(r))?.1;
            let mut r = r.clone();
            relabel(&mut r, new);
            Some(r)
        })
        .collect();
    Ok((out, mapping))
}

/// `subset_classes` for in-memory samples.
pub fn subset_samples(samples: &[Sample], ids: &[usize]) -> Result<(Vec<Sample>, Vec<(usize, usize)>)> {
    subset_classes(samples, |s| s.class, |s, c| s.class = c, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_are_separated_by_margin() {
        let margin = 0.25;
        let specs: Vec<_> = (0..40).map(|c| GlyphClassSpec::for_class(c, margin).unwrap()).collect();
        for (i, a) in specs.iter().enumerate() {
            for b in &specs[i + 1..] {
                let gap = a.levels.iter().zip(&b.levels).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(gap >= margin - 1e-12, "{a:?} vs {b:?}");
            }
        }
        assert_eq!(GlyphClassSpec::capacity(margin).unwrap(), 625);
        assert!(GlyphClassSpec::for_class(625, margin).is_err());
    }

    #[test]
    fn one_class_rejected() {
        assert!(generate_dataset(&SynthConfig::new(1, 5, 128, 0)).is_err());
        assert!(generate_dataset(&SynthConfig::new(2, 0, 128, 0)).is_err());
    }

    #[test]
    fn tiny_canvas_rejected() {
        assert!(SynthConfig::new(4, 1, 16, 0).validate().is_err());
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::new(3, 2, 96, 7);
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let other = SynthConfig { seed: 8, ..cfg };
        assert_ne!(generate_dataset(&cfg).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn box_is_tight_around_glyph() {
        let cfg = SynthConfig::new(4, 3, 128, 3);
        for i in 0..cfg.len() {
            let (s, mask) = generate_sample_with_mask(&cfg, i).unwrap();
            assert!(mask.iter().all(|&(x, y)| s.bbox.contains_pixel(x, y)));
            assert_eq!(s.bbox.x0(), mask.iter().map(|p| p.0).min().unwrap() as f64);
            assert_eq!(s.bbox.y1(), (mask.iter().map(|p| p.1).max().unwrap() + 1) as f64);
            assert_eq!(s.class, i / 3);
        }
    }

    #[test]
    fn bin_aligned_boxes_sit_near_bin_centres() {
        let mut cfg = SynthConfig::new(2, 20, 128, 5);
        cfg.placement = Placement::BinAligned { bin_size: 3.5 };
        let t = eval_transform(128, 128, &cfg.frame).unwrap();
        for s in generate_dataset(&cfg).unwrap() {
            let b = t.forward_box(&s.bbox);
            for v in [b.cx, b.cy, b.w, b.h] {
                let off = v / 3.5 - (v / 3.5).floor();
                assert!((0.15..=0.85).contains(&off), "{v} in {b:?}");
            }
        }
    }
}
