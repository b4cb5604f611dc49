//! Boxes as four bin indices, and box geometry.

use crate::{Error, Result};

/// Half-open bins `[b*size, (b+1)*size)` starting at zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinSpec {
    pub n_bins: usize,
    pub bin_size: f64,
}

impl BinSpec {
    pub const DEFAULT_BIN_SIZE: f64 = 7.0;

    pub fn new(n_bins: usize, bin_size: f64) -> Result<Self> {
        if n_bins == 0 || !(bin_size > 0.0) || !bin_size.is_finite() {
            return Err(Error::invalid("bin spec needs n_bins >= 1 and a positive finite bin size"));
        }
        Ok(BinSpec { n_bins, bin_size })
    }

    /// 25 bins of `bin_size` for centre coordinates.
    pub fn location(bin_size: f64) -> Self {
        BinSpec { n_bins: 25, bin_size }
    }

    /// 40 bins of `bin_size` for widths and heights.
    pub fn size(bin_size: f64) -> Self {
        BinSpec { n_bins: 40, bin_size }
    }

    pub fn range(&self) -> f64 {
        self.n_bins as f64 * self.bin_size
    }
}

/// Axis-aligned box in pixels: centre `(cx, cy)` with x rightward and y
/// downward from the top-left corner, and its extents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("bounding box needs finite centre and positive extents"));
        }
        Ok(BoundingBox { cx, cy, w, h })
    }

    /// Box spanning `[x0, x1) x [y0, y1)`.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Whether the box covers the unit pixel with top-left corner `(x, y)`.
    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as f64, y as f64);
        x >= self.x0() && x + 1.0 <= self.x1() && y >= self.y0() && y + 1.0 <= self.y1()
    }

    /// Intersection with `[0, width) x [0, height)`, or `None` when thinner
    /// than `min_extent` on either axis.
    pub fn clip(&self, width: f64, height: f64, min_extent: f64) -> Option<BoundingBox> {
        let (x0, x1) = (self.x0().max(0.0), self.x1().min(width));
        let (y0, y1) = (self.y0().max(0.0), self.y1().min(height));
        if x1 - x0 < min_extent || y1 - y0 < min_extent || x1 <= x0 || y1 <= y0 {
            return None;
        }
        BoundingBox::from_corners(x0, y0, x1, y1).ok()
    }

    /// Image of the box under `p -> p * scale - offset`, per axis.
    pub fn transform(&self, sx: f64, sy: f64, ox: f64, oy: f64) -> BoundingBox {
        BoundingBox {
            cx: self.cx * sx - ox,
            cy: self.cy * sy - oy,
            w: self.w * sx,
            h: self.h * sy,
        }
    }
}

/// Bin indices of the four localisation outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LocTarget {
    pub bx: usize,
    pub by: usize,
    pub bw: usize,
    pub bh: usize,
}

impl LocTarget {
    pub fn as_array(&self) -> [usize; 4] {
        [self.bx, self.by, self.bw, self.bh]
    }

    pub fn from_array(a: [usize; 4]) -> Self {
        LocTarget {
            bx: a[0],
            by: a[1],
            bw: a[2],
            bh: a[3],
        }
    }
}

/// `floor(v / bin_size)`, with everything at or past the covered range
/// landing in the last bin.
pub fn encode_value(v: f64, spec: &BinSpec) -> Result<usize> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::invalid(alloc::format!("cannot bin value {v}")));
    }
    let b = num_traits::Float::floor(v / spec.bin_size);
    Ok(if b >= spec.n_bins as f64 { spec.n_bins - 1 } else { b as usize })
}

/// Midpoint of bin `b`.
pub fn decode_bin(b: usize, spec: &BinSpec) -> Result<f64> {
    if b >= spec.n_bins {
        return Err(Error::invalid(alloc::format!("bin {b} outside 0..{}", spec.n_bins)));
    }
    Ok(b as f64 * spec.bin_size + spec.bin_size / 2.0)
}

pub fn encode_box(bbox: &BoundingBox, loc: &BinSpec, size: &BinSpec) -> Result<LocTarget> {
    Ok(LocTarget {
        bx: encode_value(bbox.cx, loc)?,
        by: encode_value(bbox.cy, loc)?,
        bw: encode_value(bbox.w, size)?,
        bh: encode_value(bbox.h, size)?,
    })
}

pub fn decode_box(t: &LocTarget, loc: &BinSpec, size: &BinSpec) -> Result<BoundingBox> {
    BoundingBox::new(
        decode_bin(t.bx, loc)?,
        decode_bin(t.by, loc)?,
        decode_bin(t.bw, size)?,
        decode_bin(t.bh, size)?,
    )
}

/// Same centre, extents multiplied by `factor`.
pub fn enlarge_box(bbox: &BoundingBox, factor: f64) -> BoundingBox {
    BoundingBox {
        w: bbox.w * factor,
        h: bbox.h * factor,
        ..*bbox
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> (BinSpec, BinSpec) {
        (BinSpec::location(7.0), BinSpec::size(7.0))
    }

    #[test]
    fn ranges() {
        let (loc, size) = specs();
        assert_eq!(loc.range(), 175.0);
        assert_eq!(size.range(), 280.0);
    }

    #[test]
    fn encode_examples() {
        let (loc, size) = specs();
        assert_eq!(encode_value(0.0, &loc).unwrap(), 0);
        assert_eq!(encode_value(300.0, &size).unwrap(), 39);
        assert_eq!(encode_value(174.9, &loc).unwrap(), 24);
        assert_eq!(encode_value(175.0, &loc).unwrap(), 24);
        assert!(encode_value(-0.1, &loc).is_err());
        assert!(encode_value(f64::NAN, &loc).is_err());
    }

    #[test]
    fn decode_examples() {
        let (loc, _) = specs();
        assert_eq!(decode_bin(0, &loc).unwrap(), 3.5);
        assert_eq!(decode_bin(24, &loc).unwrap(), 171.5);
        assert!(decode_bin(25, &loc).is_err());
    }

    #[test]
    fn box_roundtrip_examples() {
        let (loc, size) = specs();
        let b = BoundingBox::new(84.0, 84.0, 140.0, 140.0).unwrap();
        let t = encode_box(&b, &loc, &size).unwrap();
        assert_eq!(t.as_array(), [12, 12, 20, 20]);
        let d = decode_box(&t, &loc, &size).unwrap();
        assert_eq!(d, BoundingBox::new(87.5, 87.5, 143.5, 143.5).unwrap());
        let wide = BoundingBox::new(84.0, 84.0, 300.0, 10.0).unwrap();
        assert_eq!(encode_box(&wide, &loc, &size).unwrap().bw, 39);
    }

    #[test]
    fn enlarge_examples() {
        let b = BoundingBox::new(100.0, 100.0, 50.0, 70.0).unwrap();
        let e = enlarge_box(&b, 1.10);
        assert_eq!((e.cx, e.cy), (100.0, 100.0));
        assert!((e.w - 55.0).abs() < 1e-12 && (e.h - 77.0).abs() < 1e-12);
        assert_eq!(enlarge_box(&b, 1.0), b);
        assert!((e.area() / b.area() - 1.21).abs() < 1e-12);
    }

    #[test]
    fn clip_to_frame() {
        let b = BoundingBox::from_corners(-10.0, 5.0, 20.0, 50.0).unwrap();
        let c = b.clip(40.0, 40.0, 1.0).unwrap();
        assert_eq!((c.x0(), c.y0(), c.x1(), c.y1()), (0.0, 5.0, 20.0, 40.0));
        let outside = BoundingBox::from_corners(50.0, 5.0, 60.0, 10.0).unwrap();
        assert!(outside.clip(40.0, 40.0, 1.0).is_none());
    }
}
