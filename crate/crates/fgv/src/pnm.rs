//! Binary portable pixmaps (P6) and graymaps (P5), 8 bits per sample.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use fgv_core::image::RgbImage;

use crate::{Error, Result};

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::Format(format!(
            "graymap {width}x{height} needs {} pixels, got {}",
            width * height,
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Header tokens, skipping whitespace and `#` comments.
struct Header<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn token(&mut self) -> Result<&str> {
        loop {
            match self.buf.get(self.pos) {
                Some(b'#') => {
                    while self.buf.get(self.pos).is_some_and(|&c| c != b'\n') {
                        self.pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("truncated pnm header".into())),
            }
        }
        let start = self.pos;
        while self.buf.get(self.pos).is_some_and(|c| !c.is_ascii_whitespace()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.buf[start..self.pos]).map_err(|_| Error::Format("non-ASCII pnm header".into()))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let t = self.token()?;
        t.parse().map_err(|_| Error::Format(format!("bad pnm {what} {t:?}")))
    }
}

/// Parses a P5 or P6 file into `(magic, width, height, samples)`.
fn decode(bytes: &[u8]) -> Result<(u8, usize, usize, &[u8])> {
    let mut h = Header { buf: bytes, pos: 0 };
    let magic = match h.token()? {
        "P5" => 5,
        "P6" => 6,
        m => return Err(Error::Format(format!("unsupported pnm magic {m:?}"))),
    };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit pnm is supported (maxval {maxval})")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = h.pos + 1;
    let channels = if magic == 6 { 3 } else { 1 };
    let len = width * height * channels;
    let raster = bytes
        .get(start..start + len)
        .ok_or_else(|| Error::Format(format!("pnm raster truncated: need {len} bytes")))?;
    Ok((magic, width, height, raster))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    match decode(bytes)? {
        (6, w, h, raster) => Ok(RgbImage::from_raw(w, h, raster.to_vec())?),
        _ => Err(Error::Format("expected a P6 pixmap".into())),
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    match decode(bytes)? {
        (5, w, h, raster) => Ok((w, h, raster.to_vec())),
        _ => Err(Error::Format("expected a P5 graymap".into())),
    }
}

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    write_file(path, &encode_ppm(image))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write_file(path, &encode_pgm(width, height, pixels)?)
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let mut img = RgbImage::new(3, 2).unwrap();
        img.put_pixel(2, 1, [1, 2, 3]);
        img.put_pixel(0, 0, [255, 0, 128]);
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn header_comments_skipped() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x07\x09";
        assert_eq!(decode_pgm(bytes).unwrap(), (2, 1, vec![7, 9]));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(encode_pgm(2, 2, &[0; 3]).is_err());
    }
}
