//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "FGVCKPT\0" | version | config_len | config text (UTF-8)
//! | entry_count | { name_len | name | ndim | dims... | f32 data }*
//! ```
//!
//! Entries follow the registry order. The config text is the model config
//! followed by training metadata lines, so a checkpoint rebuilds its model
//! without any side information.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::model::{build_model, parse_pairs, Model, ModelConfig};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FGVCKPT\0";
pub const VERSION: u32 = 1;

/// Training progress stored with the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainMeta {
    pub epochs: usize,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: TrainMeta,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(model: &Model<f32>, meta: &TrainMeta) -> Result<Vec<u8>> {
    let mut text = model.config().to_text();
    let _ = writeln!(text, "trained_epochs = {}", meta.epochs);
    let _ = writeln!(text, "trained_iterations = {}", meta.iterations);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    let entries = model.params().entries();
    put_u32(&mut out, entries.len())?;
    for e in entries {
        put_u32(&mut out, e.name.len())?;
        out.extend_from_slice(e.name.as_bytes());
        put_u32(&mut out, e.tensor.shape().len())?;
        for &d in e.tensor.shape() {
            put_u32(&mut out, d)?;
        }
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn text(&mut self, n: usize, what: &str) -> Result<&'b str> {
        core::str::from_utf8(self.take(n, what)?).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

/// Just the config and metadata, without touching the weights.
pub fn decode_header(bytes: &[u8]) -> Result<(ModelConfig, TrainMeta)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    header(&mut r)
}

fn header(r: &mut Reader<'_>) -> Result<(ModelConfig, TrainMeta)> {
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".to_string()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let n = r.u32("config length")?;
    let text = r.text(n, "config")?;
    let config = ModelConfig::from_text(text)?;
    let pairs = parse_pairs(text)?;
    let meta_value = |k: &str| -> Result<usize> {
        pairs
            .iter()
            .find(|(key, _)| key == k)
            .map_or(Ok(0), |(_, v)| v.parse().map_err(|_| Error::Checkpoint(format!("bad {k}"))))
    };
    let meta = TrainMeta {
        epochs: meta_value("trained_epochs")?,
        iterations: meta_value("trained_iterations")?,
    };
    Ok((config, meta))
}

/// Rebuilds the model from its config and overwrites every entry, checking
/// names and shapes against the rebuilt registry.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (config, meta) = header(&mut r)?;
    let mut model = build_model::<f32>(&config)?;
    let count = r.u32("entry count")?;
    if count != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} entries, config implies {}",
            model.params().len()
        )));
    }
    for i in 0..count {
        let name_len = r.u32("name length")?;
        let name: String = r.text(name_len, "name")?.into();
        let ndim = r.u32("rank")?;
        let mut dims = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            dims.push(r.u32("dims")?);
        }
        let entry = &mut model.params_mut().entries_mut()[i];
        if entry.name != name || entry.tensor.shape() != dims.as_slice() {
            return Err(Error::Checkpoint(format!(
                "entry {i} is {name} {dims:?}, config expects {} {:?}",
                entry.name,
                entry.tensor.shape()
            )));
        }
        let raw = r.take(entry.tensor.numel() * 4, &name)?;
        for (dst, b) in entry.tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { model, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Depth, HeadKind};

    fn model() -> Model<f32> {
        let cfg = ModelConfig::new(Depth::R18, 3)
            .with_width(1.0 / 32.0)
            .with_input(32)
            .with_head(HeadKind::Plain);
        build_model(&cfg).unwrap()
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let m = model();
        let meta = TrainMeta { epochs: 3, iterations: 12 };
        let bytes = encode(&m, &meta).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.meta, meta);
        assert_eq!(encode(&back.model, &back.meta).unwrap(), bytes);
    }

    #[test]
    fn corruption_detected() {
        let bytes = encode(&model(), &TrainMeta::default()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(m)) if m.contains("magic")));
        let mut ver = bytes.clone();
        ver[8] = 9;
        assert!(matches!(decode(&ver), Err(Error::Checkpoint(m)) if m.contains("version")));
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(m)) if m.contains("truncated")));
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long).is_err());
    }
}
