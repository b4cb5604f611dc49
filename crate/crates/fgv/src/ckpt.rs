use std::fs;
use std::path::Path;

use fgv_core::checkpoint::{decode, encode, Checkpoint, TrainMeta};
use fgv_core::model::Model;

use crate::{Error, Result};

/// Writes to a sibling temp file and renames, so a crash never leaves a
/// half-written checkpoint behind.
pub fn save(path: &Path, model: &Model<f32>, meta: &TrainMeta) -> Result<()> {
    let bytes = encode(model, meta)?;
    let tmp = path.with_extension("ckpt.partial");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}
