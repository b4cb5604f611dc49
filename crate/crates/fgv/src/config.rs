//! Optional TOML file supplying defaults for command-line flags.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! classes = 4
//! per_class = 25
//! canvas = 256
//!
//! [model]
//! arch = 50
//! width = 0.125
//! input = 224
//! swp = true
//! bin_size = 7.0
//!
//! [train]
//! lr = 0.01
//! momentum = 0.9
//! weight_decay = 1e-4
//! batch_size = 16
//! epochs = 30
//! loss_weights = [1.0, 1.0, 1.0, 1.0]
//! view = "augment"
//! box_jitter = 0.0
//!
//! [eval]
//! batch_size = 32
//! ```
//!
//! Every key is optional. A flag given on the command line wins over the
//! file, and the file wins over the built-in default.

use std::path::Path;

use serde::Deserialize;

use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub classes: Option<usize>,
    pub per_class: Option<usize>,
    pub canvas: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Option<usize>,
    pub width: Option<f64>,
    pub input: Option<usize>,
    pub swp: Option<bool>,
    pub bin_size: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub loss_weights: Option<[f64; 4]>,
    pub view: Option<String>,
    pub box_jitter: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub batch_size: Option<usize>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Flag, then file, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
