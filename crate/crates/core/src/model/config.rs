use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use crate::swp::SwpSpec;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Depth {
    R18,
    R34,
    R50,
}

impl Depth {
    pub fn from_layers(n: usize) -> Result<Self> {
        match n {
            18 => Ok(Depth::R18),
            34 => Ok(Depth::R34),
            50 => Ok(Depth::R50),
            _ => Err(Error::invalid(format!("unsupported depth {n}; expected 18, 34 or 50"))),
        }
    }

    pub fn layers(self) -> usize {
        match self {
            Depth::R18 => 18,
            Depth::R34 => 34,
            Depth::R50 => 50,
        }
    }

    pub fn bottleneck(self) -> bool {
        self == Depth::R50
    }

    fn blocks(self) -> [usize; 4] {
        match self {
            Depth::R18 => [2, 2, 2, 2],
            Depth::R34 | Depth::R50 => [3, 4, 6, 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Global average pool, then one dense classifier.
    Plain,
    /// SWP, batch norm, a hidden dense layer, then the classifier.
    Swp,
    /// Global average pool feeding four bin classifiers.
    Loc,
    /// SWP and batch norm feeding four bin classifiers.
    LocSwp,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Plain => "plain",
            HeadKind::Swp => "swp",
            HeadKind::Loc => "loc",
            HeadKind::LocSwp => "loc_swp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(HeadKind::Plain),
            "swp" => Ok(HeadKind::Swp),
            "loc" => Ok(HeadKind::Loc),
            "loc_swp" => Ok(HeadKind::LocSwp),
            _ => Err(Error::invalid(format!("unknown head kind {s:?}"))),
        }
    }

    pub fn is_loc(self) -> bool {
        matches!(self, HeadKind::Loc | HeadKind::LocSwp)
    }

    pub fn has_swp(self) -> bool {
        matches!(self, HeadKind::Swp | HeadKind::LocSwp)
    }
}

/// Output widths of the localisation head: centre x, centre y, width, height.
pub const LOC_OUTPUTS: [usize; 4] = [25, 25, 40, 40];

/// Declarative description of a network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub depth: Depth,
    /// Stage channel multiplier in `(0, 1]`; channels are `floor(c * width)`.
    pub width: f64,
    pub input_size: usize,
    /// Classifier outputs; ignored by localisation heads.
    pub num_classes: usize,
    pub head: HeadKind,
    pub swp: SwpSpec,
    /// Hidden dense width of the SWP classification head.
    pub fc_nodes: usize,
    /// Pixel width of one localisation bin.
    pub bin_size: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(depth: Depth, num_classes: usize) -> Self {
        ModelConfig {
            depth,
            width: 1.0,
            input_size: 224,
            num_classes,
            head: HeadKind::Plain,
            swp: SwpSpec::default(),
            fc_nodes: 1024,
            bin_size: 7.0,
            seed: 0,
        }
    }

    pub fn with_width(self, width: f64) -> Self {
        ModelConfig { width, ..self }
    }

    pub fn with_input(self, input_size: usize) -> Self {
        ModelConfig { input_size, ..self }
    }

    pub fn with_head(self, head: HeadKind) -> Self {
        ModelConfig { head, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        ModelConfig { seed, ..self }
    }

    pub fn with_swp(self, swp: SwpSpec) -> Self {
        ModelConfig { swp, ..self }
    }

    /// Resizes the SWP masks to the feature map, keeping the mask count.
    pub fn fit_swp(self) -> Result<Self> {
        let f = self.feature_size()?;
        Ok(ModelConfig {
            swp: SwpSpec::new(self.swp.num_masks, f, f)?,
            ..self
        })
    }

    /// Stem output channels.
    pub fn stem_channels(&self) -> Result<usize> {
        scaled(64, self.width)
    }

    pub fn stage_plan(&self) -> Result<StagePlan> {
        StagePlan::new(self.depth, self.width)
    }

    /// Spatial side of the feature map entering the head.
    pub fn feature_size(&self) -> Result<usize> {
        let conv = |x: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            if x + 2 * p < k {
                return Err(Error::invalid(format!("input {} too small for this network", self.input_size)));
            }
            Ok((x + 2 * p - k) / s + 1)
        };
        let mut x = conv(self.input_size, 7, 2, 3)?;
        x = conv(x, 3, 2, 1)?;
        for stage in self.stage_plan()?.stages {
            x = conv(x, 3, stage.stride, 1)?;
        }
        Ok(x)
    }

    /// Channels of the feature map entering the head.
    pub fn feature_channels(&self) -> Result<usize> {
        Ok(self.stage_plan()?.stages.last().map(|s| s.out_channels).unwrap_or(0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width <= 1.0) {
            return Err(Error::invalid(format!("width multiplier {} outside (0, 1]", self.width)));
        }
        self.stem_channels()?;
        self.stage_plan()?;
        self.feature_size()?;
        if !self.head.is_loc() && self.num_classes == 0 {
            return Err(Error::invalid("classifier needs at least one class"));
        }
        if self.head == HeadKind::Swp && self.fc_nodes == 0 {
            return Err(Error::invalid("SWP head needs fc_nodes >= 1"));
        }
        if self.head.is_loc() && !(self.bin_size > 0.0 && self.bin_size.is_finite()) {
            return Err(Error::invalid("bin size must be positive"));
        }
        if self.head.has_swp() {
            self.check_swp(&self.swp)?;
        }
        Ok(())
    }

    pub(crate) fn check_swp(&self, swp: &SwpSpec) -> Result<()> {
        let f = self.feature_size()?;
        if swp.mask_h != f || swp.mask_w != f {
            return Err(Error::invalid(format!(
                "SWP masks {}x{} do not match the {f}x{f} feature map",
                swp.mask_h, swp.mask_w
            )));
        }
        if swp.num_masks == 0 {
            return Err(Error::invalid("SWP needs at least one mask"));
        }
        Ok(())
    }

    /// `key = value` lines; [`Self::from_text`] inverts it exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "depth = {}", self.depth.layers());
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "input_size = {}", self.input_size);
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "head = {}", self.head.name());
        let _ = writeln!(s, "swp_masks = {}", self.swp.num_masks);
        let _ = writeln!(s, "swp_mask_h = {}", self.swp.mask_h);
        let _ = writeln!(s, "swp_mask_w = {}", self.swp.mask_w);
        let _ = writeln!(s, "fc_nodes = {}", self.fc_nodes);
        let _ = writeln!(s, "bin_size = {}", self.bin_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Parses [`Self::to_text`] output. Unknown keys are ignored so callers
    /// can append their own lines.
    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let get = |k: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("config lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad integer for {k}")))
        };
        let float = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad number for {k}")))
        };
        let cfg = ModelConfig {
            depth: Depth::from_layers(num("depth")?)?,
            width: float("width")?,
            input_size: num("input_size")?,
            num_classes: num("num_classes")?,
            head: HeadKind::parse(get("head")?)?,
            swp: SwpSpec::new(num("swp_masks")?, num("swp_mask_h")?, num("swp_mask_w")?)?,
            fc_nodes: num("fc_nodes")?,
            bin_size: float("bin_size")?,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Checkpoint("bad seed".to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed config line {l:?}")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn scaled(channels: usize, width: f64) -> Result<usize> {
    let c = libm_floor(channels as f64 * width) as usize;
    if c == 0 {
        return Err(Error::invalid(format!(
            "width {width} leaves a {channels}-channel layer with zero channels"
        )));
    }
    Ok(c)
}

fn libm_floor(v: f64) -> f64 {
    num_traits::Float::floor(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub blocks: usize,
    /// Inner width: both convs of a basic block, the 3x3 of a bottleneck.
    pub channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl StageSpec {
    /// Weight layers in the stage: two per basic block, three per bottleneck.
    pub fn layers(&self, bottleneck: bool) -> usize {
        self.blocks * if bottleneck { 3 } else { 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePlan {
    pub stages: Vec<StageSpec>,
    pub bottleneck: bool,
}

impl StagePlan {
    pub fn new(depth: Depth, width: f64) -> Result<Self> {
        let expansion = if depth.bottleneck() { 4 } else { 1 };
        let stages = depth
            .blocks()
            .iter()
            .zip([64, 128, 256, 512])
            .enumerate()
            .map(|(i, (&blocks, base))| {
                let channels = scaled(base, width)?;
                Ok(StageSpec {
                    blocks,
                    channels,
                    out_channels: channels * expansion,
                    stride: if i == 0 { 1 } else { 2 },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StagePlan {
            stages,
            bottleneck: depth.bottleneck(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resnet34_stage_layers() {
        let plan = StagePlan::new(Depth::R34, 1.0).unwrap();
        let layers: Vec<_> = plan.stages.iter().map(|s| s.layers(false)).collect();
        assert_eq!(layers, [6, 8, 12, 6]);
        let channels: Vec<_> = plan.stages.iter().map(|s| s.channels).collect();
        assert_eq!(channels, [64, 128, 256, 512]);
    }

    #[test]
    fn feature_map_is_seven_at_224() {
        for d in [Depth::R18, Depth::R34, Depth::R50] {
            assert_eq!(ModelConfig::new(d, 10).feature_size().unwrap(), 7);
        }
        assert_eq!(ModelConfig::new(Depth::R50, 4).feature_channels().unwrap(), 2048);
        assert_eq!(ModelConfig::new(Depth::R18, 4).with_input(112).feature_size().unwrap(), 4);
    }

    #[test]
    fn width_validation() {
        assert!(ModelConfig::new(Depth::R18, 4).with_width(0.01).validate().is_err());
        assert!(ModelConfig::new(Depth::R18, 4).with_width(1.5).validate().is_err());
        assert_eq!(StagePlan::new(Depth::R50, 0.125).unwrap().stages[3].out_channels, 256);
    }

    #[test]
    fn text_roundtrip() {
        let cfg = ModelConfig::new(Depth::R50, 7).with_width(0.125).with_head(HeadKind::LocSwp).with_seed(99);
        let back = ModelConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }
}
