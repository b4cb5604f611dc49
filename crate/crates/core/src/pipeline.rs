//! Localise, crop, classify.

use alloc::vec::Vec;

use crate::binning::{decode_box, enlarge_box, BinSpec, BoundingBox, LocTarget};
use crate::eval::{decode_predictions, MetricsReport, TopKCounter};
use crate::image::{to_tensor, RgbImage};
use crate::model::Model;
use crate::preprocess::{preprocess_eval_center, PreprocessConfig};
use crate::synth::Sample;
use crate::views::{box_crop, BOX_ENLARGE};
use crate::{Error, Result, Scalar};

/// Where the second-stage crop comes from.
#[derive(Clone, Copy, Debug)]
pub enum BoxSource<'b> {
    Localiser,
    /// Known boxes in raw image coordinates, one per image.
    GroundTruth(&'b [BoundingBox]),
}

/// What happened to one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    /// Predicted bins, when the localiser ran.
    pub bins: Option<LocTarget>,
    /// Box before enlargement, raw image coordinates.
    pub raw_box: Option<BoundingBox>,
    /// Box actually cropped.
    pub crop_box: Option<BoundingBox>,
    /// The crop failed and the central crop was classified instead.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput<T> {
    pub logits: Vec<T>,
    pub trace: Trace,
}

/// A localiser and a classifier trained on enlarged box crops.
#[derive(Clone, Copy, Debug)]
pub struct Pipeline<'m, T> {
    pub localiser: &'m Model<T>,
    pub classifier: &'m Model<T>,
    /// Central-crop geometry the localiser was trained with.
    pub frame: PreprocessConfig,
    pub enlarge: f64,
}

impl<'m, T: Scalar> Pipeline<'m, T> {
    pub fn new(localiser: &'m Model<T>, classifier: &'m Model<T>) -> Result<Self> {
        if !localiser.config().head.is_loc() {
            return Err(Error::invalid("first stage must be a localiser"));
        }
        if classifier.config().head.is_loc() {
            return Err(Error::invalid("second stage must be a classifier"));
        }
        Ok(Pipeline {
            localiser,
            classifier,
            frame: PreprocessConfig::for_input(localiser.config().input_size),
            enlarge: BOX_ENLARGE,
        })
    }

    /// Predicted boxes in raw coordinates, before enlargement.
    pub fn localise(&self, images: &[&RgbImage]) -> Result<Vec<(LocTarget, BoundingBox)>> {
        let mut crops = Vec::with_capacity(images.len());
        let mut transforms = Vec::with_capacity(images.len());
        for img in images {
            let (c, t) = preprocess_eval_center(img, &self.frame)?;
            crops.push(c);
            transforms.push(t);
        }
        let refs: Vec<&RgbImage> = crops.iter().collect();
        let outs = self.localiser.predict(to_tensor(&refs)?, true)?;
        let blocks = [outs[0].data(), outs[1].data(), outs[2].data(), outs[3].data()];
        let bins = decode_predictions(&blocks, images.len())?;
        let bs = self.localiser.config().bin_size;
        let (loc, size) = (BinSpec::location(bs), BinSpec::size(bs));
        bins.into_iter()
            .zip(transforms)
            .map(|(b, t)| Ok((b, t.inverse_box(&decode_box(&b, &loc, &size)?))))
            .collect()
    }

    /// Runs both stages on a batch.
    pub fn run(&self, images: &[&RgbImage], boxes: BoxSource<'_>) -> Result<Vec<PipelineOutput<T>>> {
        let found: Vec<(Option<LocTarget>, BoundingBox)> = match boxes {
            BoxSource::Localiser => self.localise(images)?.into_iter().map(|(b, r)| (Some(b), r)).collect(),
            BoxSource::GroundTruth(gt) => {
                if gt.len() != images.len() {
                    return Err(Error::shape("ground-truth boxes", &[gt.len()], &[images.len()]));
                }
                gt.iter().map(|b| (None, *b)).collect()
            }
        };
        let size = self.classifier.config().input_size;
        let mut crops = Vec::with_capacity(images.len());
        let mut traces = Vec::with_capacity(images.len());
        for (img, (bins, raw)) in images.iter().zip(found) {
            let (crop, fallback) = match box_crop(img, &raw, self.enlarge, size) {
                Ok(c) => (c, false),
                Err(Error::EmptyIntersection) => {
                    log::debug!("predicted box {raw:?} misses the image, falling back to the central crop");
                    (preprocess_eval_center(img, &PreprocessConfig::for_input(size))?.0, true)
                }
                Err(e) => return Err(e),
            };
            crops.push(crop);
            traces.push(Trace {
                bins,
                raw_box: Some(raw),
                crop_box: (!fallback).then(|| enlarge_box(&raw, self.enlarge)),
                fallback,
            });
        }
        let refs: Vec<&RgbImage> = crops.iter().collect();
        let logits = self.classifier.predict(to_tensor(&refs)?, true)?.swap_remove(0);
        let c = self.classifier.config().num_classes;
        Ok(traces
            .into_iter()
            .enumerate()
            .map(|(i, trace)| PipelineOutput {
                logits: logits.data()[i * c..(i + 1) * c].to_vec(),
                trace,
            })
            .collect())
    }

    /// Top-1/top-5 over `samples`, in batches of `batch`.
    /// Top-k over `samples`, plus how many fell back to the central crop.
    pub fn evaluate(&self, samples: &[Sample], gt_boxes: bool, batch: usize) -> Result<(MetricsReport, usize)> {
        let mut counter = TopKCounter::default();
        let mut fallbacks = 0;
        let c = self.classifier.config().num_classes;
        for chunk in samples.chunks(batch.max(1)) {
            let images: Vec<&RgbImage> = chunk.iter().map(|s| &s.image).collect();
            let gt: Vec<BoundingBox> = chunk.iter().map(|s| s.bbox).collect();
            let src = if gt_boxes { BoxSource::GroundTruth(&gt) } else { BoxSource::Localiser };
            let outs = self.run(&images, src)?;
            fallbacks += outs.iter().filter(|o| o.trace.fallback).count();
            let logits: Vec<T> = outs.into_iter().flat_map(|o| o.logits).collect();
            let targets: Vec<usize> = chunk.iter().map(|s| s.class).collect();
            counter.add(&logits, c, &targets)?;
        }
        Ok((counter.report(), fallbacks))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Depth, HeadKind, ModelConfig};
    use crate::synth::{generate_dataset, SynthConfig};

    fn models() -> (Model<f32>, Model<f32>) {
        let base = ModelConfig::new(Depth::R18, 2).with_width(1.0 / 32.0).with_input(32);
        let mut loc = base.with_head(HeadKind::Loc);
        loc.bin_size = 1.0;
        (build_model(&loc).unwrap(), build_model(&base).unwrap())
    }

    #[test]
    fn enlargement_applied_once() {
        let (l, c) = models();
        let p = Pipeline::new(&l, &c).unwrap();
        let data = generate_dataset(&SynthConfig::new(2, 2, 48, 3)).unwrap();
        let images: Vec<&RgbImage> = data.iter().map(|s| &s.image).collect();
        for src in [BoxSource::Localiser, BoxSource::GroundTruth(&data.iter().map(|s| s.bbox).collect::<Vec<_>>())] {
            for o in p.run(&images, src).unwrap() {
                assert_eq!(o.logits.len(), 2);
                let (raw, crop) = (o.trace.raw_box.unwrap(), o.trace.crop_box.unwrap());
                assert!((crop.w / raw.w - 1.10).abs() < 1e-12);
                assert!((crop.h / raw.h - 1.10).abs() < 1e-12);
                assert_eq!((crop.cx, crop.cy), (raw.cx, raw.cy));
            }
        }
    }

    #[test]
    fn stage_kinds_checked() {
        let (l, c) = models();
        assert!(Pipeline::new(&c, &l).is_err());
    }

    #[test]
    fn box_outside_image_falls_back() {
        let (l, c) = models();
        let p = Pipeline::new(&l, &c).unwrap();
        let img = RgbImage::filled(40, 40, [9, 9, 9]).unwrap();
        let far = [BoundingBox::new(500.0, 500.0, 10.0, 10.0).unwrap()];
        let o = p.run(&[&img], BoxSource::GroundTruth(&far)).unwrap();
        assert!(o[0].trace.fallback);
        assert!(o[0].trace.crop_box.is_none());
    }
}
