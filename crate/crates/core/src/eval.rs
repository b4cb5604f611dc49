//! Top-k and per-output bin accuracy.

use alloc::vec;
use alloc::vec::Vec;

use crate::binning::{encode_box, BinSpec, LocTarget};
use crate::model::{Model, LOC_OUTPUTS};
use crate::synth::Sample;
use crate::views::{Source, View};
use crate::{Error, Result, Scalar};

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Zero-based rank of `target`: classes scoring higher, plus tied classes
/// with a lower id, come first.
pub fn rank_of<T: Scalar>(row: &[T], target: usize) -> usize {
    let t = row[target];
    row.iter()
        .enumerate()
        .filter(|&(i, &v)| v > t || (v == t && i < target))
        .count()
}

pub fn topk_hit<T: Scalar>(row: &[T], target: usize, k: usize) -> bool {
    rank_of(row, target) < k
}

/// Summary of one evaluation run. Percentages are in `[0, 100]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub samples: usize,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    /// Centre-x, centre-y, width, height bin accuracy.
    pub per_output: Option<[f64; 4]>,
    pub mean_accuracy: Option<f64>,
}

fn percent(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * hits as f64 / n as f64
    }
}

/// Arithmetic mean of the four per-output accuracies.
pub fn mean_accuracy(per_output: &[f64; 4]) -> f64 {
    per_output.iter().sum::<f64>() / 4.0
}

impl MetricsReport {
    /// Report from per-output accuracies alone.
    pub fn from_per_output(per_output: [f64; 4], samples: usize) -> Self {
        MetricsReport {
            samples,
            per_output: Some(per_output),
            mean_accuracy: Some(mean_accuracy(&per_output)),
            ..Default::default()
        }
    }
}

/// Running top-1/top-5 tally.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TopKCounter {
    pub samples: usize,
    pub top1: usize,
    pub top5: usize,
}

impl TopKCounter {
    /// Adds a `[batch, classes]` block of logits.
    pub fn add<T: Scalar>(&mut self, logits: &[T], classes: usize, targets: &[usize]) -> Result<()> {
        if logits.len() != classes * targets.len() {
            return Err(Error::shape("top-k logits", &[logits.len()], &[targets.len(), classes]));
        }
        for (row, &t) in logits.chunks_exact(classes).zip(targets) {
            if t >= classes {
                return Err(Error::TargetOutOfRange { target: t, classes });
            }
            let r = rank_of(row, t);
            self.samples += 1;
            self.top1 += usize::from(r < 1);
            self.top5 += usize::from(r < 5);
        }
        Ok(())
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            samples: self.samples,
            top1: Some(percent(self.top1, self.samples)),
            top5: Some(percent(self.top5, self.samples)),
            ..Default::default()
        }
    }
}

/// Top-1/top-5 over rows of `logits`.
pub fn topk_report<T: Scalar>(logits: &[T], classes: usize, targets: &[usize]) -> Result<MetricsReport> {
    let mut c = TopKCounter::default();
    c.add(logits, classes, targets)?;
    Ok(c.report())
}

/// Distribution of `|predicted bin - true bin|` per output.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BinErrorStats {
    /// `counts[o][d]` samples with distance `d` on output `o`; the last
    /// bucket of each output holds every distance of three or more.
    pub counts: [[u64; 4]; 4],
}

impl BinErrorStats {
    pub fn add(&mut self, pred: &LocTarget, truth: &LocTarget) {
        for (o, (p, t)) in pred.as_array().iter().zip(truth.as_array()).enumerate() {
            let d = p.abs_diff(t).min(3);
            self.counts[o][d] += 1;
        }
    }

    pub fn samples(&self) -> u64 {
        self.counts[0].iter().sum()
    }

    /// Fractions at distance 0, 1, 2 and at least 3 for output `o`; they sum to 1.
    pub fn fractions(&self, o: usize) -> [f64; 4] {
        let n = self.samples().max(1) as f64;
        let c = &self.counts[o];
        [c[0] as f64 / n, c[1] as f64 / n, c[2] as f64 / n, c[3] as f64 / n]
    }

    pub fn distance1(&self, o: usize) -> f64 {
        self.fractions(o)[1]
    }

    pub fn distance3_plus(&self, o: usize) -> f64 {
        self.fractions(o)[3]
    }
}

/// Argmax bins of four `[batch, n_o]` logit blocks.
pub fn decode_predictions<T: Scalar>(outputs: &[&[T]; 4], batch: usize) -> Result<Vec<LocTarget>> {
    for (o, out) in outputs.iter().enumerate() {
        if out.len() != batch * LOC_OUTPUTS[o] {
            return Err(Error::shape("localisation logits", &[out.len()], &[batch, LOC_OUTPUTS[o]]));
        }
    }
    Ok((0..batch)
        .map(|b| {
            let mut a = [0; 4];
            for (o, out) in outputs.iter().enumerate() {
                let n = LOC_OUTPUTS[o];
                a[o] = argmax(&out[b * n..(b + 1) * n]);
            }
            LocTarget::from_array(a)
        })
        .collect())
}

/// Per-output accuracy, its mean, and the bin-distance distribution.
pub fn localisation_metrics(preds: &[LocTarget], truths: &[LocTarget]) -> Result<(MetricsReport, BinErrorStats)> {
    if preds.len() != truths.len() {
        return Err(Error::shape("localisation metrics", &[preds.len()], &[truths.len()]));
    }
    let mut stats = BinErrorStats::default();
    let mut hits = vec![0usize; 4];
    for (p, t) in preds.iter().zip(truths) {
        stats.add(p, t);
        for (h, (a, b)) in hits.iter_mut().zip(p.as_array().iter().zip(t.as_array())) {
            *h += usize::from(*a == b);
        }
    }
    let n = preds.len();
    let per = [percent(hits[0], n), percent(hits[1], n), percent(hits[2], n), percent(hits[3], n)];
    Ok((MetricsReport::from_per_output(per, n), stats))
}

fn check_view<T: Scalar>(model: &Model<T>, view: &View) -> Result<()> {
    if view.input_size() != model.config().input_size {
        return Err(Error::invalid(alloc::format!(
            "view produces {} px inputs, model expects {}",
            view.input_size(),
            model.config().input_size
        )));
    }
    Ok(())
}

/// Infer-mode top-1/top-5 of a classifier over `samples` rendered by `view`.
pub fn evaluate_classifier<T: Scalar>(model: &Model<T>, samples: &[Sample], view: &View, batch: usize) -> Result<MetricsReport> {
    if model.config().head.is_loc() {
        return Err(Error::invalid("evaluate_classifier needs a classifier head"));
    }
    check_view(model, view)?;
    let mut counter = TopKCounter::default();
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, _) = Source::<T>::Live { samples, view: *view }.batch(chunk, 0)?;
        let logits = model.predict(x, true)?;
        let targets: Vec<usize> = chunk.iter().map(|&i| samples[i].class).collect();
        counter.add(logits[0].data(), model.config().num_classes, &targets)?;
    }
    Ok(counter.report())
}

/// Predicted and true bins of a localiser over `samples` rendered by `view`.
/// Samples whose box leaves the view are skipped.
pub fn localise_bins<T: Scalar>(
    model: &Model<T>,
    samples: &[Sample],
    view: &View,
    batch: usize,
) -> Result<(Vec<LocTarget>, Vec<LocTarget>)> {
    if !model.config().head.is_loc() {
        return Err(Error::invalid("localisation metrics need a localisation head"));
    }
    check_view(model, view)?;
    let bs = model.config().bin_size;
    let (loc, size) = (BinSpec::location(bs), BinSpec::size(bs));
    let (mut preds, mut truths) = (Vec::new(), Vec::new());
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, boxes) = Source::<T>::Live { samples, view: *view }.batch(chunk, 0)?;
        let outs = model.predict(x, true)?;
        let blocks = [outs[0].data(), outs[1].data(), outs[2].data(), outs[3].data()];
        for (p, b) in decode_predictions(&blocks, chunk.len())?.into_iter().zip(boxes) {
            if let Some(b) = b {
                preds.push(p);
                truths.push(encode_box(&b, &loc, &size)?);
            }
        }
    }
    Ok((preds, truths))
}

/// Per-output bin accuracy of a localiser, with the bin-distance distribution.
pub fn evaluate_localiser<T: Scalar>(
    model: &Model<T>,
    samples: &[Sample],
    view: &View,
    batch: usize,
) -> Result<(MetricsReport, BinErrorStats)> {
    let (p, t) = localise_bins(model, samples, view, batch)?;
    localisation_metrics(&p, &t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn third_place_counts_only_for_top5() {
        let row = [0.1f32, 0.9, 0.5, 0.7, 0.0];
        assert_eq!(rank_of(&row, 2), 2);
        assert!(!topk_hit(&row, 2, 1));
        assert!(topk_hit(&row, 2, 5));
    }

    #[test]
    fn ties_go_to_lower_id() {
        let row = [1.0f32; 6];
        assert_eq!(argmax(&row), 0);
        assert!(topk_hit(&row, 0, 1));
        assert!(!topk_hit(&row, 1, 1));
        assert!(!topk_hit(&row, 5, 5));
    }

    #[test]
    fn table_mean() {
        let r = MetricsReport::from_per_output([85.354, 87.380, 77.723, 81.095], 1);
        assert!((r.mean_accuracy.unwrap() - 82.888).abs() < 1e-3);
    }

    #[test]
    fn off_by_one_everywhere() {
        let truths = vec![LocTarget::from_array([3, 4, 10, 11]); 5];
        let preds = vec![LocTarget::from_array([4, 3, 11, 10]); 5];
        let (r, s) = localisation_metrics(&preds, &truths).unwrap();
        assert_eq!(r.per_output, Some([0.0; 4]));
        for o in 0..4 {
            assert_eq!(s.distance1(o), 1.0);
        }
        let (perfect, s) = localisation_metrics(&truths, &truths).unwrap();
        assert_eq!(perfect.mean_accuracy, Some(100.0));
        assert_eq!(s.fractions(2), [1.0, 0.0, 0.0, 0.0]);
    }
}
