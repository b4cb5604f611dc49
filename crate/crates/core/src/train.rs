//! Minibatch SGD for classifiers and localisers.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binning::{encode_box, BinSpec, LocTarget};
use crate::checkpoint::TrainMeta;
use crate::eval::{argmax, decode_predictions};
use crate::model::{Model, LOC_OUTPUTS};
use crate::nn::BnMode;
use crate::preprocess::PreprocessConfig;
use crate::synth::Sample;
use crate::views::{Source, View};
use crate::{Error, Gradients, Result, Scalar, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Centre-x, centre-y, width, height; zero drops a term.
    pub loss_weights: [f64; 4],
    pub view: View,
    pub check_finite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            loss_weights: [1.0; 4],
            view: View::Augment(PreprocessConfig::for_input(224)),
            check_finite: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lr) {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !(finite_nonneg(self.momentum) && self.momentum < 1.0) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !finite_nonneg(self.weight_decay) {
            return Err(Error::invalid("weight decay must be finite and >= 0"));
        }
        if self.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.batch_size));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epoch budget must be positive"));
        }
        if !self.loss_weights.iter().all(|&w| finite_nonneg(w)) || self.loss_weights.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid("loss weights must be >= 0 with at least one positive"));
        }
        if let View::Augment(c) | View::CentralCrop(c) = &self.view {
            c.validate()?;
        }
        Ok(())
    }

    /// Step decay: x0.1 once half the budget is spent and again at three quarters.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.lr;
        for m in [self.epochs / 2, self.epochs * 3 / 4] {
            if epoch >= m && m > 0 {
                lr *= 0.1;
            }
        }
        lr
    }
}

/// Heavy-ball SGD with decoupled velocity per registry entry.
#[derive(Clone, Debug, Default)]
pub struct Sgd<T> {
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new() -> Self {
        Sgd { velocity: Vec::new() }
    }

    /// `v = momentum * v + g + wd * w; w -= lr * v`. Decay touches weights only.
    pub fn step(
        &mut self,
        model: &mut Model<T>,
        grads: &Gradients<T>,
        leaves: &[Var],
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) {
        let entries = model.params_mut().entries_mut();
        if self.velocity.len() < entries.len() {
            self.velocity.resize(entries.len(), None);
        }
        let (lr, mu) = (T::lit(lr), T::lit(momentum));
        for (i, e) in entries.iter_mut().enumerate() {
            if !e.tensor.requires_grad {
                continue;
            }
            let Some(g) = grads.get(leaves[i]) else { continue };
            let wd = T::lit(if e.kind.decays() { weight_decay } else { 0.0 });
            let v = self.velocity[i].get_or_insert_with(|| vec![T::zero(); g.len()]);
            for ((w, v), &g) in e.tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v + g + wd * *w;
                *w = *w - lr * *v;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cumulative iterations at the end of the epoch.
    pub iterations: usize,
    pub lr: f64,
    pub loss: f64,
    /// Train-mode top-1 (classifiers) or mean bin accuracy (localisers), percent.
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub meta: TrainMeta,
}

/// Shuffled batches; a trailing singleton joins the previous batch so batch
/// norm always sees two samples.
pub fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap_or_default();
        if let Some(prev) = out.last_mut() {
            prev.extend(last);
        }
    }
    out
}

enum Targets {
    Classes(Vec<usize>),
    Bins(Vec<LocTarget>),
}

fn targets(model_loc: bool, samples: &[Sample], idx: &[usize], boxes: &[Option<crate::binning::BoundingBox>], bins: (&BinSpec, &BinSpec)) -> Result<Targets> {
    if !model_loc {
        return Ok(Targets::Classes(idx.iter().map(|&i| samples[i].class).collect()));
    }
    boxes
        .iter()
        .map(|b| {
            let b = b.ok_or(Error::invalid("localiser training needs a view that carries the box"))?;
            encode_box(&b, bins.0, bins.1)
        })
        .collect::<Result<Vec<_>>>()
        .map(Targets::Bins)
}

/// Trains `model` in place. `resume` continues epoch and iteration numbering;
/// the learning-rate schedule always spans this run's budget. `on_epoch` may
/// stop training early.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    samples: &[Sample],
    cfg: &TrainConfig,
    resume: TrainMeta,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Model<T>) -> Control,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mcfg = *model.config();
    let is_loc = mcfg.head.is_loc();
    if cfg.view.input_size() != mcfg.input_size {
        return Err(Error::invalid(alloc::format!(
            "view produces {} px inputs, model expects {}",
            cfg.view.input_size(),
            mcfg.input_size
        )));
    }
    if samples.len() < 2 {
        return Err(Error::BatchTooSmall(samples.len()));
    }
    if !is_loc {
        let dataset = samples.iter().map(|s| s.class).max().unwrap_or(0) + 1;
        if dataset > mcfg.num_classes {
            return Err(Error::ClassCountMismatch {
                model: mcfg.num_classes,
                dataset,
            });
        }
    }
    let loc_spec = BinSpec::location(mcfg.bin_size);
    let size_spec = BinSpec::size(mcfg.bin_size);
    let source = Source::<T>::new(samples, &cfg.view)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new();
    let mut report = TrainReport {
        history: Vec::new(),
        meta: resume,
    };

    for local_epoch in 0..cfg.epochs {
        let epoch = resume.epochs + local_epoch;
        let lr = cfg.lr_at(local_epoch);
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0.0, 0usize);
        let batches = epoch_batches(samples.len(), cfg.batch_size, &mut rng);
        for idx in &batches {
            let iteration = report.meta.iterations;
            let (x, boxes) = source.batch(idx, epoch as u64)?;
            let tgt = targets(is_loc, samples, idx, &boxes, (&loc_spec, &size_spec))?;
            let diverged = Error::Diverged { epoch, iteration };
            let (loss, grads, leaves, updates, batch_hits) = {
                let mut tape = if cfg.check_finite { Tape::new() } else { Tape::unchecked() };
                let xv = tape.input(x);
                let out = match model.forward(&mut tape, xv, BnMode::Train) {
                    Err(Error::NonFinite { .. }) => return Err(diverged),
                    r => r?,
                };
                let (loss, batch_hits) = match &tgt {
                    Targets::Classes(t) => {
                        let l = tape.softmax_cross_entropy(out.outputs[0], t);
                        let l = l.map_err(|e| if matches!(e, Error::NonFinite { .. }) { diverged.clone() } else { e })?;
                        let logits = tape.value(out.outputs[0]);
                        let c = mcfg.num_classes;
                        let h = t.iter().enumerate().filter(|&(b, &y)| argmax(&logits[b * c..(b + 1) * c]) == y).count();
                        (l, h as f64)
                    }
                    Targets::Bins(t) => {
                        let mut total: Option<Var> = None;
                        for (o, &w) in cfg.loss_weights.iter().enumerate() {
                            if w == 0.0 {
                                continue;
                            }
                            let ys: Vec<usize> = t.iter().map(|b| b.as_array()[o]).collect();
                            let l = tape.softmax_cross_entropy(out.outputs[o], &ys)?;
                            let l = if w == 1.0 { l } else { tape.scale(l, T::lit(w))? };
                            total = Some(match total {
                                Some(acc) => tape.add(acc, l)?,
                                None => l,
                            });
                        }
                        let total = total.ok_or(Error::invalid("no active loss term"))?;
                        let outs = [
                            tape.value(out.outputs[0]),
                            tape.value(out.outputs[1]),
                            tape.value(out.outputs[2]),
                            tape.value(out.outputs[3]),
                        ];
                        let preds = decode_predictions(&outs, idx.len())?;
                        let mut h = 0usize;
                        for (p, y) in preds.iter().zip(t) {
                            h += p.as_array().iter().zip(y.as_array()).filter(|(a, b)| **a == *b).count();
                        }
                        (total, h as f64 / LOC_OUTPUTS.len() as f64)
                    }
                };
                let loss_val = tape.value(loss)[0].as_f64();
                if !loss_val.is_finite() {
                    return Err(diverged);
                }
                let grads = tape.backward(loss)?;
                (loss_val, grads, out.leaves, out.bn_updates, batch_hits)
            };
            model.apply_bn_updates(&updates);
            sgd.step(model, &grads, &leaves, lr, cfg.momentum, cfg.weight_decay);
            report.meta.iterations += 1;
            loss_sum += loss * idx.len() as f64;
            hits += batch_hits;
            seen += idx.len();
        }
        let rec = EpochRecord {
            epoch,
            iterations: report.meta.iterations,
            lr,
            loss: loss_sum / seen as f64,
            accuracy: 100.0 * hits / seen as f64,
        };
        log::debug!(
            "epoch {} loss {:.4} acc {:.2}% lr {}",
            rec.epoch,
            rec.loss,
            rec.accuracy,
            rec.lr
        );
        report.history.push(rec);
        report.meta.epochs = epoch + 1;
        if on_epoch(&rec, model) == Control::Stop {
            break;
        }
    }
    Ok(report)
}

/// [`train`] for classifier heads.
pub fn train_classifier<T: Scalar>(
    model: &mut Model<T>,
    samples: &[Sample],
    cfg: &TrainConfig,
    resume: TrainMeta,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Model<T>) -> Control,
) -> Result<TrainReport> {
    if model.config().head.is_loc() {
        return Err(Error::invalid("train_classifier needs a classifier head"));
    }
    train(model, samples, cfg, resume, on_epoch)
}

/// [`train`] for the four-output localisation head.
pub fn train_localiser<T: Scalar>(
    model: &mut Model<T>,
    samples: &[Sample],
    cfg: &TrainConfig,
    resume: TrainMeta,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Model<T>) -> Control,
) -> Result<TrainReport> {
    if !model.config().head.is_loc() {
        return Err(Error::invalid("train_localiser needs a localisation head"));
    }
    if matches!(cfg.view, View::BoxCrop { .. }) {
        return Err(Error::invalid("the box-crop view has no box to localise"));
    }
    train(model, samples, cfg, resume, on_epoch)
}
