//! Pre-activation residual networks and their heads.
//!
//! Every convolution inside a residual block is preceded by batch norm and a
//! relu. The stem is a 7x7 stride-2 convolution, batch norm, relu and a 3x3
//! stride-2 max pool; four stages follow, then a closing batch norm and relu
//! before the head. Shortcuts are identities except where the stride or the
//! channel count changes, where a 1x1 convolution of the block input is used.

mod config;
mod params;

pub use config::{parse_pairs, Depth, HeadKind, ModelConfig, StagePlan, StageSpec, LOC_OUTPUTS};
pub use params::{ParamEntry, ParamKind, ParamStore};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::gradcheck::ParamSet;
use crate::nn::{BatchStats, BnMode, PoolSpec, BN_EPS};
use crate::swp::SwpSpec;
use crate::{Error, Result, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvLayer {
    w: usize,
    b: Option<usize>,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct BnLayer {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct DenseLayer {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Block {
    pre: Vec<BnLayer>,
    convs: Vec<ConvLayer>,
    shortcut: Option<ConvLayer>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Head {
    Plain { pool: usize, fc: DenseLayer },
    Swp { masks: usize, bn: BnLayer, fc: DenseLayer, classifier: DenseLayer },
    Loc { swp: Option<(usize, BnLayer)>, pool: usize, outputs: [DenseLayer; 4] },
}

/// Pending running-statistics update from a train-mode forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BnUpdate<T> {
    mean: usize,
    var: usize,
    stats: BatchStats<T>,
}

/// What a forward pass put on the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOut<T> {
    /// One logits node for classifiers; centre-x, centre-y, width and height
    /// logits for localisers.
    pub outputs: Vec<Var>,
    /// Leaf handle of every registry entry, in registry order.
    pub leaves: Vec<Var>,
    /// The feature map entering the head.
    pub features: Var,
    /// The flattened SWP output, for heads that have one.
    pub swp: Option<Var>,
    pub bn_updates: Vec<BnUpdate<T>>,
}

/// A built network: its config, parameter registry and layer wiring.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    stem_conv: ConvLayer,
    stem_bn: BnLayer,
    blocks: Vec<Block>,
    final_bn: BnLayer,
    head_start: usize,
    head: Head,
}

fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Streams for the independent initialisation draws.
const BACKBONE_STREAM: u64 = 0;
const HEAD_STREAM: u64 = 1;

/// Activation elements per micro-batch in inference mode. Early layers with
/// large maps run a few images at a time so their activations stay in
/// cache; once maps shrink the whole batch runs through together.
const INFER_ACTIVATION_BUDGET: usize = 1 << 16;

struct Builder<'r, T> {
    params: ParamStore<T>,
    rng: &'r mut ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn he_normal(&mut self, shape: &[usize], fan_in: usize) -> Result<Tensor<T>> {
        let std = libm_sqrt(2.0 / fan_in as f64);
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(self.rng);
                T::lit(std * z)
            })
            .collect();
        Tensor::from_vec(shape, data)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Result<ConvLayer> {
        let w = self.he_normal(&[cout, cin, k, k], cin * k * k)?;
        let w = self.params.push(format!("{name}.weight"), ParamKind::Weight, w)?;
        let b = self.params.push(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[cout])?)?;
        Ok(ConvLayer {
            w,
            b: Some(b),
            stride,
            pad,
        })
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<BnLayer> {
        Ok(BnLayer {
            gamma: self.params.push(format!("{name}.gamma"), ParamKind::Gamma, Tensor::full(&[c], T::one())?)?,
            beta: self.params.push(format!("{name}.beta"), ParamKind::Beta, Tensor::zeros(&[c])?)?,
            mean: self.params.push(format!("{name}.running_mean"), ParamKind::RunningMean, Tensor::zeros(&[c])?)?,
            var: self.params.push(format!("{name}.running_var"), ParamKind::RunningVar, Tensor::full(&[c], T::one())?)?,
        })
    }

    fn dense(&mut self, name: &str, inf: usize, outf: usize) -> Result<DenseLayer> {
        let w = self.he_normal(&[outf, inf], inf)?;
        Ok(DenseLayer {
            w: self.params.push(format!("{name}.weight"), ParamKind::Weight, w)?,
            b: self.params.push(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[outf])?)?,
        })
    }

    fn swp(&mut self, spec: &SwpSpec) -> Result<usize> {
        self.params.push("head.swp.masks", ParamKind::Mask, spec.uniform_masks())
    }

    fn head(&mut self, cfg: &ModelConfig) -> Result<Head> {
        let c = cfg.feature_channels()?;
        let f = cfg.feature_size()?;
        Ok(match cfg.head {
            HeadKind::Plain => Head::Plain {
                pool: f,
                fc: self.dense("head.fc", c, cfg.num_classes)?,
            },
            HeadKind::Swp => {
                cfg.check_swp(&cfg.swp)?;
                let masks = self.swp(&cfg.swp)?;
                let width = cfg.swp.output_width(c);
                Head::Swp {
                    masks,
                    bn: self.bn("head.bn", width)?,
                    fc: self.dense("head.fc", width, cfg.fc_nodes)?,
                    classifier: self.dense("head.classifier", cfg.fc_nodes, cfg.num_classes)?,
                }
            }
            HeadKind::Loc | HeadKind::LocSwp => {
                let (swp, width) = if cfg.head == HeadKind::LocSwp {
                    cfg.check_swp(&cfg.swp)?;
                    let masks = self.swp(&cfg.swp)?;
                    let width = cfg.swp.output_width(c);
                    (Some((masks, self.bn("head.bn", width)?)), width)
                } else {
                    (None, c)
                };
                let names = ["head.centre_x", "head.centre_y", "head.width", "head.height"];
                let mut outputs = [DenseLayer { w: 0, b: 0 }; 4];
                for ((o, name), n) in outputs.iter_mut().zip(names).zip(LOC_OUTPUTS) {
                    *o = self.dense(name, width, n)?;
                }
                Head::Loc { swp, pool: f, outputs }
            }
        })
    }
}

fn libm_sqrt(v: f64) -> f64 {
    num_traits::Float::sqrt(v)
}

/// Builds the network described by `config`, initialised deterministically
/// from `config.seed`.
pub fn build_model<T: Scalar>(config: &ModelConfig) -> Result<Model<T>> {
    config.validate()?;
    let mut rng = init_rng(config.seed, BACKBONE_STREAM);
    let mut b = Builder {
        params: ParamStore::new(),
        rng: &mut rng,
    };
    let stem = config.stem_channels()?;
    let stem_conv = b.conv("stem.conv", 3, stem, 7, 2, 3)?;
    let stem_bn = b.bn("stem.bn", stem)?;
    let plan = config.stage_plan()?;
    let mut blocks = Vec::new();
    let mut cin = stem;
    for (si, stage) in plan.stages.iter().enumerate() {
        for bi in 0..stage.blocks {
            let name = format!("stage{}.block{}", si + 1, bi);
            let stride = if bi == 0 { stage.stride } else { 1 };
            let (c, cout) = (stage.channels, stage.out_channels);
            let mut pre = Vec::new();
            let mut convs = Vec::new();
            if plan.bottleneck {
                pre.push(b.bn(&format!("{name}.bn1"), cin)?);
                convs.push(b.conv(&format!("{name}.conv1"), cin, c, 1, stride, 0)?);
                pre.push(b.bn(&format!("{name}.bn2"), c)?);
                convs.push(b.conv(&format!("{name}.conv2"), c, c, 3, 1, 1)?);
                pre.push(b.bn(&format!("{name}.bn3"), c)?);
                convs.push(b.conv(&format!("{name}.conv3"), c, cout, 1, 1, 0)?);
            } else {
                pre.push(b.bn(&format!("{name}.bn1"), cin)?);
                convs.push(b.conv(&format!("{name}.conv1"), cin, c, 3, stride, 1)?);
                pre.push(b.bn(&format!("{name}.bn2"), c)?);
                convs.push(b.conv(&format!("{name}.conv2"), c, cout, 3, 1, 1)?);
            }
            let shortcut = if stride != 1 || cin != cout {
                Some(b.conv(&format!("{name}.shortcut"), cin, cout, 1, stride, 0)?)
            } else {
                None
            };
            blocks.push(Block { pre, convs, shortcut });
            cin = cout;
        }
    }
    let final_bn = b.bn("final_bn", cin)?;
    let head_start = b.params.len();
    let mut head_rng = init_rng(config.seed, HEAD_STREAM);
    b.rng = &mut head_rng;
    let head = b.head(config)?;
    Ok(Model {
        config: *config,
        params: b.params,
        stem_conv,
        stem_bn,
        blocks,
        final_bn,
        head_start,
        head,
    })
}

/// [`build_model`] for localisation heads only.
pub fn build_localisation_model<T: Scalar>(config: &ModelConfig) -> Result<Model<T>> {
    if !config.head.is_loc() {
        return Err(Error::invalid("localisation model needs a loc head"));
    }
    build_model(config)
}

/// Swaps a plain head for SWP, batch norm, a `fc_nodes` dense layer and the
/// classifier. The backbone is kept as is.
pub fn attach_swp_head<T: Scalar>(model: Model<T>, swp: SwpSpec, fc_nodes: usize) -> Result<Model<T>> {
    if model.config.head != HeadKind::Plain {
        return Err(Error::invalid("attach_swp_head needs a model with the plain head"));
    }
    let config = ModelConfig {
        head: HeadKind::Swp,
        swp,
        fc_nodes,
        ..model.config
    };
    config.validate()?;
    model.replace_head(config, HEAD_STREAM + 1)
}

/// Total learnable scalars; batch-norm running statistics are excluded.
pub fn param_count<T: Scalar>(model: &Model<T>) -> usize {
    model.params.param_count()
}

/// Sum of scalar parameters without materialising any tensor.
pub fn count_params(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
    let bn = |c: usize| 2 * c;
    let dense = |i: usize, o: usize| i * o + o;
    let stem = config.stem_channels()?;
    let plan = config.stage_plan()?;
    let mut n = conv(3, stem, 7) + bn(stem);
    let mut cin = stem;
    for stage in &plan.stages {
        for bi in 0..stage.blocks {
            let stride = if bi == 0 { stage.stride } else { 1 };
            let (c, cout) = (stage.channels, stage.out_channels);
            n += if plan.bottleneck {
                bn(cin) + conv(cin, c, 1) + bn(c) + conv(c, c, 3) + bn(c) + conv(c, cout, 1)
            } else {
                bn(cin) + conv(cin, c, 3) + bn(c) + conv(c, cout, 3)
            };
            if stride != 1 || cin != cout {
                n += conv(cin, cout, 1);
            }
            cin = cout;
        }
    }
    n += bn(cin);
    let swp_width = config.swp.output_width(cin);
    n += match config.head {
        HeadKind::Plain => dense(cin, config.num_classes),
        HeadKind::Swp => {
            config.swp.param_count() + bn(swp_width) + dense(swp_width, config.fc_nodes) + dense(config.fc_nodes, config.num_classes)
        }
        HeadKind::Loc => LOC_OUTPUTS.iter().map(|&o| dense(cin, o)).sum(),
        HeadKind::LocSwp => {
            config.swp.param_count() + bn(swp_width) + LOC_OUTPUTS.iter().map(|&o| dense(swp_width, o)).sum::<usize>()
        }
    };
    Ok(n)
}

/// Images per micro-batch for stages whose activations hold `item`
/// elements per image.
fn micro_batch(item: usize, batch: usize) -> usize {
    (INFER_ACTIVATION_BUDGET / item.max(1)).clamp(1, batch)
}

/// Re-splits batch pieces into micro-batches of `want` images.
fn regroup<T: Scalar>(tape: &mut Tape<'_, T>, parts: Vec<Var>, want: usize) -> Result<Vec<Var>> {
    let sizes: Vec<usize> = parts.iter().map(|&p| tape.shape(p)[0]).collect();
    let (cur, batch) = (sizes[0], sizes.iter().sum::<usize>());
    if cur == want {
        return Ok(parts);
    }
    if want % cur == 0 && sizes[..sizes.len() - 1].iter().all(|&n| n == cur) {
        let mut out = Vec::new();
        for g in parts.chunks(want / cur) {
            out.push(match g {
                [p] => *p,
                _ => tape.concat_batch(g)?,
            });
            if g.len() > 1 {
                tape.release(g.iter().copied());
            }
        }
        return Ok(out);
    }
    let whole = match parts[..] {
        [p] => p,
        _ => tape.concat_batch(&parts)?,
    };
    if want == batch {
        return Ok(vec![whole]);
    }
    let out = (0..batch)
        .step_by(want)
        .map(|start| tape.slice_batch(whole, start, want.min(batch - start)))
        .collect::<Result<Vec<_>>>()?;
    tape.release(parts.into_iter().chain([whole]));
    Ok(out)
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Registry indices `>= head_start()` belong to the head.
    pub fn head_start(&self) -> usize {
        self.head_start
    }

    pub fn is_head_param(&self, i: usize) -> bool {
        i >= self.head_start
    }

    /// Rebuilds the head for `config`, keeping the backbone.
    fn replace_head(mut self, config: ModelConfig, stream: u64) -> Result<Model<T>> {
        let mut rng = init_rng(config.seed, stream);
        self.params.truncate(self.head_start);
        let mut b = Builder {
            params: core::mem::take(&mut self.params),
            rng: &mut rng,
        };
        let head = b.head(&config)?;
        self.params = b.params;
        self.head = head;
        self.config = config;
        Ok(self)
    }

    /// A fresh classifier for `new_classes`, drawn from the seed and class
    /// count. For the SWP head only the final dense layer is replaced.
    pub fn transfer_head(mut self, new_classes: usize, freeze_backbone: bool) -> Result<Model<T>> {
        if new_classes < 2 {
            return Err(Error::invalid("transfer target needs at least two classes"));
        }
        let stream = HEAD_STREAM + 2 + new_classes as u64;
        match self.head.clone() {
            Head::Plain { fc, .. } => {
                let config = ModelConfig {
                    num_classes: new_classes,
                    ..self.config
                };
                self = self.replace_head(config, stream)?;
                let _ = fc;
            }
            Head::Swp { classifier, .. } => {
                let mut rng = init_rng(self.config.seed, stream);
                let mut b = Builder {
                    params: core::mem::take(&mut self.params),
                    rng: &mut rng,
                };
                let inf = self.config.fc_nodes;
                let w = b.he_normal(&[new_classes, inf], inf)?;
                self.params = b.params;
                *self.params.tensor_mut(classifier.w) = w.with_grad();
                *self.params.tensor_mut(classifier.b) = Tensor::zeros(&[new_classes])?.with_grad();
                self.config.num_classes = new_classes;
            }
            Head::Loc { .. } => return Err(Error::invalid("transfer_head applies to classifiers")),
        }
        self.set_backbone_frozen(freeze_backbone);
        Ok(self)
    }

    /// Frozen parameters get no gradients and their batch norms normalise
    /// with running statistics even in train mode.
    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        let start = self.head_start;
        for (i, e) in self.params.entries_mut().iter_mut().enumerate() {
            if i < start && e.kind.trainable() {
                e.tensor.requires_grad = !frozen;
            }
        }
    }

    pub fn backbone_frozen(&self) -> bool {
        self.params.entries()[..self.head_start]
            .iter()
            .any(|e| e.kind.trainable() && !e.tensor.requires_grad)
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            params: self.params.cast(),
            stem_conv: self.stem_conv,
            stem_bn: self.stem_bn,
            blocks: self.blocks.clone(),
            final_bn: self.final_bn,
            head_start: self.head_start,
            head: self.head.clone(),
        }
    }

    /// Input shape expected for a batch of `batch` images.
    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, 3, self.config.input_size, self.config.input_size]
    }

    /// Records a forward pass of `x: [B, 3, S, S]`.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, mode: BnMode) -> Result<ForwardOut<T>> {
        let s = self.config.input_size;
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::shape("model input", shape, &[0, 3, s, s]));
        }
        let batch = shape[0];
        let leaves: Vec<Var> = self.params.entries().iter().map(|e| tape.leaf(&e.tensor)).collect();
        let mut fx = Fwd {
            model: self,
            leaves: &leaves,
            mode,
            updates: Vec::new(),
        };
        // Inference runs each micro-batch depth-first through every run of
        // stages that shares its micro-batch size. Stage 0 is the stem.
        let split = mode == BnMode::Infer && batch > 1;
        let stages = 1 + self.blocks.len();
        let stem_item = {
            let c = &self.stem_conv;
            let w = self.params.tensor(c.w).shape();
            let side = (s + 2 * c.pad - w[2]) / c.stride + 1;
            w[0] * side * side
        };
        let want_for = |item: usize| if split { micro_batch(item, batch) } else { batch };
        let mut parts = vec![x];
        let mut stage = 0;
        while stage < stages {
            let want = match stage {
                0 => want_for(stem_item),
                _ => want_for(tape.shape(parts[0])[1..].iter().product()),
            };
            parts = regroup(tape, parts, want)?;
            let mut end = stage + 1;
            parts[0] = fx.stage_released(tape, parts[0], stage)?;
            while end < stages && want_for(tape.shape(parts[0])[1..].iter().product()) == want {
                parts[0] = fx.stage_released(tape, parts[0], end)?;
                end += 1;
            }
            for p in parts[1..].iter_mut() {
                for i in stage..end {
                    *p = fx.stage_released(tape, *p, i)?;
                }
            }
            stage = end;
        }
        let h = match parts[..] {
            [h] => h,
            _ => {
                let h = tape.concat_batch(&parts)?;
                tape.release(parts);
                h
            }
        };
        let features = fx.bn_relu(tape, h, &self.final_bn)?;
        let (outputs, swp) = fx.head(tape, features)?;
        let bn_updates = fx.updates;
        Ok(ForwardOut {
            outputs,
            leaves,
            features,
            swp,
            bn_updates,
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Channels entering residual block `i`.
    pub fn block_in_channels(&self, i: usize) -> Result<usize> {
        let b = self.blocks.get(i).ok_or_else(|| Error::invalid(alloc::format!("no block {i}")))?;
        Ok(self.params.tensor(b.pre[0].gamma).numel())
    }

    /// Records residual block `i` alone on `x`. Also returns the leaf of
    /// every registry entry, in registry order.
    pub fn forward_block<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var, i: usize, mode: BnMode) -> Result<(Var, Vec<Var>)> {
        let block = self.blocks.get(i).ok_or_else(|| Error::invalid(alloc::format!("no block {i}")))?;
        let leaves: Vec<Var> = self.params.entries().iter().map(|e| tape.leaf(&e.tensor)).collect();
        let mut fx = Fwd {
            model: self,
            leaves: &leaves,
            mode,
            updates: Vec::new(),
        };
        let y = fx.block(tape, x, block)?;
        Ok((y, leaves))
    }

    /// Records the head alone on a post-activation feature map
    /// `[B, C, F, F]`. Returns the head outputs and all registry leaves.
    pub fn forward_head<'a>(&'a self, tape: &mut Tape<'a, T>, features: Var, mode: BnMode) -> Result<(Vec<Var>, Vec<Var>)> {
        let leaves: Vec<Var> = self.params.entries().iter().map(|e| tape.leaf(&e.tensor)).collect();
        let mut fx = Fwd {
            model: self,
            leaves: &leaves,
            mode,
            updates: Vec::new(),
        };
        let (outputs, _) = fx.head(tape, features)?;
        Ok((outputs, leaves))
    }

    /// Folds train-mode batch statistics into the running averages.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<T>]) {
        for u in updates {
            let momentum = crate::nn::BN_MOMENTUM;
            let (mean, var) = (u.mean, u.var);
            let mut m = core::mem::replace(self.params.tensor_mut(mean), Tensor::scalar(T::zero()));
            crate::nn::batchnorm::update_running(m.data_mut(), self.params.tensor_mut(var).data_mut(), &u.stats, momentum);
            *self.params.tensor_mut(mean) = m;
        }
    }

    /// Infer-mode forward of a batch, returning the head outputs.
    pub fn predict(&self, x: Tensor<T>, check_finite: bool) -> Result<Vec<Tensor<T>>> {
        let mut tape = if check_finite { Tape::new() } else { Tape::unchecked() }.inference();
        let xv = tape.input(x);
        let out = self.forward(&mut tape, xv, BnMode::Infer)?;
        Ok(out.outputs.iter().map(|&v| tape.to_tensor(v)).collect())
    }

    /// Infer-mode SWP output `[B, K*C]`, for heads that have one.
    pub fn swp_output(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new().inference();
        let xv = tape.input(x);
        let out = self.forward(&mut tape, xv, BnMode::Infer)?;
        let v = out.swp.ok_or_else(|| Error::invalid("model has no SWP layer"))?;
        Ok(tape.to_tensor(v))
    }

    /// Registry names, in order.
    pub fn param_names(&self) -> Vec<String> {
        self.params.entries().iter().map(|e| e.name.clone()).collect()
    }
}

struct Fwd<'m, 'l, T: Scalar> {
    model: &'m Model<T>,
    leaves: &'l [Var],
    mode: BnMode,
    updates: Vec<BnUpdate<T>>,
}

impl<'m, T: Scalar> Fwd<'m, '_, T> {
    fn conv(&self, tape: &mut Tape<'m, T>, x: Var, c: &ConvLayer) -> Result<Var> {
        tape.conv2d(x, self.leaves[c.w], c.b.map(|b| self.leaves[b]), c.stride, c.pad)
    }

    fn dense(&self, tape: &mut Tape<'m, T>, x: Var, d: &DenseLayer) -> Result<Var> {
        tape.linear(x, self.leaves[d.w], Some(self.leaves[d.b]))
    }

    fn bn(&mut self, tape: &mut Tape<'m, T>, x: Var, l: &BnLayer) -> Result<Var> {
        let p = &self.model.params;
        let (g, b) = (self.leaves[l.gamma], self.leaves[l.beta]);
        if self.mode == BnMode::Train && p.tensor(l.gamma).requires_grad {
            let (y, stats) = tape.batch_norm_train(x, g, b, BN_EPS)?;
            self.updates.push(BnUpdate {
                mean: l.mean,
                var: l.var,
                stats,
            });
            Ok(y)
        } else {
            tape.batch_norm_infer(x, g, b, p.tensor(l.mean).data(), p.tensor(l.var).data(), BN_EPS)
        }
    }

    fn bn_relu(&mut self, tape: &mut Tape<'m, T>, x: Var, l: &BnLayer) -> Result<Var> {
        let y = self.bn(tape, x, l)?;
        tape.relu(y)
    }

    /// Runs a stage, then frees its intermediates and its input on an
    /// inference tape. The model input itself is left alone.
    fn stage_released(&mut self, tape: &mut Tape<'m, T>, x: Var, i: usize) -> Result<Var> {
        let mark = tape.len();
        let y = self.stage(tape, x, i)?;
        tape.release(tape.recorded_since(mark, y));
        if i > 0 {
            tape.release([x]);
        }
        Ok(y)
    }

    /// Stage 0 is stem conv, bn-relu and max pool; stage `i > 0` is block `i - 1`.
    fn stage(&mut self, tape: &mut Tape<'m, T>, x: Var, i: usize) -> Result<Var> {
        let model = self.model;
        match i {
            0 => {
                let h = self.conv(tape, x, &model.stem_conv)?;
                let h = self.bn_relu(tape, h, &model.stem_bn)?;
                tape.pool2d(h, &PoolSpec::max(3, 2, 1))
            }
            _ => self.block(tape, x, &model.blocks[i - 1]),
        }
    }

    fn block(&mut self, tape: &mut Tape<'m, T>, x: Var, block: &Block) -> Result<Var> {
        let mut r = x;
        for (bn, conv) in block.pre.iter().zip(&block.convs) {
            let a = self.bn_relu(tape, r, bn)?;
            r = self.conv(tape, a, conv)?;
        }
        let s = match &block.shortcut {
            Some(c) => self.conv(tape, x, c)?,
            None => x,
        };
        tape.add(r, s)
    }

    fn head(&mut self, tape: &mut Tape<'m, T>, features: Var) -> Result<(Vec<Var>, Option<Var>)> {
        let leaves = self.leaves;
        Ok(match &self.model.head {
            Head::Plain { pool, fc } => {
                let p = tape.pool2d(features, &PoolSpec::average(*pool, 1))?;
                let p = tape.flatten(p)?;
                (alloc::vec![self.dense(tape, p, fc)?], None)
            }
            Head::Swp { masks, bn, fc, classifier } => {
                let v = tape.swp(features, leaves[*masks])?;
                let n = self.bn(tape, v, bn)?;
                let hid = self.dense(tape, n, fc)?;
                (alloc::vec![self.dense(tape, hid, classifier)?], Some(v))
            }
            Head::Loc { swp, pool, outputs } => {
                let (pooled, swp_out) = match swp {
                    Some((masks, bn)) => {
                        let v = tape.swp(features, leaves[*masks])?;
                        (self.bn(tape, v, bn)?, Some(v))
                    }
                    None => {
                        let p = tape.pool2d(features, &PoolSpec::average(*pool, 1))?;
                        (tape.flatten(p)?, None)
                    }
                };
                let outs = outputs.iter().map(|d| self.dense(tape, pooled, d)).collect::<Result<Vec<_>>>()?;
                (outs, swp_out)
            }
        })
    }
}

impl ParamSet for Model<f64> {
    fn count(&self) -> usize {
        self.params.len()
    }

    fn tensor(&self, i: usize) -> &Tensor<f64> {
        self.params.tensor(i)
    }

    fn tensor_mut(&mut self, i: usize) -> &mut Tensor<f64> {
        self.params.tensor_mut(i)
    }
}
