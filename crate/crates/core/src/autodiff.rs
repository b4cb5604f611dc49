//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node whose inputs are earlier nodes, so the tape is
//! topologically ordered by construction and the backward pass is a single
//! reverse sweep that visits each node once. Parameters enter the tape as
//! borrowed leaves; the tape never mutates them. [`Tape::backward`] returns
//! the leaf gradients, which callers fold into their tensors afterwards.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use crate::nn::batchnorm::{self, BatchStats, BnGeom};
use crate::nn::conv::{self, ConvGeom};
use crate::nn::pool::{self, PoolGeom};
use crate::nn::{dense, loss, PoolKind, PoolSpec};
use crate::swp::{self, SwpGeom};
use crate::tensor::{check_shape, numel};
use crate::{Error, Result, Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        dims: (usize, usize, usize),
    },
    /// `b` is broadcast along the leading axes of `a`.
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
    },
    Relu(Var),
    Scale(Var, T),
    Sum(Var),
    Reshape(Var),
    SliceBatch {
        x: Var,
        start: usize,
    },
    ConcatBatch(Vec<Var>),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        g: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        g: BnGeom,
        train: bool,
    },
    Pool {
        x: Var,
        g: PoolGeom,
        argmax: Vec<u32>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: (usize, usize, usize),
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
        classes: usize,
    },
    Swp {
        x: Var,
        masks: Var,
        g: SwpGeom,
    },
}

struct Node<'a, T: Clone> {
    value: Cow<'a, [T]>,
    shape: Vec<usize>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations for one forward pass.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    check_finite: bool,
    no_grad: bool,
    track_kinks: bool,
    kink_margin: Option<T>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    /// A tape that rejects NaN/Inf outputs.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: true,
            no_grad: false,
            track_kinks: false,
            kink_margin: None,
        }
    }

    /// Skips the per-op finiteness scan, for timing runs.
    pub fn unchecked() -> Self {
        Tape {
            check_finite: false,
            ..Self::new()
        }
    }

    /// Also records how close relu inputs and max-pool runners-up come to a
    /// non-differentiable point; see [`Self::kink_margin`].
    pub fn tracking_kinks(mut self) -> Self {
        self.track_kinks = true;
        self
    }

    /// Forward-only tape: [`Self::release`] frees values and
    /// [`Self::backward`] is refused.
    pub fn inference(mut self) -> Self {
        self.no_grad = true;
        self
    }

    pub fn is_inference(&self) -> bool {
        self.no_grad
    }

    /// Drops the values of `vars` on an inference tape, so their buffers
    /// can be reused by later ops. No-op on a training tape.
    pub fn release(&mut self, vars: impl IntoIterator<Item = Var>) {
        if !self.no_grad {
            return;
        }
        for v in vars {
            let node = &mut self.nodes[v.0];
            node.value = Cow::Owned(Vec::new());
            node.op = Op::Leaf;
        }
    }

    /// Nodes recorded at or after position `from`, except `keep`.
    pub fn recorded_since(&self, from: usize, keep: Var) -> impl Iterator<Item = Var> {
        (from..self.nodes.len()).filter(move |&i| i != keep.0).map(Var)
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Smallest `|x|` fed to a relu and smallest max-pool winner margin seen
    /// so far. `None` until a tracked op runs.
    pub fn kink_margin(&self) -> Option<T> {
        self.kink_margin
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Borrows `t` as a leaf; it needs grad iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t.data()),
            shape: t.shape().to_vec(),
            op: Op::Leaf,
            needs_grad: t.requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Takes ownership of `t` as a leaf.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        let needs_grad = t.requires_grad;
        self.nodes.push(Node {
            value: Cow::Owned(t.into_data()),
            shape,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        Ok(self.input(Tensor::from_vec(shape, data)?))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        Tensor::from_vec(self.shape(v), self.value(v).to_vec()).expect("node shape matches value")
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Vec<T>, shape: Vec<usize>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        self.push_cow(op_name, Cow::Owned(value), shape, op, inputs)
    }

    fn push_cow(&mut self, op_name: &'static str, value: Cow<'a, [T]>, shape: Vec<usize>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        debug_assert_eq!(value.len(), numel(&shape));
        if self.check_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn note_kink(&mut self, margin: T) {
        self.kink_margin = Some(self.kink_margin.map_or(margin, |m| m.min(margin)));
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = dense::matmul(self.value(a), self.value(b), m, k, n);
        self.push("matmul", out, vec![m, n], Op::MatMul { a, b, dims: (m, k, n) }, &[a, b])
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let suffix = |big: &[usize], small: &[usize]| small.len() <= big.len() && big[big.len() - small.len()..] == *small;
        let (a, b) = if suffix(sa, sb) {
            (a, b)
        } else if kind != Binary::Sub && suffix(sb, sa) {
            (b, a)
        } else {
            return Err(Error::shape("elementwise", sa, sb));
        };
        let (va, vb) = (self.value(a), self.value(b));
        let f: fn(T, T) -> T = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let mut out = Vec::with_capacity(va.len());
        for chunk in va.chunks(vb.len().max(1)) {
            out.extend(chunk.iter().zip(vb).map(|(&x, &y)| f(x, y)));
        }
        let shape = self.shape(a).to_vec();
        self.push("elementwise", out, shape, Op::Binary { kind, a, b }, &[a, b])
    }

    /// Elementwise sum; the second operand may be broadcast along leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        if self.track_kinks {
            let margin = self.value(x).iter().map(|v| v.abs()).fold(T::infinity(), T::min);
            self.note_kink(margin);
        }
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let shape = self.shape(x).to_vec();
        self.push("relu", out, shape, Op::Relu(x), &[x])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", out, shape, Op::Scale(x, c), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).iter().copied().sum();
        self.push("sum", vec![total], vec![1], Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape)?;
        if numel(shape) != self.value(x).len() {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = self.value(x).to_vec();
        self.push("reshape", out, shape.to_vec(), Op::Reshape(x), &[x])
    }

    /// `[B, C*H*W...]` flattening of everything after the batch axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let shape = [s[0], s[1..].iter().product()];
        self.reshape(x, &shape)
    }

    /// Items `start..start + len` along the leading axis.
    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.is_empty() || len == 0 || start + len > s[0] {
            return Err(Error::shape("slice_batch", s, &[start, len]));
        }
        let item: usize = s[1..].iter().product();
        let mut shape = s.to_vec();
        shape[0] = len;
        // Slices of borrowed data borrow too.
        let range = start * item..(start + len) * item;
        let out = match &self.nodes[x.0].value {
            Cow::Borrowed(d) => Cow::Borrowed(&d[range]),
            Cow::Owned(d) => Cow::Owned(d[range].to_vec()),
        };
        self.push_cow("slice_batch", out, shape, Op::SliceBatch { x, start }, &[x])
    }

    /// Joins `parts` along the leading axis; trailing axes must agree.
    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat_batch needs at least one part"));
        };
        let mut shape = self.shape(first).to_vec();
        if shape.is_empty() {
            return Err(Error::shape("concat_batch", &shape, &[1]));
        }
        shape[0] = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != shape.len() || s[1..] != shape[1..] {
                return Err(Error::shape("concat_batch", s, &shape));
            }
            shape[0] += s[0];
            out.extend_from_slice(self.value(p));
        }
        self.push("concat_batch", out, shape, Op::ConcatBatch(parts.to_vec()), parts)
    }

    /// Cross-correlation of `x: [B,C,H,W]` with `w: [O,C,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let g = ConvGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [g.out_c] {
                return Err(Error::shape("conv2d bias", self.shape(b), &[g.out_c]));
            }
        }
        let out = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &g);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv2d", out, g.output_shape(), Op::Conv { x, w, b, g }, &inputs)
    }

    fn check_affine(&self, x: Var, gamma: Var, beta: Var) -> Result<BnGeom> {
        let channels = self.shape(gamma).iter().product();
        if self.shape(beta) != self.shape(gamma) {
            return Err(Error::shape("batch_norm", self.shape(gamma), self.shape(beta)));
        }
        BnGeom::new(self.shape(x), channels)
    }

    /// Normalises by this batch's per-channel statistics, which are returned
    /// for the caller's running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let g = self.check_affine(x, gamma, beta)?;
        let stats = batchnorm::batch_stats(self.value(x), &g)?;
        let inv_std = batchnorm::inv_std(&stats.var, eps);
        let out = batchnorm::normalise(self.value(x), self.value(gamma), self.value(beta), &stats.mean, &inv_std, &g);
        let shape = self.shape(x).to_vec();
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            mean: stats.mean.clone(),
            inv_std,
            g,
            train: true,
        };
        let y = self.push("batch_norm", out, shape, op, &[x, gamma, beta])?;
        Ok((y, stats))
    }

    /// Normalises by fixed statistics.
    pub fn batch_norm_infer(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: f64) -> Result<Var> {
        let g = self.check_affine(x, gamma, beta)?;
        if mean.len() != g.channels || var.len() != g.channels {
            return Err(Error::shape("batch_norm running stats", &[mean.len(), var.len()], &[g.channels]));
        }
        let inv_std = batchnorm::inv_std(var, eps);
        let out = batchnorm::normalise(self.value(x), self.value(gamma), self.value(beta), mean, &inv_std, &g);
        let shape = self.shape(x).to_vec();
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            mean: mean.to_vec(),
            inv_std,
            g,
            train: false,
        };
        self.push("batch_norm", out, shape, op, &[x, gamma, beta])
    }

    pub fn pool2d(&mut self, x: Var, spec: &PoolSpec) -> Result<Var> {
        let g = PoolGeom::new(self.shape(x), spec)?;
        let track = self.track_kinks && spec.kind == PoolKind::Max;
        let out = pool::forward(self.value(x), &g, track);
        if let Some(gap) = out.min_gap {
            self.note_kink(gap);
        }
        let s = self.shape(x);
        let shape = vec![s[0], s[1], g.out_h, g.out_w];
        self.push("pool2d", out.y, shape, Op::Pool { x, g, argmax: out.argmax }, &[x])
    }

    /// `x: [B, in]`, `w: [out, in]`, `b: [out]` gives `x wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::shape("linear", sx, sw));
        }
        let dims = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [dims.2] {
                return Err(Error::shape("linear bias", self.shape(b), &[dims.2]));
            }
        }
        let out = dense::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), dims.0, dims.1, dims.2);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", out, vec![dims.0, dims.2], Op::Linear { x, w, b, dims }, &inputs)
    }

    /// Mean cross-entropy of `logits: [B, classes]` against class ids.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::shape("softmax_cross_entropy", s, &[targets.len()]));
        }
        let classes = s[1];
        let (loss, probs) = loss::softmax_ce_forward(self.value(logits), targets, classes)?;
        let op = Op::SoftmaxCe {
            logits,
            targets: targets.to_vec(),
            probs,
            classes,
        };
        self.push("softmax_cross_entropy", vec![loss], vec![1], op, &[logits])
    }

    /// Spatially-weighted pooling of `x: [B,C,H,W]` by `masks: [K,H,W]`.
    pub fn swp(&mut self, x: Var, masks: Var) -> Result<Var> {
        let g = SwpGeom::new(self.shape(x), self.shape(masks))?;
        let out = swp::forward(self.value(x), self.value(masks), &g);
        self.push("swp", out, vec![g.batch, g.masks * g.channels], Op::Swp { x, masks, g }, &[x, masks])
    }

    /// Gradients of the scalar `loss` with respect to every leaf that needs
    /// them. The tape is left intact, so calling this twice yields identical
    /// results.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.no_grad {
            return Err(Error::invalid("backward on an inference tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        if !self.needs(loss) {
            return Err(Error::DetachedLoss);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, contribution: Vec<T>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&contribution).for_each(|(a, &c)| *a = *a + c),
            slot @ None => *slot = Some(contribution),
        };
        let need = |v: Var| self.needs(v);
        let val = |v: Var| self.value(v);
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, dims } => {
                let (da, db) = dense::matmul_backward(val(a), val(b), g, dims, (need(a), need(b)));
                da.map(|d| acc(a, d));
                db.map(|d| acc(b, d));
            }
            &Op::Binary { kind, a, b } => {
                let (va, vb) = (val(a), val(b));
                if need(a) {
                    let da = match kind {
                        Binary::Add | Binary::Sub => g.to_vec(),
                        Binary::Mul => g.chunks(vb.len()).flat_map(|c| c.iter().zip(vb).map(|(&d, &y)| d * y)).collect(),
                    };
                    acc(a, da);
                }
                if need(b) {
                    let mut db = vec![T::zero(); vb.len()];
                    for (gc, ac) in g.chunks(vb.len()).zip(va.chunks(vb.len())) {
                        for ((d, &gv), &av) in db.iter_mut().zip(gc).zip(ac) {
                            *d = *d
                                + match kind {
                                    Binary::Add => gv,
                                    Binary::Sub => -gv,
                                    Binary::Mul => gv * av,
                                };
                        }
                    }
                    acc(b, db);
                }
            }
            &Op::Relu(x) => {
                let dx = g.iter().zip(val(x)).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }).collect();
                acc(x, dx);
            }
            &Op::Scale(x, c) => acc(x, g.iter().map(|&d| d * c).collect()),
            &Op::Sum(x) => acc(x, vec![g[0]; val(x).len()]),
            &Op::Reshape(x) => acc(x, g.to_vec()),
            &Op::SliceBatch { x, start } => {
                let item = g.len() / self.nodes[i].shape[0];
                let mut dx = vec![T::zero(); val(x).len()];
                dx[start * item..][..g.len()].copy_from_slice(g);
                acc(x, dx);
            }
            Op::ConcatBatch(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    if need(p) {
                        acc(p, g[off..off + n].to_vec());
                    }
                    off += n;
                }
            }
            &Op::Conv { x, w, b, g: ref geom } => {
                let need_b = b.is_some_and(need);
                let out = conv::backward(val(x), val(w), g, geom, (need(x), need(w), need_b));
                out.dx.map(|d| acc(x, d));
                out.dw.map(|d| acc(w, d));
                if let (Some(b), Some(db)) = (b, out.db) {
                    acc(b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                g: geom,
                train,
            } => {
                let out = batchnorm::backward(
                    val(*x),
                    val(*gamma),
                    mean,
                    inv_std,
                    g,
                    geom,
                    *train,
                    (need(*x), need(*gamma), need(*beta)),
                );
                out.dx.map(|d| acc(*x, d));
                out.dgamma.map(|d| acc(*gamma, d));
                out.dbeta.map(|d| acc(*beta, d));
            }
            Op::Pool { x, g: geom, argmax } => acc(*x, pool::backward(g, geom, argmax)),
            &Op::Linear { x, w, b, dims } => {
                let need_b = b.is_some_and(need);
                let (dx, dw, db) = dense::backward(val(x), val(w), g, dims, (need(x), need(w), need_b));
                dx.map(|d| acc(x, d));
                dw.map(|d| acc(w, d));
                if let (Some(b), Some(db)) = (b, db) {
                    acc(b, db);
                }
            }
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
                classes,
            } => acc(*logits, loss::softmax_ce_backward(probs, targets, *classes, g[0])),
            &Op::Swp { x, masks, g: ref geom } => {
                let (dx, dm) = swp::backward(val(x), val(masks), g, geom, (need(x), need(masks)));
                dx.map(|d| acc(x, d));
                dm.map(|d| acc(masks, d));
            }
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` for leaves that do not need grad or that the loss does not reach.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` (if any) into `t.grad`.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor<T>) -> Result<()> {
        match self.get(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Fill;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let x = t(&[2, 2], &[3.0, -1.5, 0.25, 7.0]);
        let mut tape = Tape::new();
        let (e, xv) = (tape.leaf(&eye), tape.leaf(&x));
        let y = tape.matmul(e, xv).unwrap();
        assert_eq!(tape.value(y), x.data());
    }

    #[test]
    fn scalar_matmul() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(&[1, 1], vec![2.0]).unwrap();
        let b = tape.constant(&[1, 1], vec![3.0]).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[6.0]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn add_zeros_is_identity() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(&[2, 2], vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        let z = tape.constant(&[2, 2], vec![0.0; 4]).unwrap();
        let y = tape.add(x, z).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn bias_broadcast_and_reject() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let bad = tape.constant(&[2], vec![1.0, 2.0]).unwrap();
        assert!(tape.add(x, bad).is_err());
    }

    #[test]
    fn batch_slices_and_concat() {
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let a = tape.slice_batch(xv, 2, 1).unwrap();
        let b = tape.slice_batch(xv, 0, 2).unwrap();
        assert_eq!(tape.shape(b), &[2, 2]);
        let c = tape.concat_batch(&[a, b, a]).unwrap();
        assert_eq!(tape.shape(c), &[4, 2]);
        assert_eq!(tape.value(c), &[5.0, 6.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let loss = tape.sum(c).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        assert!(tape.slice_batch(xv, 2, 2).is_err());
        assert!(tape.slice_batch(xv, 0, 0).is_err());
        let odd = tape.constant(&[1, 3], vec![0.0; 3]).unwrap();
        assert!(tape.concat_batch(&[xv, odd]).is_err());
        assert!(tape.concat_batch(&[]).is_err());
    }

    #[test]
    fn slices_of_borrowed_values_share_storage() {
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let s = tape.slice_batch(xv, 1, 2).unwrap();
        assert_eq!(tape.value(s), &[3.0, 4.0, 5.0, 6.0]);
        assert!(core::ptr::eq(tape.value(s).as_ptr(), x.data()[2..].as_ptr()));
        let owned = tape.input(x.clone());
        let s = tape.slice_batch(owned, 1, 2).unwrap();
        assert_eq!(tape.value(s), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn inference_tape_releases_values_and_refuses_backward() {
        let x = t(&[2], &[1.0, -2.0]).with_grad();
        let mut tape = Tape::new().inference();
        assert!(tape.is_inference());
        let xv = tape.leaf(&x);
        let mark = tape.len();
        let r = tape.relu(xv).unwrap();
        let loss = tape.sum(r).unwrap();
        tape.release(tape.recorded_since(mark, loss));
        assert!(tape.value(r).is_empty());
        assert_eq!(tape.value(loss), &[1.0]);
        assert!(tape.backward(loss).is_err());

        // A training tape ignores release.
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let r = tape.relu(xv).unwrap();
        tape.release([r]);
        assert_eq!(tape.value(r), &[1.0, 0.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let x = t(&[3], &[1.0, 2.0, 3.0]).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let sq = tape.mul(xv, xv).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_has_zero_grads() {
        let x = t(&[3], &[1.0, 2.0, 3.0]).with_grad();
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let s = tape.sum(xv).unwrap();
        let loss = tape.sub(s, s).unwrap();
        assert_eq!(tape.value(loss), &[0.0]);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_errors() {
        let x = t(&[3], &[1.0, 2.0, 3.0]).with_grad();
        let c = t(&[3], &[1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        assert!(matches!(tape.backward(xv), Err(Error::NonScalarLoss(_))));
        let cv = tape.leaf(&c);
        let detached = tape.sum(cv).unwrap();
        assert_eq!(tape.backward(detached), Err(Error::DetachedLoss));
    }

    #[test]
    fn repeated_backward_accumulates_when_absorbed() {
        let mut x = t(&[3], &[1.0, 2.0, 3.0]).with_grad();
        let grads = {
            let mut tape = Tape::new();
            let xv = tape.leaf(&x);
            let sq = tape.mul(xv, xv).unwrap();
            let loss = tape.sum(sq).unwrap();
            let first = tape.backward(loss).unwrap();
            let second = tape.backward(loss).unwrap();
            assert_eq!(first, second);
            (first, second, xv)
        };
        grads.0.accumulate_into(grads.2, &mut x).unwrap();
        grads.1.accumulate_into(grads.2, &mut x).unwrap();
        assert_eq!(x.grad().unwrap(), &[4.0, 8.0, 12.0]);
    }

    #[test]
    fn non_finite_detected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(&[2], vec![f32::MAX, 1.0]).unwrap();
        assert_eq!(tape.scale(x, 10.0), Err(Error::NonFinite { op: "scale" }));
        let mut fast = Tape::<f32>::unchecked();
        let x = fast.constant(&[2], vec![f32::MAX, 1.0]).unwrap();
        assert!(fast.scale(x, 10.0).is_ok());
    }

    #[test]
    fn frozen_leaf_gets_no_grad() {
        let w = Tensor::<f64>::new(&[2, 2], Fill::Scalar(1.0)).unwrap();
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).with_grad();
        let mut tape = Tape::new();
        let (wv, xv) = (tape.leaf(&w), tape.leaf(&x));
        let y = tape.matmul(wv, xv).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(wv).is_none());
        assert_eq!(grads.get(xv).unwrap(), &[2.0, 2.0, 2.0, 2.0]);
    }
}
