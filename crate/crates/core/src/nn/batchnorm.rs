use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old running statistic in `running = m * running + (1 - m) * batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Per-channel mean and (biased) variance of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// `[batch, C]` or `[batch, C, H, W]` viewed as `(batch, C, H*W)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct BnGeom {
    pub batch: usize,
    pub channels: usize,
    pub spatial: usize,
}

impl BnGeom {
    pub fn new(shape: &[usize], channels: usize) -> Result<Self> {
        let ok = matches!(shape.len(), 2 | 4) && shape[1] == channels;
        if !ok {
            return Err(Error::shape("batch_norm", shape, &[channels]));
        }
        Ok(BnGeom {
            batch: shape[0],
            channels,
            spatial: shape[2..].iter().product(),
        })
    }

    fn count(&self) -> usize {
        self.batch * self.spatial
    }

    fn for_channel<'s, T>(&self, x: &'s [T], c: usize) -> impl Iterator<Item = &'s [T]> + 's {
        let (channels, spatial) = (self.channels, self.spatial);
        (0..self.batch).map(move |b| &x[(b * channels + c) * spatial..][..spatial])
    }
}

pub(crate) fn batch_stats<T: Scalar>(x: &[T], g: &BnGeom) -> Result<BatchStats<T>> {
    let n = g.count();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let inv_n = T::lit(1.0 / n as f64);
    let mut mean = vec![T::zero(); g.channels];
    let mut var = vec![T::zero(); g.channels];
    for c in 0..g.channels {
        let m = g.for_channel(x, c).flat_map(|s| s.iter().copied()).sum::<T>() * inv_n;
        let v = g
            .for_channel(x, c)
            .flat_map(|s| s.iter().map(move |&v| (v - m) * (v - m)))
            .sum::<T>()
            * inv_n;
        mean[c] = m;
        var[c] = v;
    }
    Ok(BatchStats { mean, var })
}

pub(crate) fn inv_std<T: Scalar>(var: &[T], eps: f64) -> Vec<T> {
    var.iter().map(|&v| T::one() / (v + T::lit(eps)).sqrt()).collect()
}

pub(crate) fn normalise<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], mean: &[T], inv_std: &[T], g: &BnGeom) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for b in 0..g.batch {
        for c in 0..g.channels {
            let off = (b * g.channels + c) * g.spatial;
            let scale = gamma[c] * inv_std[c];
            let shift = beta[c] - mean[c] * scale;
            for (d, &s) in y[off..off + g.spatial].iter_mut().zip(&x[off..off + g.spatial]) {
                *d = s * scale + shift;
            }
        }
    }
    y
}

pub(crate) struct BnGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dgamma: Option<Vec<T>>,
    pub dbeta: Option<Vec<T>>,
}

/// Backward for both modes. In train mode the statistics depend on `x`, which
/// adds the two mean-correction terms to `dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    dy: &[T],
    g: &BnGeom,
    train: bool,
    need: (bool, bool, bool),
) -> BnGrads<T> {
    let n = T::lit(g.count() as f64);
    let mut dgamma = vec![T::zero(); g.channels];
    let mut dbeta = vec![T::zero(); g.channels];
    for c in 0..g.channels {
        let (mut sg, mut sb) = (T::zero(), T::zero());
        for (xs, dys) in g.for_channel(x, c).zip(g.for_channel(dy, c)) {
            for (&xv, &d) in xs.iter().zip(dys) {
                sg = sg + d * (xv - mean[c]) * inv_std[c];
                sb = sb + d;
            }
        }
        dgamma[c] = sg;
        dbeta[c] = sb;
    }
    let dx = need.0.then(|| {
        let mut dx = vec![T::zero(); x.len()];
        for b in 0..g.batch {
            for c in 0..g.channels {
                let off = (b * g.channels + c) * g.spatial;
                let k = gamma[c] * inv_std[c];
                for i in off..off + g.spatial {
                    dx[i] = if train {
                        let xhat = (x[i] - mean[c]) * inv_std[c];
                        k / n * (n * dy[i] - dbeta[c] - xhat * dgamma[c])
                    } else {
                        k * dy[i]
                    };
                }
            }
        }
        dx
    });
    BnGrads {
        dx,
        dgamma: need.1.then_some(dgamma),
        dbeta: need.2.then_some(dbeta),
    }
}

/// Stand-alone batch-normalisation layer with its running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BnMode,
}

impl<T: Scalar> BatchNormState<T> {
    /// gamma = 1, beta = 0, running mean 0 and variance 1.
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNormState {
            gamma: Tensor::full(&[channels], T::one())?.with_grad(),
            beta: Tensor::zeros(&[channels])?.with_grad(),
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], T::one())?,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            mode: BnMode::Train,
        })
    }

    /// Records the layer on `tape`. Train mode returns the batch statistics;
    /// pass them to [`Self::update_running`] once the tape is done.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a, T>, x: Var) -> Result<(Var, Option<BatchStats<T>>)> {
        let gamma = tape.leaf(&self.gamma);
        let beta = tape.leaf(&self.beta);
        match self.mode {
            BnMode::Train => {
                let (y, stats) = tape.batch_norm_train(x, gamma, beta, self.eps)?;
                Ok((y, Some(stats)))
            }
            BnMode::Infer => {
                let y = tape.batch_norm_infer(
                    x,
                    gamma,
                    beta,
                    self.running_mean.data(),
                    self.running_var.data(),
                    self.eps,
                )?;
                Ok((y, None))
            }
        }
    }

    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        update_running(
            self.running_mean.data_mut(),
            self.running_var.data_mut(),
            stats,
            self.momentum,
        );
    }
}

pub(crate) fn update_running<T: Scalar>(mean: &mut [T], var: &mut [T], stats: &BatchStats<T>, momentum: f64) {
    let m = T::lit(momentum);
    let rest = T::one() - m;
    for (r, &s) in mean.iter_mut().zip(&stats.mean) {
        *r = m * *r + rest * s;
    }
    for (r, &s) in var.iter_mut().zip(&stats.var) {
        *r = m * *r + rest * s;
    }
}
