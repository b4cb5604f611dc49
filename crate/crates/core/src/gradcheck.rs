//! Central-difference verification of tape gradients.

use alloc::vec::Vec;

use crate::{Error, Result, Tape, Tensor, Var};

/// An ordered collection of tensors that a gradient check may perturb.
pub trait ParamSet {
    fn count(&self) -> usize;
    fn tensor(&self, i: usize) -> &Tensor<f64>;
    fn tensor_mut(&mut self, i: usize) -> &mut Tensor<f64>;
}

impl ParamSet for Vec<Tensor<f64>> {
    fn count(&self) -> usize {
        self.len()
    }

    fn tensor(&self, i: usize) -> &Tensor<f64> {
        &self[i]
    }

    fn tensor_mut(&mut self, i: usize) -> &mut Tensor<f64> {
        &mut self[i]
    }
}

pub mod suite;

/// Gradients smaller than this are compared on an absolute scale, since
/// central differences cannot resolve their relative error.
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked entries of
    /// `|analytic - numeric| / max(|analytic|, |numeric|, SCALE_FLOOR)`.
    pub max_rel_error: f64,
    /// `(tensor index, flat entry)` of the worst entry.
    pub worst: (usize, usize),
    pub entries_checked: usize,
    /// Closest approach to a relu or max-pool kink at the probe point.
    pub kink_margin: Option<f64>,
}

/// Compares the tape gradient of `f` against central differences for every
/// entry of every tensor in `params` that has `requires_grad` set.
///
/// `f` records a scalar loss on the tape and returns it together with the
/// leaf handle of each tensor in `params`, in order. Each entry is probed at
/// `±eps` and restored bit-exactly afterwards.
pub fn grad_check<P, F>(params: &mut P, eps: f64, f: F) -> Result<GradCheckReport>
where
    P: ParamSet,
    F: for<'a> Fn(&'a P, &mut Tape<'a, f64>) -> Result<(Var, Vec<Var>)>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("grad_check needs eps > 0"));
    }
    let (analytic, base, kink_margin) = {
        let mut tape = Tape::new().tracking_kinks();
        let (loss, leaves) = f(params, &mut tape)?;
        if leaves.len() != params.count() {
            return Err(Error::invalid("grad_check closure must return one leaf per tensor"));
        }
        let grads = tape.backward(loss)?;
        let analytic: Vec<Option<Vec<f64>>> = leaves
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let t = params.tensor(i);
                t.requires_grad
                    .then(|| grads.get(v).map_or_else(|| alloc::vec![0.0; t.numel()], <[f64]>::to_vec))
            })
            .collect();
        (analytic, tape.value(loss)[0], tape.kink_margin())
    };
    if eval(params, &f)? != base {
        return Err(Error::NonDeterministic);
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        entries_checked: 0,
        kink_margin,
    };
    for (i, grad) in analytic.iter().enumerate() {
        let Some(grad) = grad else { continue };
        for (j, &a) in grad.iter().enumerate() {
            let orig = params.tensor(i).data()[j];
            params.tensor_mut(i).data_mut()[j] = orig + eps;
            let plus = eval(params, &f);
            params.tensor_mut(i).data_mut()[j] = orig - eps;
            let minus = eval(params, &f);
            params.tensor_mut(i).data_mut()[j] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(SCALE_FLOOR);
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

fn eval<P, F>(params: &P, f: &F) -> Result<f64>
where
    F: for<'a> Fn(&'a P, &mut Tape<'a, f64>) -> Result<(Var, Vec<Var>)>,
{
    let mut tape = Tape::new();
    let (loss, _) = f(params, &mut tape)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::NonScalarLoss(tape.shape(loss).to_vec()));
    }
    Ok(v[0])
}

/// Registers every tensor of a plain `Vec` as a leaf, in order.
pub fn leaves<'a>(params: &'a [Tensor<f64>], tape: &mut Tape<'a, f64>) -> Vec<Var> {
    params.iter().map(|t| tape.leaf(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Fill;
    use alloc::vec;

    #[test]
    fn quadratic_form() {
        let a = Tensor::new(&[3, 3], Fill::Normal { mean: 0.0, std: 1.0, seed: 1 }).unwrap();
        let x = Tensor::new(&[3, 1], Fill::Normal { mean: 0.0, std: 1.0, seed: 2 }).unwrap().with_grad();
        let mut params = vec![a, x];
        let report = grad_check(&mut params, 1e-4, |p, tape| {
            let vars = leaves(p, tape);
            let xt = tape.reshape(vars[1], &[1, 3])?;
            let ax = tape.matmul(vars[0], vars[1])?;
            let loss = tape.matmul(xt, ax)?;
            Ok((loss, vars))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
        assert_eq!(report.entries_checked, 3);
    }

    #[test]
    fn linear_is_exact() {
        let w = Tensor::new(&[4], Fill::Uniform { low: -1.0, high: 1.0, seed: 3 }).unwrap().with_grad();
        let mut params = vec![w];
        let report = grad_check(&mut params, 1e-3, |p, tape| {
            let vars = leaves(p, tape);
            let s = tape.scale(vars[0], 2.5)?;
            Ok((tape.sum(s)?, vars))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-9);
    }

    #[test]
    fn detects_non_determinism() {
        use core::sync::atomic::{AtomicU32, Ordering};
        let calls = AtomicU32::new(0);
        let w = Tensor::new(&[2], Fill::Scalar(1.0)).unwrap().with_grad();
        let mut params = vec![w];
        let err = grad_check(&mut params, 1e-4, |p, tape| {
            let vars = leaves(p, tape);
            let n = calls.fetch_add(1, Ordering::Relaxed) as f64;
            let s = tape.scale(vars[0], 1.0 + n)?;
            Ok((tape.sum(s)?, vars))
        })
        .unwrap_err();
        assert_eq!(err, Error::NonDeterministic);
    }

    #[test]
    fn params_restored() {
        let w = Tensor::new(&[3], Fill::Normal { mean: 0.0, std: 1.0, seed: 4 }).unwrap().with_grad();
        let before = w.clone();
        let mut params = vec![w];
        grad_check(&mut params, 1e-4, |p, tape| {
            let vars = leaves(p, tape);
            let sq = tape.mul(vars[0], vars[0])?;
            Ok((tape.sum(sq)?, vars))
        })
        .unwrap();
        assert_eq!(params[0], before);
    }
}
