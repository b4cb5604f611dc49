//! Dense row-major tensors.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result, Scalar};

/// How to populate a freshly created tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum Fill<T> {
    Scalar(T),
    Sequence(Vec<T>),
    /// Independent normal draws, reproducible from `seed`.
    Normal { mean: f64, std: f64, seed: u64 },
    /// Independent uniform draws on `[low, high)`, reproducible from `seed`.
    Uniform { low: f64, high: f64, seed: u64 },
}

/// A dense tensor with an optional gradient buffer.
///
/// `data` is stored row-major; `grad`, once populated, always has the same
/// length as `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::ZeroExtent(shape.to_vec()));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], fill: Fill<T>) -> Result<Self> {
        check_shape(shape)?;
        let n = numel(shape);
        let data = match fill {
            Fill::Scalar(v) => vec![v; n],
            Fill::Sequence(values) => {
                if values.len() != n {
                    return Err(Error::LengthMismatch {
                        shape: shape.to_vec(),
                        len: values.len(),
                    });
                }
                values
            }
            Fill::Normal { mean, std, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::lit(mean + std * z)
                    })
                    .collect()
            }
            Fill::Uniform { low, high, seed } => {
                if !(low < high) {
                    return Err(Error::invalid("uniform fill needs low < high"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| T::lit(rng.random_range(low..high))).collect()
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::new(shape, Fill::Sequence(data))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, Fill::Scalar(T::zero()))
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        Self::new(shape, Fill::Scalar(value))
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a gradient target.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer. Repeated calls accumulate.
    pub fn accumulate_grad(&mut self, g: &[T]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::LengthMismatch {
                shape: self.shape.clone(),
                len: g.len(),
            });
        }
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != self.data.len() {
            return Err(Error::LengthMismatch {
                shape: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fill() {
        let t = Tensor::<f32>::new(&[2, 2], Fill::Scalar(0.0)).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(t.shape(), &[2, 2]);
    }

    #[test]
    fn sequence_fill() {
        let t = Tensor::<f32>::new(&[3], Fill::Sequence(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn sequence_length_mismatch() {
        let err = Tensor::<f32>::new(&[2], Fill::Sequence(vec![1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }));
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(matches!(
            Tensor::<f32>::zeros(&[2, 0]),
            Err(Error::ZeroExtent(_))
        ));
    }

    #[test]
    fn seeded_fills_are_reproducible() {
        let fill = Fill::Normal { mean: 0.0, std: 1.0, seed: 9 };
        let a = Tensor::<f64>::new(&[5, 3], fill.clone()).unwrap();
        let b = Tensor::<f64>::new(&[5, 3], fill).unwrap();
        assert_eq!(a, b);
        let c = Tensor::<f64>::new(&[5, 3], Fill::Normal { mean: 0.0, std: 1.0, seed: 10 }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn grads_accumulate() {
        let mut t = Tensor::<f32>::zeros(&[2]).unwrap().with_grad();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad(), Some(&[2.0, 4.0][..]));
        t.zero_grad();
        assert_eq!(t.grad(), None);
    }
}
