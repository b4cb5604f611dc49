use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    Mask,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Learnable, as opposed to a statistics buffer.
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Subject to weight decay.
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Named tensors in registration order. Names are unique.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore { entries: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry and returns its index. Trainable kinds are marked
    /// `requires_grad`.
    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let mut tensor = tensor;
        tensor.requires_grad = kind.trainable();
        self.entries.push(ParamEntry { name, kind, tensor });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.entries[i].tensor)
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].tensor
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].tensor
    }

    /// Scalar count over trainable entries.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind.trainable())
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub(crate) fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| {
                    let mut t = e.tensor.map(|v| U::lit(v.as_f64()));
                    t.requires_grad = e.tensor.requires_grad;
                    ParamEntry {
                        name: e.name.clone(),
                        kind: e.kind,
                        tensor: t,
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffers_excluded_from_count() {
        let mut store = ParamStore::<f32>::new();
        store.push("a.weight", ParamKind::Weight, Tensor::zeros(&[2, 3]).unwrap()).unwrap();
        store.push("a.running_mean", ParamKind::RunningMean, Tensor::zeros(&[5]).unwrap()).unwrap();
        assert_eq!(store.param_count(), 6);
        assert!(store.tensor(0).requires_grad);
        assert!(!store.tensor(1).requires_grad);
        assert!(store.push("a.weight", ParamKind::Bias, Tensor::zeros(&[1]).unwrap()).is_err());
    }
}
