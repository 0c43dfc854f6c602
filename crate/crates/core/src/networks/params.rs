use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Ordered named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    /// LeCun-normal weight `[fan_in, fan_out]`.
    pub fn push_lecun<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> usize {
        let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).unwrap();
        let w = Tensor::from_fn(&[fan_in, fan_out], |_| normal.sample(rng));
        self.push(name, w)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Record every parameter as a leaf of `g`.
    pub fn bind<'g>(&self, g: &'g Graph) -> Vec<Var<'g>> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }

    /// Replace all values, keeping names; shapes must match.
    pub fn assign(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.len() || values.iter().zip(&self.tensors).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::InvalidArgument("parameter assignment changes layout".into()));
        }
        self.tensors = values;
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}
