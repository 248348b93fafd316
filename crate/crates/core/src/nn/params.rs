use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors plus the set of names excluded from training.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Arc<Tensor>>,
    frozen: BTreeSet<String>,
}

/// Serialized form of one tensor: shape plus row-major data.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), Arc::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name).map(|t| &**t)
    }

    pub(crate) fn shared(&self, name: &str) -> Option<Arc<Tensor>> {
        self.tensors.get(name).cloned()
    }

    /// Mutable access; copies the tensor if a graph still holds it.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name).map(Arc::make_mut)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn freeze(&mut self, name: &str) {
        self.frozen.insert(name.to_string());
    }

    /// Freezes every parameter whose name does not start with one of
    /// `keep_prefixes`.
    pub fn freeze_all_except(&mut self, keep_prefixes: &[&str]) {
        let names: Vec<String> = self.tensors.keys().cloned().collect();
        for n in names {
            if !keep_prefixes.iter().any(|p| n.starts_with(p)) {
                self.frozen.insert(n);
            }
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.tensors.contains_key(name) && !self.frozen.contains(name)
    }

    /// He-normal initialization: `N(0, 2/fan_in)`.
    pub fn init_he<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        self.init_normal(name, shape, std, rng);
    }

    /// Uniform `U(−a, a)` with `a = 1/√fan_in`, the usual recurrent default.
    pub fn init_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) {
        let a = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-a..a)).collect();
        self.insert(name, ArrayD::from_shape_vec(IxDyn(shape), data).unwrap());
    }

    pub fn init_normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            })
            .collect();
        self.insert(name, ArrayD::from_shape_vec(IxDyn(shape), data).unwrap());
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, ArrayD::zeros(IxDyn(shape)));
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, ArrayD::from_elem(IxDyn(shape), value));
    }

    pub fn to_stored(&self) -> BTreeMap<String, StoredTensor> {
        self.tensors
            .iter()
            .map(|(k, t)| {
                (
                    k.clone(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        data: t.iter().copied().collect(),
                    },
                )
            })
            .collect()
    }

    pub fn from_stored(stored: &BTreeMap<String, StoredTensor>) -> Result<Self> {
        let mut out = ParamStore::new();
        for (name, t) in stored {
            let arr = ArrayD::from_shape_vec(IxDyn(&t.shape), t.data.clone()).map_err(|e| {
                Error::InvalidInput(format!("parameter `{name}`: {e}"))
            })?;
            out.insert(name.clone(), arr);
        }
        Ok(out)
    }

    /// Replaces values of parameters present in `other`, checking shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in &other.tensors {
            let Some(slot) = self.tensors.get_mut(name) else {
                return Err(Error::ArtifactMismatch(format!("unexpected parameter `{name}`")));
            };
            if slot.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name}{:?}", slot.shape()),
                    actual: format!("{:?}", t.shape()),
                });
            }
            *slot = t.clone();
        }
        for name in self.tensors.keys() {
            if !other.tensors.contains_key(name) {
                return Err(Error::ArtifactMismatch(format!("missing parameter `{name}`")));
            }
        }
        Ok(())
    }

    /// Stable content digest over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
