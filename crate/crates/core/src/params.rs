//! Named parameter collections and their binding into a [`Graph`].

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, NodeId};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// An ordered set of named tensors (either φ or θ).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
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

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// SHA-256 over names, shapes and little-endian values, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.shape().len() as u64).to_le_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

/// Xavier/Glorot uniform initialization for a `fan_in × fan_out` matrix.
pub fn xavier_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches by construction")
}

pub fn normal_like(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    // Irwin-Hall approximation keeps us off an extra distribution dependency.
    let data = (0..rows * cols)
        .map(|_| {
            let s: f64 = (0..12).map(|_| rng.gen::<f64>()).sum();
            (s - 6.0) * std
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches by construction")
}

/// Lazily inserts parameters of one store into a graph, each at most once.
pub struct Binder<'a> {
    store: &'a ParamStore,
    prefix: &'static str,
    trainable: bool,
    bound: HashMap<&'a str, NodeId>,
}

impl<'a> Binder<'a> {
    /// Leaves are named `"{prefix}{name}"` in gradient maps.
    pub fn new(store: &'a ParamStore, prefix: &'static str, trainable: bool) -> Self {
        Self {
            store,
            prefix,
            trainable,
            bound: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn get(&mut self, g: &mut Graph<'a>, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let (key, t) = self
            .store
            .tensors
            .get_key_value(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let id = g.param(&format!("{}{}", self.prefix, key), t, self.trainable);
        self.bound.insert(key.as_str(), id);
        Ok(id)
    }
}
