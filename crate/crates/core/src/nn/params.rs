//! Named parameter sets and their graph bindings.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId};
use crate::nn::tensor::{Elem, Tensor};

/// Ordered map from dotted path ("blocks.3.attn.q.weight") to tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<E: Elem> {
    entries: BTreeMap<String, Tensor<E>>,
}

impl<E: Elem> ParamSet<E> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<E>) {
        let name = name.into();
        let prev = self.entries.insert(name.clone(), t);
        assert!(prev.is_none(), "duplicate parameter path {name}");
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.entries.get(name).ok_or_else(|| Error::ConfigError(format!("missing parameter {name}")))
    }

    pub fn set(&mut self, name: &str, t: Tensor<E>) {
        assert!(self.entries.contains_key(name), "unknown parameter path {name}");
        self.entries.insert(name.to_string(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<E>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    pub fn cast<F: Elem>(&self) -> ParamSet<F> {
        let mut out = ParamSet::new();
        for (k, v) in &self.entries {
            out.insert(k.clone(), v.cast());
        }
        out
    }

    /// Order-stable FNV-1a over shapes and value bits; used by determinism tests.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u64| {
            h ^= b;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for (k, v) in &self.entries {
            for byte in k.bytes() {
                eat(byte as u64);
            }
            for &d in v.shape() {
                eat(d as u64);
            }
            for x in v.data() {
                eat(x.to_f64().to_bits());
            }
        }
        h
    }
}

/// Parameter leaves registered on a graph for one forward/backward pass.
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn bind<E: Elem>(g: &mut Graph<E>, params: &ParamSet<E>) -> Self {
        let mut ids = BTreeMap::new();
        for (name, t) in params.iter() {
            ids.insert(name.clone(), g.leaf(t.clone()));
        }
        Self { ids }
    }

    pub fn id(&self, name: &str) -> NodeId {
        *self.ids.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn ids(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }
}

/// Uniform(-1/sqrt(d_in), 1/sqrt(d_in)) weight matrix, the default linear init.
pub fn uniform_linear_init<E: Elem>(rng: &mut impl Rng, d_in: usize, d_out: usize) -> Tensor<E> {
    let bound = 1.0 / (d_in as f64).sqrt();
    let data = (0..d_in * d_out).map(|_| E::from_f64(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(vec![d_in, d_out], data)
}

pub fn uniform_vec_init<E: Elem>(rng: &mut impl Rng, d: usize, bound: f64) -> Tensor<E> {
    let data = (0..d).map(|_| E::from_f64(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(vec![d], data)
}
