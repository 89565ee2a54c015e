//! Named parameters and buffers with their optimizer state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Trained by the optimizer.
    Param,
    /// State outside the optimizer (batch norm running statistics).
    Buffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct Entry<T> {
    pub name: String,
    pub kind: Kind,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    pub has_grad: bool,
    /// Adam first and second moments.
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
    bindings: Vec<(ParamId, NodeId)>,
    frozen: bool,
    /// Adam steps taken.
    pub step: u64,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            bindings: Vec::new(),
            frozen: false,
            step: 0,
        }
    }

    fn add(&mut self, name: &str, kind: Kind, value: Tensor<T>) -> ParamId {
        assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        let n = value.len();
        self.entries.push(Entry {
            name: name.to_string(),
            kind,
            value,
            grad: vec![T::zero(); n],
            has_grad: false,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_param(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.add(name, Kind::Param, value)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.add(name, Kind::Buffer, value)
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn entry(&self, id: ParamId) -> &Entry<T> {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == Kind::Param).map(|e| e.value.len()).sum()
    }

    /// Frozen stores put their parameters on the tape as constants.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Put parameter `id` on the tape, remembering the node for
    /// [`ParamStore::pull_grads`].
    pub fn bind(&mut self, g: &mut Graph<T>, id: ParamId) -> NodeId {
        let e = &self.entries[id.0];
        let trainable = !self.frozen && e.kind == Kind::Param;
        let node = g.leaf(e.value.clone(), trainable);
        if trainable {
            self.bindings.push((id, node));
        }
        node
    }

    /// Copy the gradients of bound parameters out of the tape and forget the
    /// bindings. Parameters bound more than once accumulate.
    pub fn pull_grads(&mut self, g: &Graph<T>) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|v| *v = T::zero());
            e.has_grad = false;
        }
        for &(id, node) in &self.bindings {
            let e = &mut self.entries[id.0];
            if let Some(gr) = g.grad(node) {
                e.grad.iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
            }
            e.has_grad = true;
        }
        self.bindings.clear();
    }

    pub fn clear_bindings(&mut self) {
        self.bindings.clear();
    }

    /// SHA-256 over names and values, for checking that a model did not change.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            buf.clear();
            for &v in e.value.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn ensure_grads(&self) -> Result<()> {
        match self.entries.iter().find(|e| e.kind == Kind::Param && !e.has_grad) {
            Some(e) => Err(Error::MissingGradient(e.name.clone())),
            None => Ok(()),
        }
    }
}

/// Deterministic weight initializer.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He initialization for a leaky ReLU with slope `alpha`.
    pub fn he<T: Real>(&mut self, shape: Shape, fan_in: usize, alpha: f64) -> Tensor<T> {
        let std = (2.0 / ((1.0 + alpha * alpha) * fan_in as f64)).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::from_f64_lossy(normal.sample(&mut self.rng)))
            .collect();
        Tensor::new(shape, data).expect("shape matches")
    }

    pub fn normal<T: Real>(&mut self, shape: Shape, std: f64) -> Tensor<T> {
        let normal = Normal::new(0.0, std).expect("valid std");
        let data = (0..shape.iter().product::<usize>())
            .map(|_| T::from_f64_lossy(normal.sample(&mut self.rng)))
            .collect();
        Tensor::new(shape, data).expect("shape matches")
    }
}
