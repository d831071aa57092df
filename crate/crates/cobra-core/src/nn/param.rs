//! Central parameter storage shared by both branches.
//!
//! Parameters live in one flat store; layers keep [`ParamId`] handles into it.
//! Gradients accumulate into a separate [`GradBuffer`] so that per-item
//! backward passes can run concurrently and be reduced in a fixed order,
//! which keeps training bit-deterministic.

use ndarray::ArrayD;
use std::collections::BTreeMap;

/// Handle to a named tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique dotted name (e.g. `cak.cnn.block0.weight`).
    pub fn register(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = ParamId(self.values.len());
        self.names.push(name.clone());
        self.values.push(value);
        self.index.insert(name, id);
        id
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }
}

/// Gradient accumulator aligned index-for-index with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct GradBuffer {
    grads: Vec<ArrayD<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|v| ArrayD::zeros(v.raw_dim())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<f64> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        &mut self.grads[id.0]
    }

    /// Accumulate `g` into the slot for `id`.
    pub fn add(&mut self, id: ParamId, g: &ArrayD<f64>) {
        debug_assert_eq!(self.grads[id.0].shape(), g.shape());
        self.grads[id.0] += g;
    }

    /// Elementwise-add another buffer (fixed-order batch reduction).
    pub fn merge(&mut self, other: &GradBuffer) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(other.grads.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * s);
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }

    /// Max |grad| over parameters whose name satisfies `pred`.
    pub fn max_abs_where(&self, store: &ParamStore, pred: impl Fn(&str) -> bool) -> f64 {
        store
            .ids()
            .filter(|&id| pred(store.name(id)))
            .flat_map(|id| self.grads[id.0].iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}
