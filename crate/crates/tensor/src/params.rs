//! Named parameter storage and the per-forward context that lifts
//! parameters onto a graph.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::TensorError;
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable tensors plus non-trainable buffers (running statistics).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|id| self.trainable[id.0])
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable_ids().map(|id| self.values[id.0].len()).sum()
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Overwrites values from `entries`; every stored name must be present
    /// with a matching shape.
    pub fn load_named(&mut self, entries: Vec<(String, Tensor)>) -> Result<(), TensorError> {
        let mut by_name: HashMap<String, Tensor> = entries.into_iter().collect();
        for (i, name) in self.names.iter().enumerate() {
            let t = by_name
                .remove(name)
                .ok_or_else(|| TensorError::Missing(name.clone()))?;
            if t.shape() != self.values[i].shape() {
                return Err(TensorError::Shape {
                    name: name.clone(),
                    expected: self.values[i].shape().to_vec(),
                    got: t.shape().to_vec(),
                });
            }
            self.values[i] = t;
        }
        if let Some(extra) = by_name.into_keys().next() {
            return Err(TensorError::Unexpected(extra));
        }
        Ok(())
    }

    pub fn apply_bn_updates(&mut self, updates: Vec<BnUpdate>) {
        for u in updates {
            for (id, batch) in [(u.running_mean, &u.mean), (u.running_var, &u.var)] {
                for (r, &b) in self.values[id.0].data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - u.momentum) * *r + u.momentum * b;
                }
            }
        }
    }
}

/// Registers parameters under a dotted prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Child builder with `name` appended to the prefix.
    pub fn pp(&mut self, name: impl std::fmt::Display) -> ParamBuilder<'_> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound));
        self.store.insert(self.full_name(name), t, true)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        self.uniform(name, shape, 1.0 / (fan_in as f64).sqrt())
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.insert(self.full_name(name), Tensor::zeros(shape), true)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.insert(self.full_name(name), Tensor::ones(shape), true)
    }

    /// Non-trainable state.
    pub fn buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.store.insert(self.full_name(name), value, false)
    }
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

/// One forward pass: a graph, read-only parameters and the mode flags.
pub struct Ctx<'g> {
    pub graph: &'g Graph,
    pub store: &'g ParamStore,
    /// Batch statistics in normalisation layers, dropout-free otherwise.
    pub train: bool,
    /// Parameters become gradient-tracking leaves.
    pub grad: bool,
    leaves: RefCell<HashMap<ParamId, Var<'g>>>,
    bn_updates: RefCell<Vec<BnUpdate>>,
}

impl<'g> Ctx<'g> {
    pub fn new(graph: &'g Graph, store: &'g ParamStore, train: bool, grad: bool) -> Self {
        Self {
            graph,
            store,
            train,
            grad,
            leaves: RefCell::new(HashMap::new()),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    /// Training context: batch statistics and gradients.
    pub fn training(graph: &'g Graph, store: &'g ParamStore) -> Self {
        Self::new(graph, store, true, true)
    }

    /// Inference context: running statistics, no gradient tape.
    pub fn inference(graph: &'g Graph, store: &'g ParamStore) -> Self {
        Self::new(graph, store, false, false)
    }

    /// The parameter as a graph leaf; each id is lifted once per context.
    pub fn param(&self, id: ParamId) -> Var<'g> {
        if let Some(v) = self.leaves.borrow().get(&id) {
            return *v;
        }
        let rg = self.grad && self.store.is_trainable(id);
        let v = self.graph.leaf(self.store.get(id).clone(), rg);
        self.leaves.borrow_mut().insert(id, v);
        v
    }

    pub fn constant(&self, t: Tensor) -> Var<'g> {
        self.graph.constant(t)
    }

    pub fn push_bn_update(&self, u: BnUpdate) {
        self.bn_updates.borrow_mut().push(u);
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }

    /// Gradients of every lifted trainable parameter, in id order.
    pub fn param_grads(&self, grads: &mut Gradients) -> Vec<(ParamId, Tensor)> {
        let leaves = self.leaves.borrow();
        let mut out: Vec<(ParamId, Tensor)> = leaves
            .iter()
            .filter_map(|(&id, &v)| grads.take(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}
