//! Named parameter storage shared by every layer.
//!
//! Layers never own tensors. They hold [`ParamId`] handles into a
//! [`ParamStore`], which makes checkpointing, optimizer updates and parameter
//! counting a walk over one flat table.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Trained by the optimizer and counted in the parameter budget.
    Learnable,
    /// Persistent state that is not trained (batch-norm running statistics).
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Const(f32),
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    Kaiming {
        fan_in: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    /// Logical dimensions, as written to checkpoints (rank 1 or 4).
    pub dims: Vec<usize>,
    pub kind: ParamKind,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn shape(&self) -> Shape {
        dims_to_shape(&self.dims).expect("registered dims are rank 1 or 4")
    }
}

pub(crate) fn dims_to_shape(dims: &[usize]) -> Option<Shape> {
    match *dims {
        [c] => Some(Shape::new(c, 1, 1, 1)),
        [n, c, h, w] => Some(Shape::new(n, c, h, w)),
        _ => None,
    }
}

/// Collects parameter declarations under a hierarchical dotted prefix.
#[derive(Debug, Default)]
pub struct Registry {
    specs: Vec<ParamSpec>,
    index: HashMap<String, usize>,
    prefix: Vec<String>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Run `f` with `segment` appended to the current name prefix.
    pub fn scope<T>(&mut self, segment: impl Into<String>, f: impl FnOnce(&mut Self) -> T) -> T {
        self.prefix.push(segment.into());
        let out = f(self);
        self.prefix.pop();
        out
    }

    pub fn register(&mut self, leaf: &str, dims: Vec<usize>, kind: ParamKind, init: Init) -> ParamId {
        let mut name = self.prefix.join(".");
        if !name.is_empty() {
            name.push('.');
        }
        name.push_str(leaf);
        assert!(
            dims_to_shape(&dims).is_some() && dims.iter().all(|&d| d > 0),
            "parameter {name} has unsupported dims {dims:?}"
        );
        assert!(!self.index.contains_key(&name), "parameter {name} registered twice");
        let id = self.specs.len();
        self.index.insert(name.clone(), id);
        self.specs.push(ParamSpec { name, dims, kind, init });
        ParamId(id)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn into_specs(self) -> Vec<ParamSpec> {
        self.specs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    /// Initialize every declared parameter, drawing in declaration order from one seeded stream.
    pub fn initialize(specs: Vec<ParamSpec>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|spec| match spec.init {
                Init::Zeros => Tensor::zeros(spec.shape()),
                Init::Const(v) => Tensor::full(spec.shape(), v),
                Init::Kaiming { fan_in } => {
                    Tensor::randn(spec.shape(), (1.0 / (3.0 * fan_in as f64)).sqrt() as f32, &mut rng)
                }
            })
            .collect();
        Self::assemble(specs, tensors)
    }

    /// Rebuild from explicit values, e.g. a checkpoint. Every spec needs exactly one tensor.
    pub fn from_named(specs: Vec<ParamSpec>, mut named: HashMap<String, Tensor>) -> Result<Self> {
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in &specs {
            let t = named.remove(&spec.name).ok_or_else(|| Error::InvalidArgument {
                op: "load parameters",
                reason: format!("missing tensor {}", spec.name),
            })?;
            if t.shape() != spec.shape() {
                return Err(Error::InvalidArgument {
                    op: "load parameters",
                    reason: format!(
                        "tensor {} has shape {}, expected {}",
                        spec.name,
                        t.shape(),
                        spec.shape()
                    ),
                });
            }
            tensors.push(t);
        }
        if let Some(extra) = named.keys().min() {
            return Err(Error::InvalidArgument {
                op: "load parameters",
                reason: format!("unexpected tensor {extra}"),
            });
        }
        Ok(Self::assemble(specs, tensors))
    }

    fn assemble(specs: Vec<ParamSpec>, tensors: Vec<Tensor>) -> Self {
        let index = specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        ParamStore { specs, tensors, index }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[f32] {
        self.tensors[id.0].data()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// `(id, spec, tensor)` in declaration order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamSpec, &Tensor)> {
        self.specs
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (s, t))| (ParamId(i), s, t))
    }

    pub fn learnable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.specs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == ParamKind::Learnable)
            .map(|(i, _)| ParamId(i))
    }

    /// Number of learnable scalars.
    pub fn learnable_count(&self) -> usize {
        count_learnable(&self.specs)
    }
}

pub fn count_learnable(specs: &[ParamSpec]) -> usize {
    specs
        .iter()
        .filter(|s| s.kind == ParamKind::Learnable)
        .map(ParamSpec::numel)
        .sum()
}

/// Gradients for a [`ParamStore`], summed across every use of a parameter.
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Grads {
            slots: vec![None; store.len()],
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.add_assign(grad).expect("gradient shape matches its parameter"),
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// Accumulate a per-channel vector gradient into a rank-1 parameter.
    pub fn accumulate_vec(&mut self, id: ParamId, grad: &[f32]) {
        let t = Tensor::from_vec(Shape::new(grad.len(), 1, 1, 1), grad.to_vec());
        self.accumulate(id, &t);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    /// The gradient, or zeros of the parameter's shape when it received none.
    pub fn get_or_zero(&self, store: &ParamStore, id: ParamId) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    pub fn scale(&mut self, factor: f32) {
        for t in self.slots.iter_mut().flatten() {
            *t = t.scale(factor);
        }
    }

    pub fn first_non_finite(&self, store: &ParamStore) -> Option<String> {
        self.slots
            .iter()
            .enumerate()
            .find(|(_, t)| t.as_ref().is_some_and(|t| !t.is_finite()))
            .map(|(i, _)| store.specs[i].name.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> Registry {
        let mut r = Registry::new();
        r.scope("block", |r| {
            r.register(
                "weight",
                vec![4, 2, 3, 3],
                ParamKind::Learnable,
                Init::Kaiming { fan_in: 18 },
            );
            r.register("bias", vec![4], ParamKind::Learnable, Init::Zeros);
            r.register("running_var", vec![4], ParamKind::Buffer, Init::Const(1.0));
        });
        r
    }

    #[test]
    fn names_are_scoped_and_counts_skip_buffers() {
        let store = ParamStore::initialize(registry().into_specs(), 3);
        let names: Vec<_> = store.specs().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["block.weight", "block.bias", "block.running_var"]);
        assert_eq!(store.learnable_count(), 4 * 2 * 9 + 4);
        assert_eq!(store.by_name("block.running_var").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn initialization_is_seed_deterministic() {
        let a = ParamStore::initialize(registry().into_specs(), 11);
        let b = ParamStore::initialize(registry().into_specs(), 11);
        let c = ParamStore::initialize(registry().into_specs(), 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    #[should_panic(expected = "registered twice")]
    fn duplicate_names_panic() {
        let mut r = Registry::new();
        r.register("w", vec![1], ParamKind::Learnable, Init::Zeros);
        r.register("w", vec![1], ParamKind::Learnable, Init::Zeros);
    }

    #[test]
    fn from_named_reports_missing_and_extra() {
        let specs = registry().into_specs();
        let store = ParamStore::initialize(specs.clone(), 1);
        let mut named: HashMap<_, _> = store.iter().map(|(_, s, t)| (s.name.clone(), t.clone())).collect();
        assert_eq!(ParamStore::from_named(specs.clone(), named.clone()).unwrap(), store);

        named.insert("stray".into(), Tensor::zeros(Shape::new(1, 1, 1, 1)));
        let err = ParamStore::from_named(specs.clone(), named.clone()).unwrap_err();
        assert!(err.to_string().contains("stray"), "{err}");

        named.remove("block.bias");
        let err = ParamStore::from_named(specs, named).unwrap_err();
        assert!(err.to_string().contains("block.bias"), "{err}");
    }

    #[test]
    fn grads_sum_across_uses() {
        let store = ParamStore::initialize(registry().into_specs(), 1);
        let bias = store.id("block.bias").unwrap();
        let mut g = Grads::new(&store);
        g.accumulate_vec(bias, &[1.0, 2.0, 3.0, 4.0]);
        g.accumulate_vec(bias, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(g.get(bias).unwrap().data(), &[2.0, 3.0, 4.0, 5.0]);
    }
}
