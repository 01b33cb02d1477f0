use std::collections::BTreeMap;

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<R> {
    tensors: BTreeMap<String, Tensor<R>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<R>) {
        self.tensors.insert(name.into(), value);
    }

    /// Uniform init in `[-a, a]` with `a = sqrt(1 / fan_in)`.
    pub fn init_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut impl Rng) {
        let a = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| R::of(rng.random_range(-a..=a))).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("init shape"));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<R>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<R>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<R>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Places every tensor on `graph`, as trainable leaves or constants.
    pub fn bind(&self, graph: &mut Graph<R>, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), graph.leaf(v.clone(), trainable)))
            .collect();
        BoundParams { vars }
    }
}

/// Parameter names mapped to their leaves on one graph.
#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        BoundParams {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("parameter `{name}` not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Collects gradients of all bound parameters. Parameters the loss did
    /// not reach get zeros.
    pub fn grads<R: Real>(&self, graph: &Graph<R>) -> ParamStore<R> {
        let mut out = ParamStore::new();
        for (name, var) in &self.vars {
            let g = graph
                .grad(*var)
                .unwrap_or_else(|| Tensor::zeros(graph.shape(*var)));
            out.insert(name.clone(), g);
        }
        out
    }
}
