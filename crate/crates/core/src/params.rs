//! Named parameter registry shared by every trainable component.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters in registration order, addressable by unique name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(alloc::format!("parameter `{name}` registered twice")));
        }
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    /// Registers a tensor drawn from `normal(0, std)`.
    pub fn register_normal<R: Rng>(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut R) -> Result<ParamId> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::Contract(alloc::format!("{e}")))?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.register(name, Tensor::new(shape, data)?)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Replaces every value from `other`, which must hold the same names and
    /// shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Contract("parameter name sets differ".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::Shape {
                    op: "load_params",
                    lhs: dst.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            *dst = src.clone();
        }
        Ok(())
    }

    /// All values flattened in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.data().iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape {
                op: "unflatten",
                lhs: vec![self.num_scalars()],
                rhs: vec![flat.len()],
            });
        }
        let mut off = 0;
        for v in &mut self.values {
            let n = v.len();
            v.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

/// Per-parameter gradient accumulator aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|v| vec![0.0; v.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn scale(&mut self, s: f64) {
        self.grads.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flatten().copied().collect()
    }

    pub fn l2_norm(&self) -> f64 {
        libm::sqrt(self.grads.iter().flatten().map(|g| g * g).sum())
    }
}

/// Lazily binds store parameters as leaves of one graph.
#[derive(Debug)]
pub struct Bindings<'a> {
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
}

impl<'a> Bindings<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn var(&mut self, g: &mut Graph, id: ParamId) -> Var {
        *self.vars[id.0].get_or_insert_with(|| g.leaf(self.store.values[id.0].clone(), true))
    }

    /// Adds the graph gradients of every bound parameter into `out`.
    pub fn accumulate(&self, g: &Graph, out: &mut Gradients) {
        for (i, v) in self.vars.iter().enumerate() {
            if let Some(grad) = v.and_then(|v| g.grad(v)) {
                for (o, x) in out.grads[i].iter_mut().zip(grad) {
                    *o += x;
                }
            }
        }
    }
}
