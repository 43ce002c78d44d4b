//! Named parameter storage and initialisers.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors. Names are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a gradient-receiving leaf of `g`.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p, T>) -> Bound {
        Bound(self.values.iter().map(|t| g.param(t)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Graph leaves of a [`ParamSet`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

pub(crate) fn uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], limit: f64) -> Tensor<T> {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::lit(rng.random_range(-limit..limit));
    }
    t
}

pub(crate) fn glorot<T: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = num_traits::Float::sqrt(6.0 / (fan_in + fan_out) as f64);
    uniform(rng, shape, limit)
}

/// Affine map `x·W + b` with `W: in×out` and `b: 1×out`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn init<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.push(
            alloc::format!("{name}.weight"),
            glorot(rng, &[inputs, outputs], inputs, outputs),
        );
        let bias = params.push(alloc::format!("{name}.bias"), Tensor::zeros(&[1, outputs]));
        Self { weight, bias }
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, bound: &Bound, x: Var) -> crate::Result<Var> {
        let xw = g.matmul(x, bound.var(self.weight))?;
        g.add(xw, bound.var(self.bias))
    }
}
