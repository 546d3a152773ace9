//! Named parameter tables and their binding onto a [`Graph`].

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Std of the truncated-normal init for conv and linear weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Normal,
    /// Uniform in `±1/√fan_in`, fan-in being the product of all but the leading dim.
    FanIn,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self { name: name.into(), shape: shape.to_vec(), init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn materialize<T: Float, R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor<T> {
        match self.init {
            Init::TruncNormal => Tensor::trunc_normal(&self.shape, INIT_STD, rng),
            Init::Normal => Tensor::normal(&self.shape, INIT_STD, rng),
            Init::FanIn => {
                let bound = 1.0 / (self.shape[1..].iter().product::<usize>().max(1) as f64).sqrt();
                Tensor::uniform(&self.shape, -bound, bound, rng)
            }
            Init::Zeros => Tensor::zeros(&self.shape),
            Init::Ones => Tensor::full(&self.shape, T::one()),
        }
    }
}

/// Conv weight `[cout, cin, k, k]` plus bias.
pub fn conv_specs(prefix: &str, cin: usize, cout: usize, k: usize) -> [ParamSpec; 2] {
    [
        ParamSpec::new(format!("{prefix}.weight"), &[cout, cin, k, k], Init::FanIn),
        ParamSpec::new(format!("{prefix}.bias"), &[cout], Init::Zeros),
    ]
}

/// Linear weight `[din, dout]` plus bias.
pub fn linear_specs(prefix: &str, din: usize, dout: usize) -> [ParamSpec; 2] {
    [
        ParamSpec::new(format!("{prefix}.weight"), &[din, dout], Init::TruncNormal),
        ParamSpec::new(format!("{prefix}.bias"), &[dout], Init::Zeros),
    ]
}

pub fn norm_specs(prefix: &str, d: usize) -> [ParamSpec; 2] {
    [
        ParamSpec::new(format!("{prefix}.weight"), &[d], Init::Ones),
        ParamSpec::new(format!("{prefix}.bias"), &[d], Init::Zeros),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Parameters by name, iterated in lexicographic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Float = f32> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// Materializes every spec in order from one RNG stream.
    pub fn from_specs<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Self {
        let mut store = Self::new();
        for s in specs {
            store.insert(&s.name, s.materialize(rng));
        }
        store
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) {
        self.entries.insert(name.to_string(), Param { value, trainable: true });
    }

    pub fn remove(&mut self, name: &str) -> Option<Param<T>> {
        self.entries.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        self.entries.values_mut().for_each(|p| p.trainable = trainable);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), Param { value: p.value.cast(), trainable: p.trainable }))
                .collect(),
        }
    }

    /// Registers every parameter on `g`; trainable ones require gradients.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        self.bind_with(g, true)
    }

    /// Registers every parameter as a constant (inference).
    pub fn bind_constant(&self, g: &mut Graph<T>) -> Bound {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut Graph<T>, grads: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|(k, p)| (k.clone(), g.leaf(p.value.clone(), grads && p.trainable)))
            .collect();
        Bound { vars }
    }
}

/// Parameter name → graph variable for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Self { vars: iter.into_iter().collect() }
    }
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("parameter {name} is not bound")))
    }

    pub fn opt(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// `(weight, bias)` of a conv or linear layer.
    pub fn layer(&self, prefix: &str) -> Result<(Var, Var)> {
        Ok((self.var(&format!("{prefix}.weight"))?, self.var(&format!("{prefix}.bias"))?))
    }
}
