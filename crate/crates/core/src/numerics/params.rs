use std::collections::BTreeMap;

use super::{DenseTensor, Grads, Tape, Var};
use crate::error::{Error, Result};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, DenseTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseTensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&DenseTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut DenseTensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut DenseTensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
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

    /// Moves every tensor of `other` into `self`, replacing same-named entries.
    pub fn extend(&mut self, other: ParamSet) {
        self.tensors.extend(other.tensors);
    }

    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundParams<'t> {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
                .collect(),
        }
    }
}

/// Tape variables for a [`ParamSet`].
pub struct BoundParams<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> BoundParams<'t> {
    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    /// Gradient for every bound parameter; unreached ones get zeros.
    pub fn gradient(&self, grads: &Grads) -> Gradient {
        let mut out = Gradient::default();
        for (name, var) in &self.vars {
            out.0.insert(name.clone(), grads.wrt_or_zero(*var));
        }
        out
    }
}

/// Parameter name to `dL/dparam`, each entry shaped like its parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradient(BTreeMap<String, DenseTensor>);

impl Gradient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros_like(params: &ParamSet) -> Self {
        Self(
            params
                .iter()
                .map(|(k, v)| {
                    let z = DenseTensor::zeros(v.shape()).expect("valid shape");
                    (k.to_owned(), z)
                })
                .collect(),
        )
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseTensor) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseTensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn remove(&mut self, name: &str) -> Option<DenseTensor> {
        self.0.remove(name)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.0.retain(|k, _| keep(k));
    }

    /// Errors unless every entry names a parameter of identical shape.
    pub fn check_against(&self, params: &ParamSet) -> Result<()> {
        for (name, g) in &self.0 {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient `{name}` {:?} vs parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(DenseTensor::is_finite)
    }

    /// Largest absolute entry over all tensors.
    pub fn max_abs(&self) -> f64 {
        self.0
            .values()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
