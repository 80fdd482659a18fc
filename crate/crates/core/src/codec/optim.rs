use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{DenseTensor, Gradient, ParamSet};

/// Parameter update rule, selected by name at runtime.
pub trait Optimizer {
    fn name(&self) -> &'static str;

    /// Applies one update for every parameter that has a gradient.
    fn step(&mut self, params: &mut ParamSet, grads: &Gradient) -> Result<()>;
}

/// Fixed-step gradient descent.
pub struct Sgd {
    pub learning_rate: f64,
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, params: &mut ParamSet, grads: &Gradient) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            check_shape(name, p, g)?;
            for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
                *v -= self.learning_rate * d;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, params: &mut ParamSet, grads: &Gradient) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            check_shape(name, p, g)?;
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for i in 0..g.len() {
                let d = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * d;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * d * d;
                let step = (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
                p.data_mut()[i] -= self.learning_rate * step;
            }
        }
        Ok(())
    }
}

fn check_shape(name: &str, p: &DenseTensor, g: &DenseTensor) -> Result<()> {
    if p.shape() != g.shape() {
        return Err(Error::shape(format!(
            "gradient for `{name}` has shape {:?}, parameter {:?}",
            g.shape(),
            p.shape()
        )));
    }
    Ok(())
}

pub const OPTIMIZERS: &[&str] = &["sgd", "adam"];

pub fn optimizer(name: &str, learning_rate: f64) -> Result<Box<dyn Optimizer>> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::invalid(format!("learning rate {learning_rate}")));
    }
    match name {
        "sgd" => Ok(Box::new(Sgd { learning_rate })),
        "adam" => Ok(Box::new(Adam::new(learning_rate))),
        other => Err(Error::invalid(format!(
            "unknown optimizer `{other}` (available: {})",
            OPTIMIZERS.join(", ")
        ))),
    }
}
