//! Stochastic gradient descent with classical momentum.

use indexmap::IndexMap;

use crate::arch::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// v ← m·v + g; p ← p − lr·v.
pub fn sgd_update(p: &mut [f64], v: &mut [f64], g: &[f64], lr: f64, momentum: f64) {
    for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    velocity: IndexMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Self {
            momentum,
            ..Self::default()
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&[f64]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    /// Updates every trainable parameter of `params`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &IndexMap<String, Tensor>, lr: f64) -> Result<()> {
        let names = params.trainable_names();
        for name in &names {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for parameter {name}")))?;
            let p = params.tensor(name)?;
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "gradient for {name} has shape {} but the parameter is {}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = names
                    .iter()
                    .flat_map(|n| grads[n].data())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for name in &names {
            let p = params.tensor_mut(name)?;
            let mut g: Vec<f64> = grads[name].data().iter().map(|g| g * scale).collect();
            if self.weight_decay != 0.0 {
                for (g, p) in g.iter_mut().zip(p.data()) {
                    *g += self.weight_decay * p;
                }
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; g.len()]);
            sgd_update(p.data_mut(), v, &g, lr, self.momentum);
        }
        Ok(())
    }
}
