//! Named trainable tensors and the adaptive-moment optimizer that updates them.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param { name: name.into(), value: Arc::new(value) });
        ParamId(self.params.len() - 1)
    }

    /// He-style normal init with standard deviation `gain / sqrt(fan_in)`.
    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let std = gain / (fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let t = Tensor::from_fn(shape, |_| T::of(normal.sample(rng)));
        self.add(name, t)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                lhs: slot.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        slot.value = Arc::new(value);
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Register every parameter as a differentiable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bound {
        Bound(self.params.iter().map(|p| graph.leaf_shared(Arc::clone(&p.value))).collect())
    }

    /// Gradient of each parameter, in store order.
    pub fn collect_grads(&self, graph: &Graph<T>, bound: &Bound, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        bound.0.iter().map(|&v| grads.wrt(graph, v)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: Arc::new(p.value.cast()) })
                .collect(),
        }
    }
}

/// Graph handles for a [`ParamStore`], valid for one graph.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment gradient descent with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: Scalar>(config: AdamConfig, store: &ParamStore<P>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let step_size = T::of(c.lr / bc1);
        let (inv_bc2, eps) = (T::of(1.0 / bc2), T::of(c.eps));
        for (i, param) in store.params.iter_mut().enumerate() {
            let value = Arc::make_mut(&mut param.value);
            let (m, v, g) = (self.first[i].data_mut(), self.second[i].data_mut(), grads[i].data());
            for (((w, m), v), &g) in value.data_mut().iter_mut().zip(m).zip(v).zip(g) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::vector(&[3.0, -2.0]));
        let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &store);
        for _ in 0..500 {
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let sq = g.square(b.var(id));
            let loss = g.sum(sq);
            let grads = g.backward(loss).unwrap();
            let gs = store.collect_grads(&g, &b, &grads);
            adam.update(&mut store, &gs);
        }
        assert!(store.get(id).data().iter().all(|w| w.abs() < 1e-2));
    }

    #[test]
    fn set_rejects_wrong_shape() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("b", Tensor::zeros(vec![3]));
        assert!(store.set(id, Tensor::zeros(vec![4])).is_err());
        assert_eq!(store.find("b"), Some(id));
    }
}
