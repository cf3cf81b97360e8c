#![allow(dead_code)]

use cqvae::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Central finite differences of a scalar function of several tensors.
pub fn numeric_grads(inputs: &[Tensor<f64>], f: &dyn Fn(&[Tensor<f64>]) -> f64, step: f64) -> Vec<Tensor<f64>> {
    let mut out = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let mut grad = Tensor::zeros(t.shape().to_vec());
        for e in 0..t.numel() {
            let mut probe = inputs.to_vec();
            probe[i].data_mut()[e] = t.data()[e] + step;
            let up = f(&probe);
            probe[i].data_mut()[e] = t.data()[e] - step;
            let down = f(&probe);
            grad.data_mut()[e] = (up - down) / (2.0 * step);
        }
        out.push(grad);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    let scale = norm(a.data()).max(norm(b.data()));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Compares reverse-mode gradients of `build` against central differences;
/// returns the worst relative error over all inputs.
pub fn gradient_check(inputs: &[Tensor<f64>], build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let eval = |ts: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };
    let numeric = numeric_grads(inputs, &eval, 1e-5);
    vars.iter()
        .zip(&numeric)
        .map(|(&v, n)| relative_error(&grads.wrt(&g, v), n))
        .fold(0.0, f64::max)
}
