use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine map `x·W + b` on `[batch, inputs]`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_normal(format!("{name}.weight"), vec![inputs, outputs], inputs, gain, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs]));
        Self { weight, bias, inputs, outputs }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, p.var(self.weight))?;
        g.add_row(y, p.var(self.bias))
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer size from input to output.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        out_gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { out_gain } else { std::f64::consts::SQRT_2 };
                Linear::new(store, &format!("{name}.{i}"), w[0], w[1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, p, x)?;
            if i + 1 < self.layers.len() {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    pub fn output(&self) -> &Linear {
        self.layers.last().expect("at least one layer")
    }
}

/// Square-kernel convolution, plain or transposed.
#[derive(Clone, Debug)]
pub struct Conv {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    padding: usize,
    transposed: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        transposed: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = if transposed {
            vec![in_ch, out_ch, kernel, kernel]
        } else {
            vec![out_ch, in_ch, kernel, kernel]
        };
        let fan_in = if transposed { in_ch * kernel * kernel / (stride * stride) } else { in_ch * kernel * kernel };
        let weight = store.add_normal(format!("{name}.weight"), shape, fan_in, std::f64::consts::SQRT_2, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![out_ch]));
        Self { weight, bias, stride, padding, transposed }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (w, b) = (p.var(self.weight), Some(p.var(self.bias)));
        if self.transposed {
            g.conv_transpose2d(x, w, b, self.stride, self.padding)
        } else {
            g.conv2d(x, w, b, self.stride, self.padding)
        }
    }
}
