use rand::Rng;

use super::layers::{Conv, Linear, Mlp};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;

/// Spatial side after one 3×3, stride-2, pad-1 convolution.
fn halved(side: usize) -> usize {
    (side + 1) / 2
}

/// Strided convolution stack mapping an image to `M×N` logits.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    convs: Vec<Conv>,
    head: Linear,
    rows: usize,
    cols: usize,
}

impl ImageEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        height: usize,
        width: usize,
        channels: &[usize],
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let (mut h, mut w, mut c_in) = (height, width, 1);
        let mut convs = Vec::new();
        for (i, &c) in channels.iter().enumerate() {
            convs.push(Conv::new(store, &format!("{name}.conv{i}"), c_in, c, 3, 2, 1, false, rng));
            (h, w, c_in) = (halved(h), halved(w), c);
        }
        let head = Linear::new(store, &format!("{name}.head"), c_in * h * w, rows * cols, 1.0, rng);
        Self { convs, head, rows, cols }
    }

    /// `x: [1, 1, H, W]` to logits `[M, N]`.
    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for conv in &self.convs {
            h = conv.forward(g, p, h)?;
            h = g.relu(h);
        }
        let flat = g.reshape(h, vec![1, self.head.inputs])?;
        let logits = self.head.forward(g, p, flat)?;
        g.reshape(logits, vec![self.rows, self.cols])
    }
}

/// MLP from latent vectors `[S, M]` to flattened shapes `[S, 2J]`.
///
/// The output bias starts at the training mean shape, so an untrained
/// decoder already emits a plausible contour.
#[derive(Clone, Debug)]
pub struct ShapeDecoder {
    mlp: Mlp,
}

impl ShapeDecoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        latent: usize,
        hidden: &[usize],
        mean_flat: &[T],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let widths: Vec<usize> = std::iter::once(latent).chain(hidden.iter().copied()).chain([mean_flat.len()]).collect();
        let mlp = Mlp::new(store, name, &widths, 0.01, rng);
        store.set(mlp.output().bias_id(), crate::tensor::Tensor::vector(mean_flat))?;
        Ok(Self { mlp })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        self.mlp.forward(g, p, z)
    }
}

/// MLP from flattened, centered shapes `[S, 2J]` to logits `[S·M, N]`.
#[derive(Clone, Debug)]
pub struct ShapeEncoder {
    mlp: Mlp,
    rows: usize,
    cols: usize,
}

impl ShapeEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        coords: usize,
        hidden: &[usize],
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let widths: Vec<usize> = std::iter::once(coords).chain(hidden.iter().copied()).chain([rows * cols]).collect();
        Self { mlp: Mlp::new(store, name, &widths, 1.0, rng), rows, cols }
    }

    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, shapes: Var) -> Result<Var> {
        let samples = g.shape(shapes)[0];
        let out = self.mlp.forward(g, p, shapes)?;
        g.reshape(out, vec![samples * self.rows, self.cols])
    }
}

/// Transposed-convolution stack from latent vectors `[1, M]` to `[1, 1, H, W]`.
#[derive(Clone, Debug)]
pub struct ImageDecoder {
    head: Linear,
    deconvs: Vec<Conv>,
    seed_shape: [usize; 3],
}

impl ImageDecoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        latent: usize,
        height: usize,
        width: usize,
        channels: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let levels = channels.len();
        let factor = 1 << levels;
        if height % factor != 0 || width % factor != 0 {
            return Err(Error::invalid(format!(
                "image decoder needs sides divisible by {factor}, got {height}×{width}"
            )));
        }
        let seed_ch = *channels.last().expect("nonempty");
        let seed_shape = [seed_ch, height / factor, width / factor];
        let head = Linear::new(store, &format!("{name}.head"), latent, seed_shape.iter().product(), std::f64::consts::SQRT_2, rng);
        let mut deconvs = Vec::new();
        let mut c_in = seed_ch;
        for i in (0..levels).rev() {
            let c_out = if i == 0 { 1 } else { channels[i - 1] };
            deconvs.push(Conv::new(store, &format!("{name}.deconv{}", levels - 1 - i), c_in, c_out, 4, 2, 1, true, rng));
            c_in = c_out;
        }
        Ok(Self { head, deconvs, seed_shape })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let h = self.head.forward(g, p, z)?;
        let h = g.relu(h);
        let [c, hh, ww] = self.seed_shape;
        let mut h = g.reshape(h, vec![1, c, hh, ww])?;
        for (i, deconv) in self.deconvs.iter().enumerate() {
            h = deconv.forward(g, p, h)?;
            h = if i + 1 < self.deconvs.len() { g.relu(h) } else { g.sigmoid(h) };
        }
        Ok(h)
    }
}
