use rand::Rng;

use super::networks::{ImageDecoder, ImageEncoder};
use super::objective::cqae_loss_var;
use crate::autodiff::{Graph, Var};
use crate::config::TrainConfig;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::quantize::{coordinate_map_var, CoordinateVector, LatentCode, ProbabilityMatrix};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CqAeSettings {
    pub m: usize,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub c_range: [f64; 2],
    pub encoder_channels: Vec<usize>,
    pub alpha: f64,
}

impl CqAeSettings {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            m: config.m,
            n: config.n,
            height: config.height,
            width: config.width,
            c_range: config.c_range,
            encoder_channels: config.encoder_channels.clone(),
            alpha: config.alpha_cqae,
        }
    }
}

/// Image auto-encoder through a coordinate-quantized bottleneck.
#[derive(Clone, Debug)]
pub struct CqAe<T: Scalar> {
    pub settings: CqAeSettings,
    pub params: ParamStore<T>,
    coords: CoordinateVector<T>,
    encoder: ImageEncoder,
    decoder: ImageDecoder,
}

/// Nodes of one CQ-AE forward pass.
#[derive(Clone, Copy, Debug)]
pub struct CqAeGraph {
    pub z: Var,
    pub reconstruction: Var,
    pub loss: Var,
}

impl<T: Scalar> CqAe<T> {
    pub fn new(settings: CqAeSettings, rng: &mut impl Rng) -> Result<Self> {
        if !(settings.alpha >= 0.0) {
            return Err(Error::invalid("alpha_cqae must be nonnegative"));
        }
        let s = &settings;
        let coords = CoordinateVector::uniform(s.n, s.c_range[0], s.c_range[1])?;
        let mut params = ParamStore::new();
        let encoder = ImageEncoder::new(&mut params, "encoder", s.height, s.width, &s.encoder_channels, s.m, s.n, rng);
        let decoder = ImageDecoder::new(&mut params, "image_decoder", s.m, s.height, s.width, &s.encoder_channels, rng)?;
        Ok(Self { settings, params, coords, encoder, decoder })
    }

    pub fn coords(&self) -> &CoordinateVector<T> {
        &self.coords
    }

    fn decode(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let zp = coordinate_map_var(g, z, &self.coords)?;
        let zp = g.reshape(zp, vec![1, self.settings.m])?;
        self.decoder.forward(g, p, zp)
    }

    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, image: &Tensor<T>) -> Result<CqAeGraph> {
        let want = [1, 1, self.settings.height, self.settings.width];
        if image.shape() != want {
            return Err(Error::ShapeMismatch { op: "CqAe image", lhs: want.to_vec(), rhs: image.shape().to_vec() });
        }
        let x = g.constant(image.clone());
        let logits = self.encoder.logits(g, p, x)?;
        let z = g.softmax(logits);
        let reconstruction = self.decode(g, p, z)?;
        let loss = cqae_loss_var(g, x, reconstruction, z, self.settings.alpha)?;
        Ok(CqAeGraph { z, reconstruction, loss })
    }

    pub fn loss_and_grads(&self, image: &Tensor<T>) -> Result<(f64, ProbabilityMatrix<T>, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.forward(&mut g, &p, image)?;
        let loss = g.value(out.loss).item().as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite { term: "cqae" });
        }
        let z = ProbabilityMatrix::from_tensor(g.value(out.z))?;
        let grads = g.backward(out.loss)?;
        Ok((loss, z, self.params.collect_grads(&g, &p, &grads)))
    }

    pub fn encode(&self, image: &Image) -> Result<ProbabilityMatrix<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let out = self.forward(&mut g, &p, &image.to_tensor())?;
        ProbabilityMatrix::from_tensor(g.value(out.z))
    }

    /// Decode a (possibly random) code into an image.
    pub fn generate(&self, code: &LatentCode) -> Result<Image> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let z = g.constant(code.to_matrix::<T>().to_tensor());
        let out = self.decode(&mut g, &p, z)?;
        let pixels = g.value(out).data().iter().map(|v| v.as_f64() as f32).collect();
        Image::new(self.settings.height, self.settings.width, pixels)
    }
}
