use rand::Rng;

use super::networks::{ImageEncoder, ShapeDecoder, ShapeEncoder};
use super::objective::{
    categorical_log_likelihood_var, gaussian_log_likelihood_var, kl_to_uniform_var, LossTerms, LossWeights,
    ObjectiveVars,
};
use crate::autodiff::{Graph, Var};
use crate::config::TrainConfig;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::matching::{greedy_match, MatchResult};
use crate::params::{Bound, ParamStore};
use crate::quantize::{
    coordinate_map_var, gumbel_max_sample, gumbel_softmax_var, CoordinateVector, GumbelNoise, LatentCode,
    LatentVector, ProbabilityMatrix,
};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Network sizes and loss settings of a [`CqVae`].
#[derive(Clone, Debug, PartialEq)]
pub struct CqVaeSettings {
    pub m: usize,
    pub n: usize,
    pub j: usize,
    pub height: usize,
    pub width: usize,
    pub c_range: [f64; 2],
    pub encoder_channels: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub shape_encoder_hidden: Vec<usize>,
    pub likelihood_scale: f64,
    pub straight_through: bool,
    pub weights: LossWeights,
}

impl CqVaeSettings {
    pub fn from_config(config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            m: config.m,
            n: config.n,
            j: config.j,
            height: config.height,
            width: config.width,
            c_range: config.c_range,
            encoder_channels: config.encoder_channels.clone(),
            decoder_hidden: config.decoder_hidden.clone(),
            shape_encoder_hidden: config.shape_encoder_hidden.clone(),
            likelihood_scale: config.likelihood_scale,
            straight_through: config.straight_through,
            weights: LossWeights::new(config.alpha, config.beta, config.alpha_cqae)?,
        })
    }
}

/// Everything random that one objective evaluation consumes.
#[derive(Clone, Debug)]
pub struct StepInput<'a, T> {
    pub image: &'a Tensor<T>,
    /// Ground-truth samples to match; empty disables the regression term.
    pub gt_shapes: &'a [Shape<T>],
    pub consensus: &'a Shape<T>,
    /// Gumbel noise for `l_max` samples, `[l_max·M, N]`.
    pub noise: &'a GumbelNoise<T>,
    pub tau: f64,
}

/// Graph nodes and side results of one objective evaluation.
#[derive(Clone, Debug)]
pub struct StepGraph {
    pub loss: Var,
    pub vars: ObjectiveVars,
    pub probabilities: Var,
    pub codes: Vec<LatentCode>,
    pub matching: Option<MatchResult>,
}

#[derive(Clone, Debug)]
pub struct StepOutput<T> {
    pub terms: LossTerms,
    /// Entropy of `q(z|x)` in nats.
    pub entropy: f64,
    pub grads: Vec<Tensor<T>>,
}

/// Coordinate-quantized VAE producing a distribution over shapes.
#[derive(Clone, Debug)]
pub struct CqVae<T: Scalar> {
    pub settings: CqVaeSettings,
    pub params: ParamStore<T>,
    coords: CoordinateVector<T>,
    mean_shape: Shape<T>,
    encoder: ImageEncoder,
    decoder: ShapeDecoder,
    shape_encoder: ShapeEncoder,
}

impl<T: Scalar> CqVae<T> {
    /// `mean_shape` seeds the decoder output bias and centers shape-encoder inputs.
    pub fn new(settings: CqVaeSettings, mean_shape: &Shape<f64>, rng: &mut impl Rng) -> Result<Self> {
        let s = &settings;
        if mean_shape.len() != s.j {
            return Err(Error::ShapeMismatch { op: "CqVae::new", lhs: vec![s.j, 2], rhs: vec![mean_shape.len(), 2] });
        }
        let coords = CoordinateVector::uniform(s.n, s.c_range[0], s.c_range[1])?;
        let mean_shape: Shape<T> = mean_shape.cast();
        let mut params = ParamStore::new();
        let encoder = ImageEncoder::new(&mut params, "encoder", s.height, s.width, &s.encoder_channels, s.m, s.n, rng);
        let decoder = ShapeDecoder::new(&mut params, "decoder", s.m, &s.decoder_hidden, &mean_shape.to_flat(), rng)?;
        let shape_encoder =
            ShapeEncoder::new(&mut params, "shape_encoder", 2 * s.j, &s.shape_encoder_hidden, s.m, s.n, rng);
        Ok(Self { settings, params, coords, mean_shape, encoder, decoder, shape_encoder })
    }

    pub fn coords(&self) -> &CoordinateVector<T> {
        &self.coords
    }

    pub fn mean_shape(&self) -> &Shape<T> {
        &self.mean_shape
    }

    fn check_image(&self, image: &Tensor<T>) -> Result<()> {
        let want = [1, 1, self.settings.height, self.settings.width];
        if image.shape() != want {
            return Err(Error::ShapeMismatch { op: "CqVae image", lhs: want.to_vec(), rhs: image.shape().to_vec() });
        }
        Ok(())
    }

    /// `q(z|x)` as an `[M, N]` node.
    pub fn probabilities_var(&self, g: &mut Graph<T>, p: &Bound, image: &Tensor<T>) -> Result<(Var, Var)> {
        self.check_image(image)?;
        let x = g.constant(image.clone());
        let logits = self.encoder.logits(g, p, x)?;
        Ok((g.softmax(logits), g.log_softmax(logits)))
    }

    pub fn probabilities(&self, image: &Image) -> Result<ProbabilityMatrix<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let (pi, _) = self.probabilities_var(&mut g, &p, &image.to_tensor())?;
        ProbabilityMatrix::from_tensor(g.value(pi))
    }

    /// Latent rows `[S, M]` to shape rows `[S, 2J]`.
    pub fn decode_var(&self, g: &mut Graph<T>, p: &Bound, latents: Var) -> Result<Var> {
        self.decoder.forward(g, p, latents)
    }

    fn shapes_of(&self, flat: &Tensor<T>) -> Result<Vec<Shape<T>>> {
        flat.data().chunks(2 * self.settings.j).map(Shape::from_flat).collect()
    }

    pub fn decode_latents(&self, latents: &[LatentVector<T>]) -> Result<Vec<Shape<T>>> {
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let m = self.settings.m;
        if let Some(bad) = latents.iter().find(|z| z.0.len() != m) {
            return Err(Error::ShapeMismatch { op: "decode_latents", lhs: vec![m], rhs: vec![bad.0.len()] });
        }
        let data: Vec<T> = latents.iter().flat_map(|z| z.0.iter().copied()).collect();
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let z = g.constant(Tensor::new(vec![latents.len(), m], data)?);
        let out = self.decode_var(&mut g, &p, z)?;
        self.shapes_of(g.value(out))
    }

    pub fn decode_codes(&self, codes: &[LatentCode]) -> Result<Vec<Shape<T>>> {
        let latents: Vec<LatentVector<T>> = codes.iter().map(|c| c.to_latent(&self.coords)).collect::<Result<_>>()?;
        self.decode_latents(&latents)
    }

    /// Deterministic path: decode the expected coordinates `q(z|x) × c`.
    pub fn best_shape(&self, image: &Image) -> Result<Shape<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let (pi, _) = self.probabilities_var(&mut g, &p, &image.to_tensor())?;
        let z = coordinate_map_var(&mut g, pi, &self.coords)?;
        let z = g.reshape(z, vec![1, self.settings.m])?;
        let out = self.decode_var(&mut g, &p, z)?;
        Ok(self.shapes_of(g.value(out))?.remove(0))
    }

    /// `count` shapes decoded from independent hard codes drawn from `q(z|x)`.
    pub fn sample_shapes(&self, image: &Image, count: usize, rng: &mut impl Rng) -> Result<Vec<Shape<T>>> {
        let pi = self.probabilities(image)?;
        self.sample_from(&pi, count, rng)
    }

    pub fn sample_from(&self, pi: &ProbabilityMatrix<T>, count: usize, rng: &mut impl Rng) -> Result<Vec<Shape<T>>> {
        if count == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let codes: Vec<LatentCode> = (0..count).map(|_| gumbel_max_sample(pi, rng)).collect();
        self.decode_codes(&codes)
    }

    /// Shape-encoder distribution `q(z|s)` for each shape.
    pub fn shape_encoder_probs(&self, shapes: &[Shape<T>]) -> Result<Vec<ProbabilityMatrix<T>>> {
        if shapes.is_empty() {
            return Ok(Vec::new());
        }
        let mut data = Vec::with_capacity(shapes.len() * 2 * self.settings.j);
        for s in shapes {
            s.check_same_len(&self.mean_shape, "shape_encoder_probs")?;
            data.extend(s.to_flat());
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let flat = g.constant(Tensor::new(vec![shapes.len(), 2 * self.settings.j], data)?);
        let logits = self.shape_encoder_logits(&mut g, &p, flat)?;
        let probs = g.softmax(logits);
        let (m, n) = (self.settings.m, self.settings.n);
        g.value(probs).data().chunks(m * n).map(|block| ProbabilityMatrix::new(m, n, block.to_vec())).collect()
    }

    fn shape_encoder_logits(&self, g: &mut Graph<T>, p: &Bound, flat: Var) -> Result<Var> {
        let neg_mean: Vec<T> = self.mean_shape.to_flat().into_iter().map(|v| -v).collect();
        let neg_mean = g.constant(Tensor::vector(&neg_mean));
        let centered = g.add_row(flat, neg_mean)?;
        let scaled = g.scale(centered, T::of(self.settings.likelihood_scale));
        self.shape_encoder.logits(g, p, scaled)
    }

    /// Builds the minimized objective for one image.
    pub fn objective(&self, g: &mut Graph<T>, p: &Bound, input: &StepInput<'_, T>) -> Result<StepGraph> {
        let (m, j) = (self.settings.m, self.settings.j);
        let scale = self.settings.likelihood_scale;
        let (pi, log_pi) = self.probabilities_var(g, p, input.image)?;
        let kl = kl_to_uniform_var(g, pi, log_pi)?;
        let vae = g.scale(kl, -T::one());

        let (z, codes) = gumbel_softmax_var(g, pi, input.noise, input.tau, self.settings.straight_through)?;
        let samples = codes.len();
        let z_samples = coordinate_map_var(g, z, &self.coords)?;
        let z_samples = g.reshape(z_samples, vec![samples, m])?;
        let z_best = coordinate_map_var(g, pi, &self.coords)?;
        let z_best = g.reshape(z_best, vec![1, m])?;
        let latents = g.concat(&[z_samples, z_best], 0)?;
        let decoded = self.decode_var(g, p, latents)?;
        let sample_rows: Vec<usize> = (0..samples).collect();
        let sampled = g.select_rows(decoded, &sample_rows)?;
        let best = g.select_rows(decoded, &[samples])?;

        let (reg, matching) = if input.gt_shapes.is_empty() {
            (g.constant(Tensor::scalar(T::zero())), None)
        } else {
            let model_shapes = self.shapes_of(g.value(sampled))?;
            let result = greedy_match(&model_shapes, input.gt_shapes)?;
            let matched = g.select_rows(sampled, &result.assignment)?;
            let targets: Vec<T> = input.gt_shapes.iter().flat_map(Shape::to_flat).collect();
            let targets = g.constant(Tensor::new(vec![input.gt_shapes.len(), 2 * j], targets)?);
            (gaussian_log_likelihood_var(g, matched, targets, scale)?, Some(result))
        };

        input.consensus.check_same_len(&self.mean_shape, "consensus")?;
        let consensus = g.constant(Tensor::new(vec![1, 2 * j], input.consensus.to_flat())?);
        let best_u = gaussian_log_likelihood_var(g, best, consensus, scale)?;

        let enc_logits = self.shape_encoder_logits(g, p, sampled)?;
        let log_q = g.log_softmax(enc_logits);
        let ae = categorical_log_likelihood_var(g, log_q, &codes)?;
        let ae = g.scale(ae, T::of(1.0 / samples as f64));

        let vars = ObjectiveVars { kl, vae, ae, reg, best: best_u };
        let loss = vars.total(g, &self.settings.weights)?;
        Ok(StepGraph { loss, vars, probabilities: pi, codes, matching })
    }

    /// Loss terms, latent entropy and parameter gradients (in store order) for one image.
    pub fn loss_and_grads(&self, input: &StepInput<'_, T>) -> Result<StepOutput<T>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g);
        let step = self.objective(&mut g, &p, input)?;
        let terms = step.vars.terms(&g, step.loss);
        terms.check_finite()?;
        let entropy = ProbabilityMatrix::from_tensor(g.value(step.probabilities))?.entropy().as_f64();
        let grads = g.backward(step.loss)?;
        Ok(StepOutput { terms, entropy, grads: self.params.collect_grads(&g, &p, &grads) })
    }

    pub fn cast<U: Scalar>(&self) -> CqVae<U> {
        CqVae {
            settings: self.settings.clone(),
            params: self.params.cast(),
            coords: CoordinateVector::new(self.coords.values().iter().map(|c| U::of(c.as_f64())).collect())
                .expect("cast preserves order"),
            mean_shape: self.mean_shape.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            shape_encoder: self.shape_encoder.clone(),
        }
    }
}
