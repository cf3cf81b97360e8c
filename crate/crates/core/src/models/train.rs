//! Minibatch training loops with per-epoch metrics and checkpointing.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::checkpoint::{Checkpoint, ModelKind, TrainState};
use super::cqae::{CqAe, CqAeSettings};
use super::cqvae::{CqVae, CqVaeSettings, StepInput};
use super::objective::LossTerms;
use crate::config::TrainConfig;
use crate::data::{Image, Record};
use crate::error::{Error, Result};
use crate::matching::{sample_gt_shapes, ExpertSet};
use crate::metrics::bias;
use crate::params::Adam;
use crate::quantize::GumbelNoise;
use crate::rng::{Seeds, Stream};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Batch-averaged metrics of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps completed by the end of the epoch.
    pub steps: usize,
    /// Temperature at the last step of the epoch.
    pub tau: f64,
    pub terms: LossTerms,
    pub entropy: f64,
    /// Mean bias of the best shape over the validation records.
    pub val_bias: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochMetrics>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,steps,tau,loss,kl,vae,ae,reg,best,entropy,val_bias";

    pub fn csv_row(m: &EpochMetrics) -> String {
        let t = &m.terms;
        let val = m.val_bias.map(|b| format!("{b:.9}")).unwrap_or_default();
        format!(
            "{},{},{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{}",
            m.epoch, m.steps, m.tau, t.total, t.kl, t.vae, t.ae, t.reg, t.best, m.entropy, val
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for m in &self.epochs {
            let _ = writeln!(out, "{}", Self::csv_row(m));
        }
        out
    }
}

fn steps_per_epoch(records: usize, batch: usize) -> usize {
    records.div_ceil(batch)
}

fn shuffled(seeds: &Seeds, epoch: usize, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seeds.rng(Stream::Shuffle, &[epoch as u64]));
    order
}

fn mean_grads<T: Scalar>(sum: &mut Option<Vec<Tensor<T>>>, grads: Vec<Tensor<T>>) {
    match sum {
        None => *sum = Some(grads),
        Some(acc) => {
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.add_assign(g);
            }
        }
    }
}

fn scale_grads<T: Scalar>(grads: &mut [Tensor<T>], k: f64) {
    let k = T::of(k);
    for g in grads {
        g.data_mut().iter_mut().for_each(|v| *v *= k);
    }
}

/// Mean of the training consensus shapes; seeds the decoder.
pub fn mean_consensus(records: &[Record]) -> Result<Shape<f64>> {
    if records.is_empty() {
        return Err(Error::Dataset("no training records".into()));
    }
    let shapes: Vec<Shape<f64>> = records.iter().map(|r| r.experts.consensus().clone()).collect();
    Shape::mean(&shapes)
}

/// Resumable CQ-VAE training state.
#[derive(Clone, Debug)]
pub struct CqVaeTrainer<T: Scalar> {
    pub config: TrainConfig,
    pub model: CqVae<T>,
    adam: Adam<T>,
    seeds: Seeds,
    epoch: usize,
    step: usize,
    planned_steps: usize,
}

impl<T: Scalar> CqVaeTrainer<T> {
    pub fn new(config: &TrainConfig, train: &[Record]) -> Result<Self> {
        config.validate()?;
        let mean = mean_consensus(train)?;
        let seeds = Seeds::new(config.seed);
        let model = CqVae::new(CqVaeSettings::from_config(config)?, &mean, &mut seeds.rng(Stream::Init, &[]))?;
        let adam = Adam::new(config.adam(), &model.params);
        let planned_steps = config.epochs * steps_per_epoch(train.len(), config.batch);
        Ok(Self { config: config.clone(), model, adam, seeds, epoch: 0, step: 0, planned_steps })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn tau(&self) -> f64 {
        self.config.tau_schedule(self.planned_steps).at(self.step)
    }

    /// Objective inputs for the record at `position` of epoch `epoch`.
    fn step_input_parts(&self, record: &Record, epoch: usize, position: usize) -> Result<(Tensor<T>, Vec<Shape<T>>, Shape<T>, GumbelNoise<T>)> {
        let c = &self.config;
        let path = [epoch as u64, position as u64];
        let experts: ExpertSet<T> = record.experts.cast();
        let gt = sample_gt_shapes(&experts, c.k_max, &mut self.seeds.rng(Stream::GtSampling, &path))?;
        let noise = GumbelNoise::sample(c.l_max * c.m, c.n, &mut self.seeds.rng(Stream::Gumbel, &path));
        Ok((record.image.to_tensor(), gt, experts.consensus().clone(), noise))
    }

    pub fn train_epoch(&mut self, train: &[Record], val: &[Record]) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(Error::Dataset("no training records".into()));
        }
        let order = shuffled(&self.seeds, self.epoch, train.len());
        let mut totals = LossTerms::default();
        let mut entropy = 0.0;
        let mut tau = self.tau();
        for (b, chunk) in order.chunks(self.config.batch).enumerate() {
            tau = self.tau();
            let mut grads = None;
            for (i, &idx) in chunk.iter().enumerate() {
                let position = b * self.config.batch + i;
                let (image, gt, consensus, noise) = self.step_input_parts(&train[idx], self.epoch, position)?;
                let input = StepInput { image: &image, gt_shapes: &gt, consensus: &consensus, noise: &noise, tau };
                let out = self.model.loss_and_grads(&input).map_err(|e| match e {
                    Error::NonFinite { term } => Error::Divergence { epoch: self.epoch, step: self.step, term },
                    other => other,
                })?;
                totals.accumulate(&out.terms);
                entropy += out.entropy;
                mean_grads(&mut grads, out.grads);
            }
            let mut grads = grads.expect("nonempty batch");
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            self.adam.update(&mut self.model.params, &grads);
            self.step += 1;
        }
        let n = train.len() as f64;
        let val_bias = validation_bias(&self.model, val)?;
        self.epoch += 1;
        Ok(EpochMetrics { epoch: self.epoch, steps: self.step, tau, terms: totals.scaled(1.0 / n), entropy: entropy / n, val_bias })
    }

    /// Trains until `config.epochs` epochs are complete, reporting each epoch.
    pub fn fit(&mut self, train: &[Record], val: &[Record], mut on_epoch: impl FnMut(&Self, &EpochMetrics)) -> Result<TrainLog> {
        let mut log = TrainLog::default();
        while self.epoch < self.config.epochs {
            let m = self.train_epoch(train, val)?;
            on_epoch(self, &m);
            log.epochs.push(m);
        }
        Ok(log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let state = TrainState {
            kind: ModelKind::CqVae,
            seed: self.config.seed,
            epoch: self.epoch,
            step: self.step,
            planned_steps: self.planned_steps,
        };
        let mut ck = Checkpoint::new(self.config.clone(), state);
        ck.push_params("param", &self.model.params);
        ck.push_list("adam.m", &self.model.params, &self.adam.first);
        ck.push_list("adam.v", &self.model.params, &self.adam.second);
        ck.push("buffer/mean_shape", &Tensor::vector(&self.model.mean_shape().to_flat()));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.state.kind != ModelKind::CqVae {
            return Err(Error::Checkpoint("checkpoint holds a CQ-AE model".into()));
        }
        let config = ck.config.clone();
        let mean = Shape::<f64>::from_flat(&ck.require("buffer/mean_shape")?.cast::<f64>().into_data())?;
        let seeds = Seeds::new(config.seed);
        let mut model = CqVae::new(CqVaeSettings::from_config(&config)?, &mean, &mut seeds.rng(Stream::Init, &[]))?;
        ck.restore_params("param", &mut model.params)?;
        let mut adam = Adam::new(config.adam(), &model.params);
        adam.first = ck.read_list("adam.m", &model.params)?;
        adam.second = ck.read_list("adam.v", &model.params)?;
        adam.step = ck.state.step as u64;
        Ok(Self { config, model, adam, seeds, epoch: ck.state.epoch, step: ck.state.step, planned_steps: ck.state.planned_steps })
    }
}

/// Mean `bias(best_shape, consensus)`; `None` without records.
pub fn validation_bias<T: Scalar>(model: &CqVae<T>, records: &[Record]) -> Result<Option<f64>> {
    if records.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for r in records {
        let best: Shape<f64> = model.best_shape(&r.image)?.cast();
        total += bias(&best, r.experts.consensus())?;
    }
    Ok(Some(total / records.len() as f64))
}

/// Restores a CQ-VAE for inference from a checkpoint.
pub fn load_cqvae<T: Scalar>(ck: &Checkpoint) -> Result<CqVae<T>> {
    Ok(CqVaeTrainer::<T>::from_checkpoint(ck)?.model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CqAeEpoch {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub entropy: f64,
    /// Mean over rows and images of `max_n z[m, n]`.
    pub mean_row_max: f64,
}

impl CqAeEpoch {
    pub const CSV_HEADER: &'static str = "epoch,steps,loss,entropy,mean_row_max";

    pub fn csv_row(&self) -> String {
        format!("{},{},{:.9},{:.9},{:.9}", self.epoch, self.steps, self.loss, self.entropy, self.mean_row_max)
    }
}

#[derive(Clone, Debug)]
pub struct CqAeTrainer<T: Scalar> {
    pub config: TrainConfig,
    pub model: CqAe<T>,
    adam: Adam<T>,
    seeds: Seeds,
    epoch: usize,
    step: usize,
}

impl<T: Scalar> CqAeTrainer<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let seeds = Seeds::new(config.seed);
        let model = CqAe::new(CqAeSettings::from_config(config), &mut seeds.rng(Stream::Init, &[]))?;
        let adam = Adam::new(config.adam(), &model.params);
        Ok(Self { config: config.clone(), model, adam, seeds, epoch: 0, step: 0 })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn train_epoch(&mut self, images: &[Image]) -> Result<CqAeEpoch> {
        if images.is_empty() {
            return Err(Error::Dataset("no training images".into()));
        }
        let order = shuffled(&self.seeds, self.epoch, images.len());
        let (mut loss, mut entropy, mut row_max) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(self.config.batch) {
            let mut grads = None;
            for &idx in chunk {
                let (l, z, g) = self.model.loss_and_grads(&images[idx].to_tensor()).map_err(|e| match e {
                    Error::NonFinite { term } => Error::Divergence { epoch: self.epoch, step: self.step, term },
                    other => other,
                })?;
                loss += l;
                entropy += z.entropy().as_f64();
                row_max += z.mean_row_max().as_f64();
                mean_grads(&mut grads, g);
            }
            let mut grads = grads.expect("nonempty batch");
            scale_grads(&mut grads, 1.0 / chunk.len() as f64);
            self.adam.update(&mut self.model.params, &grads);
            self.step += 1;
        }
        self.epoch += 1;
        let n = images.len() as f64;
        Ok(CqAeEpoch { epoch: self.epoch, steps: self.step, loss: loss / n, entropy: entropy / n, mean_row_max: row_max / n })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let state = TrainState { kind: ModelKind::CqAe, seed: self.config.seed, epoch: self.epoch, step: self.step, planned_steps: 0 };
        let mut ck = Checkpoint::new(self.config.clone(), state);
        ck.push_params("param", &self.model.params);
        ck.push_list("adam.m", &self.model.params, &self.adam.first);
        ck.push_list("adam.v", &self.model.params, &self.adam.second);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.state.kind != ModelKind::CqAe {
            return Err(Error::Checkpoint("checkpoint holds a CQ-VAE model".into()));
        }
        let mut t = Self::new(&ck.config)?;
        ck.restore_params("param", &mut t.model.params)?;
        t.adam.first = ck.read_list("adam.m", &t.model.params)?;
        t.adam.second = ck.read_list("adam.v", &t.model.params)?;
        t.adam.step = ck.state.step as u64;
        (t.epoch, t.step) = (ck.state.epoch, ck.state.step);
        Ok(t)
    }
}
