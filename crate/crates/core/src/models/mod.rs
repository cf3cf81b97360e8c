//! CQ-AE and CQ-VAE networks, their objectives, training and checkpoints.

pub mod checkpoint;
mod cqae;
mod cqvae;
pub mod layers;
pub mod networks;
pub mod objective;
pub mod train;

pub use checkpoint::{Checkpoint, ModelKind, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cqae::{CqAe, CqAeGraph, CqAeSettings};
pub use cqvae::{CqVae, CqVaeSettings, StepGraph, StepInput, StepOutput};
pub use objective::{
    ae_term, cqae_loss, total_objective, vae_term, LossTerms, LossWeights, ObjectiveParts, ObjectiveVars,
};
pub use train::{load_cqvae, CqAeEpoch, CqAeTrainer, CqVaeTrainer, EpochMetrics, TrainLog};
