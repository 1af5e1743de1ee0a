//! Two-stage training. Stage 1 fits the codebook autoencoder; stage 2
//! freezes it and fits the energy head plus the landscape dynamics on
//! lag-time transition pairs, with a Boltzmann regularizer tying node
//! energies to long-run occupancy.

mod losses;
mod pipeline;
mod stage2;

pub use losses::{loss_code, loss_latent, loss_phy};
pub use pipeline::{import_frozen, train_pipeline, TrainedModel};
pub use stage2::{stage2_train, Stage2Data};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative weights of the stage-2 loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub latent: f64,
    pub code: f64,
    pub phy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            latent: 1.0,
            code: 1.0,
            phy: 1.0,
        }
    }
}

/// Everything a training run needs beyond the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Preset codeword count K.
    pub k: usize,
    pub learning_rate: f64,
    /// Per-epoch exponential decay of the learning rate.
    pub lr_decay: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    /// Lag time τ in raw trajectory steps.
    pub lag_time: usize,
    /// Euler substeps per lag unit in the learned flow.
    pub n_int: usize,
    pub seed: u64,
    pub disable_phy: bool,
    pub disable_latent: bool,
    pub bypass_phi_psi: bool,
    /// Reuse encoder/decoder/codebook from this checkpoint and keep them
    /// frozen; stage 1 is skipped.
    pub freeze_imports: Option<PathBuf>,
    /// Cap on stage-1 optimizer steps per epoch (full pass when `None`).
    pub stage1_max_steps_per_epoch: Option<usize>,
    /// Source codewords per stage-2 optimizer step.
    pub stage2_sources_per_step: usize,
    /// Stage-2 learning rate; falls back to `learning_rate` when unset.
    pub stage2_learning_rate: Option<f64>,
    /// Jitter of the data-anchored codeword initialization.
    pub init_spread: f64,
    /// Re-anchor codewords with no assignments during stage-1 epochs.
    pub reseed_dead_codewords: bool,
    /// Learning-rate multiplier for the codeword vectors in stage 1.
    pub codebook_lr_multiplier: f64,
    /// Freeze the encoder after this many stage-1 epochs.
    pub encoder_freeze_after: Option<usize>,
    /// Sigmoid scale k on energy differences.
    pub sigmoid_scale: f64,
    pub loss_weights: LossWeights,
    /// Temperature of the Boltzmann regularizer.
    pub kt: f64,
    /// Laplace smoothing of the empirical occupancy distribution.
    pub laplace_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 500,
            learning_rate: 3e-4,
            lr_decay: 0.99,
            epochs_stage1: 20,
            epochs_stage2: 15,
            batch_size: 128,
            lag_time: 100,
            n_int: 10,
            seed: 0,
            disable_phy: false,
            disable_latent: false,
            bypass_phi_psi: false,
            freeze_imports: None,
            stage1_max_steps_per_epoch: Some(800),
            stage2_sources_per_step: 2,
            stage2_learning_rate: Some(3e-3),
            init_spread: 0.5,
            reseed_dead_codewords: false,
            codebook_lr_multiplier: 100.0,
            encoder_freeze_after: Some(10),
            sigmoid_scale: 10.0,
            loss_weights: LossWeights::default(),
            kt: 1.0,
            laplace_alpha: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1
            || self.epochs_stage1 < 1
            || self.epochs_stage2 < 1
            || self.batch_size < 1
            || self.lag_time < 1
            || self.n_int < 1
            || self.stage2_sources_per_step < 1
        {
            return Err(Error::Config("all counts must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must be in (0, 1]".into()));
        }
        if self.kt <= 0.0 {
            return Err(Error::Config("kt must be positive".into()));
        }
        Ok(())
    }
}

/// Loss values of one epoch; `total` is the sum of the enabled terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub epoch: usize,
    pub stage: u8,
    pub reconstruct: f64,
    pub vq: f64,
    pub latent: f64,
    pub code: f64,
    pub phy: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn stage1(epoch: usize, reconstruct: f64, vq: f64) -> Self {
        Self {
            epoch,
            stage: 1,
            reconstruct,
            vq,
            latent: 0.0,
            code: 0.0,
            phy: 0.0,
            total: reconstruct + vq,
        }
    }

    pub fn stage2(epoch: usize, latent: f64, code: f64, phy: f64) -> Self {
        Self {
            epoch,
            stage: 2,
            reconstruct: 0.0,
            vq: 0.0,
            latent,
            code,
            phy,
            total: latent + code + phy,
        }
    }
}
