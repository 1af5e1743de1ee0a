//! Adaptive codebook learning: an encoder maps observations into a 32-d
//! latent space, a learnable codebook partitions that space by nearest
//! neighbor, and a probabilistic decoder reconstructs observations from
//! the quantized codeword. Gradients cross the quantization step with a
//! straight-through estimator.

mod losses;
mod model;
mod stage1;

pub use losses::{cross_entropy, gaussian_nll, reconstruction_loss, vq_loss, COMMITMENT_BETA};
pub use model::{CodebookModel, DecoderHead, SystemKind, CODEWORD_DIM, HIDDEN_DIM};
pub use stage1::{
    all_state_pairs, assign_indices, count_occupancy, stage1_train, Stage1Config, Stage1Epoch,
};

use serde::{Deserialize, Serialize};

/// Final occupancy statistics of a trained codebook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub preset_k: usize,
    pub dim: usize,
    /// Training samples assigned to each codeword.
    pub occupancy: Vec<u64>,
}

impl Codebook {
    /// Indices of codewords with at least one assigned training sample.
    pub fn active_set(&self) -> Vec<usize> {
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, &c)| c >= 1)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.occupancy.iter().filter(|&&c| c >= 1).count()
    }

    pub fn activation_ratio(&self) -> f64 {
        self.active_count() as f64 / self.preset_k as f64
    }

    pub fn total_samples(&self) -> u64 {
        self.occupancy.iter().sum()
    }
}

/// Result of quantizing one latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    pub latent: Vec<f64>,
    pub codeword_index: usize,
    pub quantized: Vec<f64>,
}

/// Nearest codeword under Euclidean distance; ties break to the lowest
/// index. `codewords` is row-major `[k, dim]`.
pub fn nearest_codeword(latent: &[f64], codewords: &[f64], k: usize) -> usize {
    let dim = latent.len();
    debug_assert_eq!(codewords.len(), k * dim);
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for i in 0..k {
        let row = &codewords[i * dim..(i + 1) * dim];
        let mut d = 0.0;
        for (a, b) in latent.iter().zip(row) {
            let diff = a - b;
            d += diff * diff;
        }
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Quantize a batch of latent rows.
pub fn quantize_rows(latents: &[f64], dim: usize, codewords: &[f64], k: usize) -> Vec<usize> {
    latents
        .chunks_exact(dim)
        .map(|s| nearest_codeword(s, codewords, k))
        .collect()
}

/// Restricted nearest-neighbor search over a subset of codewords; returns
/// the position within `subset`.
pub fn nearest_in_subset(latent: &[f64], codewords: &[f64], subset: &[usize]) -> usize {
    let dim = latent.len();
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (pos, &i) in subset.iter().enumerate() {
        let row = &codewords[i * dim..(i + 1) * dim];
        let mut d = 0.0;
        for (a, b) in latent.iter().zip(row) {
            let diff = a - b;
            d += diff * diff;
        }
        if d < best_d {
            best_d = d;
            best = pos;
        }
    }
    best
}
