//! `basin` estimates the energy landscape of a stochastic dynamical system
//! directly from its evolution trajectories, without energy labels. The
//! state space is coarse-grained by an adaptively learned codebook, and
//! codeword energies are trained jointly with a graph-based model of how
//! probability mass flows between neighboring codewords, regularized
//! toward Boltzmann statistics.
//!
//! The crate ships:
//!
//! - [`numerics`]: small dense-tensor autodiff engine and Adam optimizer;
//! - [`systems`]: trajectory sources (a 2-D four-well Langevin simulator,
//!   a two-locus evolutionary simulator, CSV ingestion) and observation
//!   transforms;
//! - [`codebook`]: encoder/decoder networks and vector quantization;
//! - [`landscape`]: codeword topology, the exact graph diffusion equation,
//!   and its learned high-dimensional counterpart;
//! - [`training`]: the two-stage training procedure with ablation switches;
//! - [`evaluation`]: energy-correlation and rollout-divergence metrics plus
//!   frequency- and autoencoder-based baselines;
//! - [`cli`]: config-driven experiment commands (`simulate`, `train`,
//!   `evaluate`, `baseline`, `sweep`) and checkpointing.
//!
//! See the `examples/` directory for runnable end-to-end walkthroughs of
//! each capability.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod landscape;
pub mod persist;
pub mod training;
pub mod numerics;
pub mod codebook;
pub mod systems;

pub use error::{Error, Result};

/// Entry point used by the `basin` binary; returns the process exit code.
pub fn cli_main() -> i32 {
    cli::main_entry()
}
