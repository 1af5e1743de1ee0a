//! Stage 1: train encoder, decoder and codeword vectors on reconstruction
//! plus quantization losses, then count final codeword occupancy over the
//! whole training set.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::codebook::losses::{reconstruction_loss, vq_loss, DecodedBatch};
use crate::codebook::model::{CodebookModel, SystemKind, CODEWORD_DIM};
use crate::codebook::{quantize_rows, Codebook};
use crate::error::{Error, Result};
use crate::numerics::{rng_stream, AdamState, ParamStore, Tape};
use crate::systems::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    /// Cap on optimizer steps per epoch; `None` runs a full pass. Large
    /// datasets are subsampled afresh each epoch.
    pub max_steps_per_epoch: Option<usize>,
    /// Jitter of the data-anchored codeword initialization.
    pub init_spread: f64,
    /// Re-anchor codewords that received no assignments during an epoch
    /// at freshly encoded samples (stops near the end of training so the
    /// final active set settles).
    pub reseed_dead_codewords: bool,
    /// Learning-rate multiplier for the codeword vectors; letting them
    /// chase the latent cloud faster than the encoder moves keeps more
    /// of the codebook competitive.
    pub codebook_lr_multiplier: f64,
    /// Freeze the encoder after this many epochs; the remaining epochs
    /// refine the codebook and decoder against a fixed latent cloud.
    pub encoder_freeze_after: Option<usize>,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            lr_decay: 0.99,
            max_steps_per_epoch: Some(800),
            init_spread: 0.5,
            reseed_dead_codewords: false,
            codebook_lr_multiplier: 100.0,
            encoder_freeze_after: Some(10),
            seed: 0,
        }
    }
}

/// Per-epoch averaged stage-1 losses.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Stage1Epoch {
    pub epoch: usize,
    pub reconstruct: f64,
    pub vq: f64,
}

pub fn all_state_pairs(trajs: &[Trajectory]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (ti, t) in trajs.iter().enumerate() {
        for i in 0..t.len() {
            pairs.push((ti, i));
        }
    }
    pairs
}

/// Initialize codewords from encoded training states plus Gaussian
/// jitter scaled by the per-dimension latent spread. `spread = 0` seeds
/// every codeword exactly on an encoded sample; larger values push
/// surplus codewords off the data manifold so the active count saturates
/// with data complexity rather than with the preset K.
fn init_codebook(
    model: &CodebookModel,
    store: &mut ParamStore,
    trajs: &[Trajectory],
    pairs: &[(usize, usize)],
    spread: f64,
    seed: u64,
) -> Result<()> {
    let mut rng = rng_stream(seed, "codeword-init", 0);
    let n_probe = pairs.len().min(10_000);
    let stride = (pairs.len() / n_probe).max(1);
    let probe: Vec<(usize, usize)> = pairs.iter().step_by(stride).take(n_probe).copied().collect();
    let feats = model.kind.featurize_batch(trajs, &probe);
    let latents = model.encode_raw(store, &feats, probe.len());

    let n = probe.len() as f64;
    let mut mean = vec![0.0; CODEWORD_DIM];
    for row in latents.chunks_exact(CODEWORD_DIM) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; CODEWORD_DIM];
    for row in latents.chunks_exact(CODEWORD_DIM) {
        for (d, (v, m)) in row.iter().zip(&mean).enumerate() {
            var[d] += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt().max(1e-3)).collect();

    let k = model.k;
    let mut data = vec![0.0; k * CODEWORD_DIM];
    for i in 0..k {
        let anchor = rng.random_range(0..probe.len());
        let base = &latents[anchor * CODEWORD_DIM..(anchor + 1) * CODEWORD_DIM];
        for d in 0..CODEWORD_DIM {
            let xi: f64 = rng.sample(StandardNormal);
            data[i * CODEWORD_DIM + d] = base[d] + spread * std[d] * xi;
        }
    }
    let cb = store.get_mut(model.codebook);
    cb.data = data;
    Ok(())
}

/// Train the codebook model and return final occupancy counts plus the
/// per-epoch loss history.
pub fn stage1_train(
    model: &CodebookModel,
    store: &mut ParamStore,
    trajs: &[Trajectory],
    cfg: &Stage1Config,
) -> Result<(Codebook, Vec<Stage1Epoch>)> {
    if trajs.is_empty() {
        return Err(Error::Data("stage 1 requires a non-empty training set".into()));
    }
    let pairs = all_state_pairs(trajs);
    init_codebook(model, store, trajs, &pairs, cfg.init_spread, cfg.seed)?;

    let encoder_params = model.encoder.params();
    let decoder_params: Vec<_> = model
        .stage1_params()
        .into_iter()
        .filter(|id| !encoder_params.contains(id) && *id != model.codebook)
        .collect();
    let mut adam_encoder =
        AdamState::new(cfg.learning_rate, cfg.lr_decay, store, encoder_params);
    let mut adam_decoder =
        AdamState::new(cfg.learning_rate, cfg.lr_decay, store, decoder_params);
    let mut adam_codebook = AdamState::new(
        cfg.learning_rate * cfg.codebook_lr_multiplier,
        cfg.lr_decay,
        store,
        vec![model.codebook],
    );
    let mut shuffle_rng = rng_stream(cfg.seed, "stage1-shuffle", 0);
    let mut history = Vec::with_capacity(cfg.epochs);

    let mut reseed_rng = rng_stream(cfg.seed, "codeword-reseed", 0);
    // Let the active set settle over the last fifth of training.
    let reseed_until = cfg.epochs - cfg.epochs.div_ceil(5);
    for epoch in 0..cfg.epochs {
        adam_encoder.set_epoch(epoch as u32);
        adam_decoder.set_epoch(epoch as u32);
        adam_codebook.set_epoch(epoch as u32);
        let encoder_live = cfg.encoder_freeze_after.is_none_or(|e| epoch < e);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let full_steps = pairs.len().div_ceil(cfg.batch_size);
        let steps = cfg
            .max_steps_per_epoch
            .map_or(full_steps, |cap| full_steps.min(cap));
        let mut sum_rec = 0.0;
        let mut sum_vq = 0.0;
        let mut epoch_hits = vec![0u64; model.k];
        for step in 0..steps {
            let lo = step * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(pairs.len());
            let batch: Vec<(usize, usize)> = order[lo..hi].iter().map(|&i| pairs[i]).collect();
            let (rec, vq) = train_step(
                model,
                store,
                trajs,
                &batch,
                encoder_live.then_some(&mut adam_encoder),
                &mut adam_decoder,
                &mut adam_codebook,
                &mut epoch_hits,
            )
                .map_err(|e| wrap_divergence(e, epoch))?;
            if !rec.is_finite() || !vq.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    term: "reconstruct+vq",
                    msg: format!("rec={rec}, vq={vq}"),
                });
            }
            sum_rec += rec;
            sum_vq += vq;
        }
        if cfg.reseed_dead_codewords && epoch < reseed_until {
            reseed_dead(model, store, trajs, &pairs, &epoch_hits, &mut reseed_rng);
        }
        history.push(Stage1Epoch {
            epoch,
            reconstruct: sum_rec / steps as f64,
            vq: sum_vq / steps as f64,
        });
    }

    // Final occupancy over every training state.
    let occupancy = count_occupancy(model, store, trajs, &pairs);
    Ok((
        Codebook {
            preset_k: model.k,
            dim: CODEWORD_DIM,
            occupancy,
        },
        history,
    ))
}

fn wrap_divergence(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { op, node } => Error::Diverged {
            epoch,
            term: "reconstruct+vq",
            msg: format!("non-finite value in `{op}` at node {node}"),
        },
        other => other,
    }
}

/// Move codewords that won nothing this epoch onto freshly encoded
/// training states.
fn reseed_dead(
    model: &CodebookModel,
    store: &mut ParamStore,
    trajs: &[Trajectory],
    pairs: &[(usize, usize)],
    epoch_hits: &[u64],
    rng: &mut rand_chacha::ChaCha12Rng,
) {
    let dead: Vec<usize> = (0..model.k).filter(|&i| epoch_hits[i] == 0).collect();
    if dead.is_empty() {
        return;
    }
    let anchors: Vec<(usize, usize)> = (0..dead.len())
        .map(|_| pairs[rng.random_range(0..pairs.len())])
        .collect();
    let feats = model.kind.featurize_batch(trajs, &anchors);
    let latents = model.encode_raw(store, &feats, anchors.len());
    let cb = store.get_mut(model.codebook);
    for (slot, &row) in dead.iter().enumerate() {
        cb.data[row * CODEWORD_DIM..(row + 1) * CODEWORD_DIM]
            .copy_from_slice(&latents[slot * CODEWORD_DIM..(slot + 1) * CODEWORD_DIM]);
    }
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &CodebookModel,
    store: &mut ParamStore,
    trajs: &[Trajectory],
    batch: &[(usize, usize)],
    adam_encoder: Option<&mut AdamState>,
    adam_decoder: &mut AdamState,
    adam_codebook: &mut AdamState,
    epoch_hits: &mut [u64],
) -> Result<(f64, f64)> {
    let b = batch.len();
    let feats = model.kind.featurize_batch(trajs, batch);
    let mut tape = Tape::new();
    let x = tape.constant_matrix(feats, b, model.kind.feature_dim());
    let s = model.encode(&mut tape, store, x)?;
    let codebook_var = tape.param(store, model.codebook);
    let indices = quantize_rows(
        tape.value(s),
        CODEWORD_DIM,
        tape.value(codebook_var),
        model.k,
    );
    for &i in &indices {
        epoch_hits[i] += 1;
    }
    let c = tape.gather_rows(codebook_var, &indices)?;
    let quantized = tape.straight_through(c, s)?;
    let h = model.decode_trunk(&mut tape, store, quantized)?;

    let (decoded, target_indices): (DecodedBatch, Vec<usize>) = match &model.kind {
        SystemKind::Continuous { .. } => {
            let (mu, std) = model.decode_gaussian(&mut tape, store, h)?;
            (DecodedBatch::Gaussian { mu, std }, Vec::new())
        }
        SystemKind::Discrete { .. } => {
            let logits = model.decode_logits(&mut tape, store, h)?;
            let targets = batch.iter().map(|&(ti, t)| trajs[ti].index(t)).collect();
            (DecodedBatch::Categorical { logits }, targets)
        }
    };
    let rec = reconstruction_loss(&mut tape, decoded, x, &target_indices)?;
    let vq = vq_loss(&mut tape, s, c)?;
    let total = tape.add(rec, vq)?;

    tape.backward(total)?;
    tape.accumulate_param_grads(store);
    if let Some(adam_encoder) = adam_encoder {
        adam_encoder.step(store)?;
        store.zero_grads(adam_encoder.targets());
    } else {
        store.zero_grads(&model.encoder.params());
    }
    adam_decoder.step(store)?;
    adam_codebook.step(store)?;
    store.zero_grads(adam_decoder.targets());
    store.zero_grads(adam_codebook.targets());
    Ok((tape.value(rec)[0], tape.value(vq)[0]))
}

/// Assign every training state to its nearest codeword and count.
pub fn count_occupancy(
    model: &CodebookModel,
    store: &ParamStore,
    trajs: &[Trajectory],
    pairs: &[(usize, usize)],
) -> Vec<u64> {
    let mut occupancy = vec![0u64; model.k];
    let codewords = model.codeword_data(store).to_vec();
    for chunk in pairs.chunks(4096) {
        let feats = model.kind.featurize_batch(trajs, chunk);
        let latents = model.encode_raw(store, &feats, chunk.len());
        for idx in quantize_rows(&latents, CODEWORD_DIM, &codewords, model.k) {
            occupancy[idx] += 1;
        }
    }
    occupancy
}

/// Assign a batch of states to codeword indices (tape-free).
pub fn assign_indices(
    model: &CodebookModel,
    store: &ParamStore,
    trajs: &[Trajectory],
    pairs: &[(usize, usize)],
) -> Vec<usize> {
    let codewords = model.codeword_data(store).to_vec();
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(4096) {
        let feats = model.kind.featurize_batch(trajs, chunk);
        let latents = model.encode_raw(store, &feats, chunk.len());
        out.extend(quantize_rows(&latents, CODEWORD_DIM, &codewords, model.k));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_stream;
    use rand::Rng;

    fn blob_trajectories(seed: u64) -> Vec<Trajectory> {
        let mut rng = rng_stream(seed, "blob", 0);
        let mut values = Vec::new();
        for _ in 0..2000 {
            values.push(1.5 + 0.1 * rng.random_range(-1.0..1.0));
            values.push(-0.5 + 0.1 * rng.random_range(-1.0..1.0));
        }
        vec![Trajectory::continuous(2, values, 1, "blob").unwrap()]
    }

    #[test]
    fn gaussian_blob_is_reconstructed_near_its_mean() {
        let trajs = blob_trajectories(5);
        let mut store = ParamStore::new();
        let model =
            CodebookModel::init(&mut store, SystemKind::Continuous { dim: 2 }, 10, 5).unwrap();
        let cfg = Stage1Config {
            epochs: 40,
            batch_size: 64,
            max_steps_per_epoch: Some(10),
            ..Default::default()
        };
        let (codebook, history) = stage1_train(&model, &mut store, &trajs, &cfg).unwrap();
        assert!(codebook.active_count() >= 1);
        assert_eq!(codebook.total_samples(), 2000);
        assert!(history.len() == cfg.epochs);

        // Reconstruct the blob mean through the most occupied codeword.
        let top = codebook
            .occupancy
            .iter()
            .enumerate()
            .max_by_key(|(_, &c)| c)
            .unwrap()
            .0;
        let mut tape = Tape::new();
        let cw = model.codeword_data(&store)[top * CODEWORD_DIM..(top + 1) * CODEWORD_DIM].to_vec();
        let z = tape.constant_row(cw);
        let h = model.decode_trunk(&mut tape, &store, z).unwrap();
        let (mu, _) = model.decode_gaussian(&mut tape, &store, h).unwrap();
        let m = tape.value(mu);
        assert!(
            (m[0] - 1.5).abs() < 0.1 && (m[1] + 0.5).abs() < 0.1,
            "reconstructed mean ({}, {}) far from blob mean",
            m[0],
            m[1]
        );
    }

    #[test]
    fn training_loss_decreases() {
        let trajs = blob_trajectories(6);
        let mut store = ParamStore::new();
        let model =
            CodebookModel::init(&mut store, SystemKind::Continuous { dim: 2 }, 8, 6).unwrap();
        let cfg = Stage1Config {
            epochs: 15,
            batch_size: 64,
            max_steps_per_epoch: Some(8),
            ..Default::default()
        };
        let (_, history) = stage1_train(&model, &mut store, &trajs, &cfg).unwrap();
        let first = history[0].reconstruct + history[0].vq;
        let last = history.last().unwrap().reconstruct + history.last().unwrap().vq;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn occupancy_sums_to_sample_count() {
        let trajs = blob_trajectories(7);
        let mut store = ParamStore::new();
        let model =
            CodebookModel::init(&mut store, SystemKind::Continuous { dim: 2 }, 16, 7).unwrap();
        let cfg = Stage1Config {
            epochs: 2,
            max_steps_per_epoch: Some(5),
            ..Default::default()
        };
        let (codebook, _) = stage1_train(&model, &mut store, &trajs, &cfg).unwrap();
        assert_eq!(codebook.total_samples() as usize, 2000);
    }

    #[test]
    fn same_seed_trains_bit_identical_parameters() {
        let trajs = blob_trajectories(8);
        let cfg = Stage1Config {
            epochs: 3,
            max_steps_per_epoch: Some(5),
            ..Default::default()
        };
        let run = || {
            let mut store = ParamStore::new();
            let model =
                CodebookModel::init(&mut store, SystemKind::Continuous { dim: 2 }, 8, 9).unwrap();
            stage1_train(&model, &mut store, &trajs, &cfg).unwrap();
            store
                .iter()
                .flat_map(|(_, _, t)| t.data.clone())
                .collect::<Vec<f64>>()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }
}
