//! Checkpointing: a `manifest.json` describing the run (version, config
//! snapshot, parameter index, landscape graph) plus a `payload.bin` of
//! raw little-endian f64 parameter buffers concatenated in index order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, CodebookModel, SystemKind};
use crate::error::{Error, Result};
use crate::landscape::{FpeModel, FpeSettings, LandscapeGraph};
use crate::numerics::ParamStore;
use crate::training::{TrainConfig, TrainedModel};

pub const CHECKPOINT_VERSION: &str = "basin-checkpoint-1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PAYLOAD_FILE: &str = "payload.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub system: SystemKind,
    pub params: Vec<ParamEntry>,
    pub graph: LandscapeGraph,
    pub codebook: Codebook,
}

/// Write a checkpoint directory (`manifest.json` + `payload.bin`).
pub fn save_checkpoint(dir: impl AsRef<Path>, model: &TrainedModel) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut params = Vec::with_capacity(model.store.len());
    let mut payload: Vec<u8> = Vec::new();
    for (_, name, tensor) in model.store.iter() {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: tensor.shape.clone(),
            offset: payload.len() as u64,
        });
        for v in &tensor.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION.to_string(),
        seed: model.config.seed,
        config: model.config.clone(),
        system: model.system.clone(),
        params,
        graph: model.graph.clone(),
        codebook: model.codebook.clone(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join(PAYLOAD_FILE), payload)?;
    Ok(())
}

/// Load a checkpoint directory back into a full model.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<TrainedModel> {
    let dir = dir.as_ref();
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: found `{}`, expected `{}`",
            manifest.version, CHECKPOINT_VERSION
        )));
    }
    let payload = fs::read(dir.join(PAYLOAD_FILE))?;

    // Rebuild the parameter layout by replaying model construction, then
    // overwrite tensor data from the payload.
    let mut store = ParamStore::new();
    let codebook_model = CodebookModel::init(
        &mut store,
        manifest.system.clone(),
        manifest.config.k,
        manifest.seed,
    )?;
    let mut graph = manifest.graph.clone();
    graph.topology.rebuild_derived();
    let settings = FpeSettings {
        sigmoid_scale: manifest.config.sigmoid_scale,
        n_int: manifest.config.n_int,
        bypass_phi_psi: manifest.config.bypass_phi_psi,
    };
    let fpe = FpeModel::init(&mut store, graph.n_nodes(), settings, manifest.seed);

    if store.len() != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: manifest has {}, model has {}",
            manifest.params.len(),
            store.len()
        )));
    }
    let mut expected_offset = 0u64;
    for (id, name, _) in store
        .iter()
        .map(|(id, n, t)| (id, n.to_string(), t.shape.clone()))
        .collect::<Vec<_>>()
    {
        let slot = id.0;
        let entry = &manifest.params[slot];
        let tensor = store.get(id);
        if entry.name != name || entry.shape != tensor.shape {
            return Err(Error::Checkpoint(format!(
                "parameter {slot} mismatch: manifest `{}` {:?}, model `{}` {:?}",
                entry.name, entry.shape, name, tensor.shape
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::Checkpoint(format!(
                "payload offsets do not tile: `{}` at {} but expected {}",
                entry.name, entry.offset, expected_offset
            )));
        }
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 8;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "payload truncated: `{}` needs bytes {start}..{end} of {}",
                entry.name,
                payload.len()
            )));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        store.get_mut(id).data = data;
        expected_offset = end as u64;
    }
    if expected_offset != payload.len() as u64 {
        return Err(Error::Checkpoint(format!(
            "payload has {} trailing bytes",
            payload.len() as u64 - expected_offset
        )));
    }

    Ok(TrainedModel {
        store,
        system: manifest.system,
        config: manifest.config,
        codebook_model,
        codebook: manifest.codebook,
        graph,
        fpe,
        losses: Vec::new(),
    })
}
