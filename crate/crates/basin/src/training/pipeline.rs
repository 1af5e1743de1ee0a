use std::path::Path;

use crate::codebook::{
    count_occupancy, stage1_train, Codebook, CodebookModel, Stage1Config, SystemKind,
};
use crate::error::{Error, Result};
use crate::landscape::{build_topology, FpeModel, FpeSettings, LandscapeGraph};
use crate::numerics::{ParamStore, Tensor};
use crate::systems::Trajectory;
use crate::training::stage2::{stage2_train, Stage2Data};
use crate::training::{LossBreakdown, TrainConfig};

/// A fully trained landscape model: all parameters, the codebook
/// statistics, and the landscape graph with refreshed energies.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub store: ParamStore,
    pub system: SystemKind,
    pub config: TrainConfig,
    pub codebook_model: CodebookModel,
    pub codebook: Codebook,
    pub graph: LandscapeGraph,
    pub fpe: FpeModel,
    /// Per-epoch losses of both stages, in order.
    pub losses: Vec<LossBreakdown>,
}

impl TrainedModel {
    pub fn codewords_active(&self) -> Vec<f64> {
        let all = self.codebook_model.codeword_data(&self.store);
        let d = crate::codebook::CODEWORD_DIM;
        let mut out = Vec::with_capacity(self.graph.n_nodes() * d);
        for &cw in &self.graph.active {
            out.extend_from_slice(&all[cw * d..(cw + 1) * d]);
        }
        out
    }
}

/// Load frozen stage-1 tensors (encoder, decoder, codebook) from a
/// checkpoint, validating dimensional compatibility with the target
/// system and codebook size.
pub fn import_frozen(
    path: impl AsRef<Path>,
    system: &SystemKind,
    k: usize,
) -> Result<Vec<(String, Tensor)>> {
    let imported = crate::persist::load_checkpoint(path.as_ref())?;
    let found_dim = imported.system.feature_dim();
    let want_dim = system.feature_dim();
    if found_dim != want_dim {
        return Err(Error::Checkpoint(format!(
            "frozen import dimension mismatch: expected input dimension {want_dim}, \
             found {found_dim}"
        )));
    }
    if imported.config.k != k {
        return Err(Error::Checkpoint(format!(
            "frozen import codebook mismatch: expected K={k}, found K={}",
            imported.config.k
        )));
    }
    if imported.system.output_dim() != system.output_dim() {
        return Err(Error::Checkpoint(format!(
            "frozen import output mismatch: expected {}, found {}",
            system.output_dim(),
            imported.system.output_dim()
        )));
    }
    Ok(imported
        .store
        .iter()
        .filter(|(_, name, _)| is_stage1_param(name))
        .map(|(_, name, t)| (name.to_string(), t.clone()))
        .collect())
}

pub(crate) fn is_stage1_param(name: &str) -> bool {
    name.starts_with("encoder.") || name.starts_with("decoder.") || name == "codebook"
}

/// Run both training stages on the given trajectories.
pub fn train_pipeline(
    train: &[Trajectory],
    system: SystemKind,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut store = ParamStore::new();
    let codebook_model = CodebookModel::init(&mut store, system.clone(), cfg.k, cfg.seed)?;

    let mut losses = Vec::new();
    let codebook: Codebook = if let Some(path) = &cfg.freeze_imports {
        let tensors = import_frozen(path, &system, cfg.k)?;
        for (name, tensor) in tensors {
            let id = store
                .iter()
                .find(|(_, n, _)| *n == name)
                .map(|(id, _, _)| id)
                .ok_or_else(|| {
                    Error::Checkpoint(format!("imported parameter `{name}` has no slot"))
                })?;
            if store.get(id).shape != tensor.shape {
                return Err(Error::Checkpoint(format!(
                    "imported `{name}` shape {:?} does not match expected {:?}",
                    tensor.shape,
                    store.get(id).shape
                )));
            }
            store.get_mut(id).data = tensor.data;
        }
        let pairs = crate::codebook::all_state_pairs(train);
        let occupancy = count_occupancy(&codebook_model, &store, train, &pairs);
        Codebook {
            preset_k: cfg.k,
            dim: crate::codebook::CODEWORD_DIM,
            occupancy,
        }
    } else {
        let stage1_cfg = Stage1Config {
            epochs: cfg.epochs_stage1,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            lr_decay: cfg.lr_decay,
            max_steps_per_epoch: cfg.stage1_max_steps_per_epoch,
            init_spread: cfg.init_spread,
            reseed_dead_codewords: cfg.reseed_dead_codewords,
            codebook_lr_multiplier: cfg.codebook_lr_multiplier,
            encoder_freeze_after: cfg.encoder_freeze_after,
            seed: cfg.seed,
        };
        let (codebook, history) = stage1_train(&codebook_model, &mut store, train, &stage1_cfg)?;
        for h in history {
            losses.push(LossBreakdown::stage1(h.epoch, h.reconstruct, h.vq));
        }
        codebook
    };

    let (mut graph, coded) =
        build_topology(&codebook_model, &store, &codebook, train, cfg.lag_time)?;
    let settings = FpeSettings {
        sigmoid_scale: cfg.sigmoid_scale,
        n_int: cfg.n_int,
        bypass_phi_psi: cfg.bypass_phi_psi,
    };
    let fpe = FpeModel::init(&mut store, graph.n_nodes(), settings, cfg.seed);

    let codewords = active_codewords(&codebook_model, &store, &graph);
    fpe.refresh_energies(&store, &mut graph, &codewords)?;

    let data = Stage2Data::from_coded(&coded)?;
    let history = stage2_train(&fpe, &mut store, &mut graph, &codewords, &data, cfg)?;
    losses.extend(history);

    Ok(TrainedModel {
        store,
        system,
        config: cfg.clone(),
        codebook_model,
        codebook,
        graph,
        fpe,
        losses,
    })
}

fn active_codewords(model: &CodebookModel, store: &ParamStore, graph: &LandscapeGraph) -> Vec<f64> {
    let all = model.codeword_data(store);
    let d = crate::codebook::CODEWORD_DIM;
    let mut out = Vec::with_capacity(graph.n_nodes() * d);
    for &cw in &graph.active {
        out.extend_from_slice(&all[cw * d..(cw + 1) * d]);
    }
    out
}
