//! Stage 2: with encoder, decoder and codebook frozen, fit the energy
//! head, the probability encoder/decoder, the neighborhood attention and
//! the diffusion coefficients on lag-τ transition statistics.
//!
//! Lag pairs are grouped by their source codeword: one forward pass per
//! source serves every pair starting there, with the cross-entropy taken
//! against the empirical successor distribution (equal, by linearity, to
//! the average per-pair loss) and the latent loss taken against the
//! encoding of that distribution.

use rand::seq::SliceRandom;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::landscape::{CodedTrajectories, FpeModel, LandscapeGraph};
use crate::numerics::{rng_stream, AdamState, ParamStore, Tape};
use crate::training::losses::{latent_l2, loss_code_on_tape, loss_phy_on_tape};
use crate::training::{LossBreakdown, TrainConfig};

/// Transition statistics stage 2 trains on.
#[derive(Debug, Clone)]
pub struct Stage2Data {
    /// Per source node: (successor nodes, empirical weights, pair count).
    pub sources: Vec<SourceTargets>,
    pub total_pairs: u64,
}

#[derive(Debug, Clone)]
pub struct SourceTargets {
    pub source: usize,
    pub targets: Vec<usize>,
    pub weights: Vec<f64>,
    pub count: u64,
}

impl Stage2Data {
    /// Group all in-trajectory lag pairs by source node.
    pub fn from_coded(coded: &CodedTrajectories) -> Result<Self> {
        let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for (s, t) in coded.lag_pairs() {
            *counts.entry((s, t)).or_insert(0) += 1;
        }
        if counts.is_empty() {
            return Err(Error::Data(format!(
                "no lag-{} pairs in the training trajectories",
                coded.lag_time
            )));
        }
        let mut sources: Vec<SourceTargets> = Vec::new();
        for ((s, t), c) in counts {
            match sources.last_mut() {
                Some(entry) if entry.source == s => {
                    entry.targets.push(t);
                    entry.weights.push(c as f64);
                    entry.count += c;
                }
                _ => sources.push(SourceTargets {
                    source: s,
                    targets: vec![t],
                    weights: vec![c as f64],
                    count: c,
                }),
            }
        }
        let mut total_pairs = 0;
        for entry in sources.iter_mut() {
            let sum: f64 = entry.weights.iter().sum();
            entry.weights.iter_mut().for_each(|w| *w /= sum);
            total_pairs += entry.count;
        }
        Ok(Self {
            sources,
            total_pairs,
        })
    }

    /// Dense empirical successor distribution of one source.
    pub fn target_distribution(&self, slot: usize, n: usize) -> Vec<f64> {
        let entry = &self.sources[slot];
        let mut p = vec![0.0; n];
        for (&t, &w) in entry.targets.iter().zip(&entry.weights) {
            p[t] = w;
        }
        p
    }
}

/// Train the landscape dynamics; returns per-epoch losses. Energies in
/// `graph` are refreshed after every epoch.
pub fn stage2_train(
    model: &FpeModel,
    store: &mut ParamStore,
    graph: &mut LandscapeGraph,
    codewords: &[f64],
    data: &Stage2Data,
    cfg: &TrainConfig,
) -> Result<Vec<LossBreakdown>> {
    let empirical = graph.empirical_distribution(cfg.laplace_alpha);
    let params = model.params();
    let lr = cfg.stage2_learning_rate.unwrap_or(cfg.learning_rate);
    let mut adam = AdamState::new(lr, cfg.lr_decay, store, params);
    let mut shuffle_rng = rng_stream(cfg.seed, "stage2-shuffle", 0);
    let mut history = Vec::with_capacity(cfg.epochs_stage2);

    for epoch in 0..cfg.epochs_stage2 {
        adam.set_epoch(epoch as u32);
        let mut order: Vec<usize> = (0..data.sources.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut sums = (0.0, 0.0, 0.0); // latent, code, phy
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.stage2_sources_per_step) {
            let (latent, code, phy) = stage2_step(
                model, store, graph, codewords, data, &empirical, cfg, chunk, &mut adam,
            )
            .map_err(|e| diverged(e, epoch))?;
            if !(latent.is_finite() && code.is_finite() && phy.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    term: term_name(latent, code, phy),
                    msg: format!("latent={latent} code={code} phy={phy}"),
                });
            }
            sums.0 += latent;
            sums.1 += code;
            sums.2 += phy;
            steps += 1;
        }
        let k = steps as f64;
        history.push(LossBreakdown::stage2(
            epoch,
            sums.0 / k,
            sums.1 / k,
            sums.2 / k,
        ));
        model.refresh_energies(store, graph, codewords)?;
    }
    Ok(history)
}

fn term_name(latent: f64, code: f64, phy: f64) -> &'static str {
    if !latent.is_finite() {
        "latent"
    } else if !code.is_finite() {
        "code"
    } else if !phy.is_finite() {
        "phy"
    } else {
        "total"
    }
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { op, node } => Error::Diverged {
            epoch,
            term: "total",
            msg: format!("non-finite value in `{op}` at node {node}"),
        },
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn stage2_step(
    model: &FpeModel,
    store: &mut ParamStore,
    graph: &LandscapeGraph,
    codewords: &[f64],
    data: &Stage2Data,
    empirical: &[f64],
    cfg: &TrainConfig,
    batch: &[usize],
    adam: &mut AdamState,
) -> Result<(f64, f64, f64)> {
    let n = graph.n_nodes();
    let batch_count: f64 = batch.iter().map(|&s| data.sources[s].count as f64).sum();
    let mut latent_val = 0.0;
    let mut code_val = 0.0;
    for &slot in batch {
        let entry = &data.sources[slot];
        let share = entry.count as f64 / batch_count;
        let mut tape = Tape::new();
        let fw = model.begin(&mut tape, store, graph, codewords)?;
        let p0 = model.smoothed_one_hot(&mut tape, entry.source);

        let (latent_term, q) = if cfg.bypass_phi_psi {
            let q = model.predict_on_tape(&mut tape, store, graph, &fw, p0, 1)?;
            let latent = if cfg.disable_latent {
                None
            } else {
                // Without the encoder, compare distributions directly.
                let target = data.target_distribution(slot, n);
                let t_row = tape.constant_row(target);
                Some(latent_l2(&mut tape, t_row, q)?)
            };
            (latent, q)
        } else {
            let h_t = model.evolve_hidden(&mut tape, store, graph, &fw, p0, 1)?;
            let q = model.probability_decode(&mut tape, store, &fw, h_t)?;
            let latent = if cfg.disable_latent {
                None
            } else {
                let target = data.target_distribution(slot, n);
                let t_col = tape.constant_col(target);
                let h_target = model.probability_encode(&mut tape, store, &fw, t_col)?;
                Some(latent_l2(&mut tape, h_target, h_t)?)
            };
            (latent, q)
        };

        let code = loss_code_on_tape(&mut tape, q, &entry.targets, &entry.weights)?;
        let mut total = tape.mul_scalar(code, cfg.loss_weights.code)?;
        code_val += share * tape.value(code)[0];
        if let Some(l) = latent_term {
            let weighted = tape.mul_scalar(l, cfg.loss_weights.latent)?;
            total = tape.add(total, weighted)?;
            latent_val += share * tape.value(l)[0];
        }
        let scaled = tape.mul_scalar(total, share)?;
        tape.backward(scaled)?;
        tape.accumulate_param_grads(store);
    }

    let mut phy_val = 0.0;
    if !cfg.disable_phy {
        let mut tape = Tape::new();
        let fw = model.begin(&mut tape, store, graph, codewords)?;
        let phy = loss_phy_on_tape(&mut tape, &fw, empirical, cfg.kt)?;
        let weighted = tape.mul_scalar(phy, cfg.loss_weights.phy)?;
        phy_val = tape.value(phy)[0];
        tape.backward(weighted)?;
        tape.accumulate_param_grads(store);
    }

    adam.step(store)?;
    store.zero_grads(adam.targets());
    Ok((latent_val, code_val, phy_val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::GraphTopology;

    #[test]
    fn lag_pair_grouping_matches_hand_count() {
        let coded = CodedTrajectories {
            sequences: vec![vec![0, 1, 0, 1, 2], vec![2, 2, 0]],
            lag_time: 1,
        };
        let data = Stage2Data::from_coded(&coded).unwrap();
        assert_eq!(data.total_pairs, 6);
        // Source 0 transitions: 0->1 twice.
        let s0 = data.sources.iter().find(|s| s.source == 0).unwrap();
        assert_eq!(s0.targets, vec![1]);
        assert_eq!(s0.weights, vec![1.0]);
        assert_eq!(s0.count, 2);
        // Source 2: 2->2 once, 2->0 once.
        let s2 = data.sources.iter().find(|s| s.source == 2).unwrap();
        assert_eq!(s2.targets, vec![0, 2]);
        assert_eq!(s2.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn pairs_never_cross_trajectory_boundaries() {
        let coded = CodedTrajectories {
            sequences: vec![vec![0, 1], vec![2, 3]],
            lag_time: 1,
        };
        let data = Stage2Data::from_coded(&coded).unwrap();
        // 1->2 must not appear.
        assert!(data
            .sources
            .iter()
            .find(|s| s.source == 1)
            .is_none());
        assert_eq!(data.total_pairs, 2);
    }

    #[test]
    fn lag_exceeding_length_yields_no_pairs() {
        let coded = CodedTrajectories {
            sequences: vec![vec![0, 1, 2]],
            lag_time: 5,
        };
        assert!(Stage2Data::from_coded(&coded).is_err());
    }

    #[test]
    fn objective_decomposition_total_is_sum_of_enabled() {
        let l = LossBreakdown::stage2(3, 0.5, 1.25, 0.25);
        assert_eq!(l.total, 2.0);
        let l1 = LossBreakdown::stage1(0, 1.5, 0.5);
        assert_eq!(l1.total, 2.0);
    }

    /// A two-well chain: stage 2 should learn energies that decrease the
    /// combined loss and roughly track occupancy statistics.
    #[test]
    fn stage2_loss_decreases_on_synthetic_chain() {
        let n = 6;
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let topology = GraphTopology::new(n, edges).unwrap();
        // Occupancy concentrated at the ends (two wells).
        let occupancy = vec![400, 100, 20, 20, 100, 400];
        let mut graph = LandscapeGraph {
            active: (0..n).collect(),
            topology,
            energy: vec![0.0; n],
            occupancy,
            n_components: 1,
        };
        // Synthetic coded trajectories hopping mostly within wells.
        let mut sequences = Vec::new();
        for rep in 0..20 {
            let base = if rep % 2 == 0 {
                vec![0, 1, 0, 0, 1, 2, 1, 0, 0, 1]
            } else {
                vec![5, 4, 5, 5, 4, 3, 4, 5, 5, 4]
            };
            sequences.push(base);
        }
        sequences.push(vec![0, 1, 2, 3, 4, 5, 5, 4, 3, 2, 1, 0]);
        let coded = CodedTrajectories {
            sequences,
            lag_time: 1,
        };
        let data = Stage2Data::from_coded(&coded).unwrap();

        let mut store = ParamStore::new();
        let model = FpeModel::init(
            &mut store,
            n,
            crate::landscape::FpeSettings {
                n_int: 5,
                ..Default::default()
            },
            0,
        );
        let codewords: Vec<f64> = (0..n * crate::codebook::CODEWORD_DIM)
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let cfg = TrainConfig {
            epochs_stage2: 12,
            learning_rate: 3e-3,
            stage2_sources_per_step: 3,
            n_int: 5,
            ..Default::default()
        };
        let history =
            stage2_train(&model, &mut store, &mut graph, &codewords, &data, &cfg).unwrap();
        let first = history.first().unwrap().total;
        let last = history.last().unwrap().total;
        assert!(last < first, "stage-2 loss did not decrease: {first} -> {last}");
        // The Boltzmann regularizer should pull well energies below
        // barrier energies.
        let well = (graph.energy[0] + graph.energy[5]) / 2.0;
        let barrier = (graph.energy[2] + graph.energy[3]) / 2.0;
        assert!(
            well < barrier,
            "well energy {well} not below barrier {barrier}"
        );
    }
}
