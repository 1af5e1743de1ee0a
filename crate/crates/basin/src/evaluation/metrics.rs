//! Energy-correlation and rollout-divergence metrics for trained models.

use rand::Rng;

use crate::codebook::{nearest_in_subset, SystemKind, CODEWORD_DIM};
use crate::error::{Error, Result};
use crate::evaluation::{js_divergence, pearson, EvalGrid};
use crate::landscape::predict_distribution;
use crate::numerics::{rng_stream, Tape};
use crate::systems::{States, Trajectory};
use crate::training::TrainedModel;

/// Predicted energies for a batch of raw states: encode, snap to the
/// nearest active codeword, read its energy.
pub fn predict_state_energies(
    model: &TrainedModel,
    trajs: &[Trajectory],
    pairs: &[(usize, usize)],
) -> Vec<f64> {
    let codewords = model.codebook_model.codeword_data(&model.store).to_vec();
    let active = &model.graph.active;
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(4096) {
        let feats = model.codebook_model.kind.featurize_batch(trajs, chunk);
        let latents = model
            .codebook_model
            .encode_raw(&model.store, &feats, chunk.len());
        for latent in latents.chunks_exact(CODEWORD_DIM) {
            let node = nearest_in_subset(latent, &codewords, active);
            out.push(model.graph.energy[node]);
        }
    }
    out
}

/// Nearest active node for a single raw state.
pub fn assign_node(model: &TrainedModel, traj: &Trajectory, t: usize) -> usize {
    let feats = model
        .codebook_model
        .kind
        .featurize_batch(std::slice::from_ref(traj), &[(0, t)]);
    let latent = model.codebook_model.encode_raw(&model.store, &feats, 1);
    let codewords = model.codebook_model.codeword_data(&model.store);
    nearest_in_subset(&latent, codewords, &model.graph.active)
}

/// Trajectory energy correlation: Pearson between predicted and true
/// energies over every state of the held-out trajectories.
pub fn rho_t<F>(model: &TrainedModel, test: &[Trajectory], truth: F) -> Result<f64>
where
    F: Fn(&Trajectory, usize) -> f64,
{
    if test.is_empty() {
        return Err(Error::Evaluation("no test trajectories".into()));
    }
    let mut pairs = Vec::new();
    for (ti, t) in test.iter().enumerate() {
        for i in 0..t.len() {
            pairs.push((ti, i));
        }
    }
    let predicted = predict_state_energies(model, test, &pairs);
    let actual: Vec<f64> = pairs.iter().map(|&(ti, i)| truth(&test[ti], i)).collect();
    pearson(&predicted, &actual)
}

/// Full-space energy correlation over grid-cell centers.
pub fn rho_f_continuous<F>(
    model: &TrainedModel,
    grid: &crate::evaluation::GridSpec,
    truth: F,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = grid.dim();
    let centers: Vec<Vec<f64>> = (0..grid.n_cells()).map(|c| grid.center_of(c)).collect();
    let flat: Vec<f64> = centers.iter().flatten().copied().collect();
    let traj = Trajectory::continuous(dim, flat, 1, "grid-centers")?;
    let pairs: Vec<(usize, usize)> = (0..centers.len()).map(|i| (0, i)).collect();
    let predicted = predict_state_energies(model, std::slice::from_ref(&traj), &pairs);
    let actual: Vec<f64> = centers.iter().map(|c| truth(c)).collect();
    pearson(&predicted, &actual)
}

/// Full-space energy correlation over every discrete state.
pub fn rho_f_discrete<F>(model: &TrainedModel, truth: F) -> Result<f64>
where
    F: Fn(usize) -> f64,
{
    let SystemKind::Discrete { space, .. } = &model.system else {
        return Err(Error::Evaluation("rho_f_discrete on a continuous system".into()));
    };
    let space = *space;
    let all: Vec<usize> = (0..space).collect();
    let traj = Trajectory::discrete(space, all, 1, "all-states")?;
    let pairs: Vec<(usize, usize)> = (0..space).map(|i| (0, i)).collect();
    let predicted = predict_state_energies(model, std::slice::from_ref(&traj), &pairs);
    let actual: Vec<f64> = (0..space).map(truth).collect();
    pearson(&predicted, &actual)
}

/// Cached lag-τ transition kernel and per-codeword decoder outputs, so
/// rollouts are cheap Markov-chain sampling.
pub struct TransitionModel {
    pub n: usize,
    /// Row-major `[n, n]` cumulative transition distributions.
    cdf: Vec<f64>,
    decoder: DecodedCodewords,
}

enum DecodedCodewords {
    /// Per node: mean and std rows of width D.
    Gaussian { dim: usize, mu: Vec<f64>, std: Vec<f64> },
    /// Per node: cumulative categorical distribution over the space.
    Categorical { space: usize, cdf: Vec<f64> },
}

/// Build the cached evaluator: one learned-flow integration per active
/// codeword plus one decoder pass per active codeword.
pub fn transition_model(model: &TrainedModel) -> Result<TransitionModel> {
    let n = model.graph.n_nodes();
    let codewords = model.codewords_active();
    let mut cdf = vec![0.0; n * n];
    for node in 0..n {
        let q = predict_distribution(
            &model.fpe,
            &model.store,
            &model.graph,
            &codewords,
            model.graph.active[node],
            1,
        )?;
        let mut acc = 0.0;
        for (j, &qj) in q.iter().enumerate() {
            acc += qj;
            cdf[node * n + j] = acc;
        }
        cdf[node * n + n - 1] = 1.0;
    }

    // Decode every active codeword once.
    let mut tape = Tape::new();
    let z = tape.constant_matrix(codewords.clone(), n, CODEWORD_DIM);
    let h = model
        .codebook_model
        .decode_trunk(&mut tape, &model.store, z)?;
    let decoder = match &model.system {
        SystemKind::Continuous { dim } => {
            let (mu, std) = model
                .codebook_model
                .decode_gaussian(&mut tape, &model.store, h)?;
            DecodedCodewords::Gaussian {
                dim: *dim,
                mu: tape.value(mu).to_vec(),
                std: tape.value(std).to_vec(),
            }
        }
        SystemKind::Discrete { space, .. } => {
            let logits = model
                .codebook_model
                .decode_logits(&mut tape, &model.store, h)?;
            let probs = tape.softmax(logits)?;
            let pv = tape.value(probs);
            let mut cdf_rows = vec![0.0; n * space];
            for node in 0..n {
                let mut acc = 0.0;
                for s in 0..*space {
                    acc += pv[node * space + s];
                    cdf_rows[node * space + s] = acc;
                }
                cdf_rows[node * space + space - 1] = 1.0;
            }
            DecodedCodewords::Categorical {
                space: *space,
                cdf: cdf_rows,
            }
        }
    };
    Ok(TransitionModel { n, cdf, decoder })
}

/// A model rollout: the visited nodes and the decoded state samples.
pub struct Rollout {
    pub nodes: Vec<usize>,
    pub states: States,
}

fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
}

/// Sample `n_steps` lag-time transitions starting from the codeword
/// nearest to `start`, decoding one observation per visited codeword.
/// `stream` distinguishes parallel rollouts under one seed.
pub fn unroll(
    model: &TrainedModel,
    tm: &TransitionModel,
    start: &Trajectory,
    start_index: usize,
    n_steps: usize,
    seed: u64,
    stream: u64,
) -> Rollout {
    let mut rng = rng_stream(seed, "rollout", stream);
    let mut node = assign_node(model, start, start_index);
    let mut nodes = vec![node];
    for _ in 0..n_steps {
        let u: f64 = rng.random();
        node = sample_cdf(&tm.cdf[node * tm.n..(node + 1) * tm.n], u);
        nodes.push(node);
    }
    let states = match &tm.decoder {
        DecodedCodewords::Gaussian { dim, mu, std } => {
            let mut values = Vec::with_capacity(nodes.len() * dim);
            for &nd in &nodes {
                for d in 0..*dim {
                    let xi: f64 = rng.sample(rand_distr::StandardNormal);
                    values.push(mu[nd * dim + d] + std[nd * dim + d] * xi);
                }
            }
            States::Continuous {
                dim: *dim,
                values,
            }
        }
        DecodedCodewords::Categorical { space, cdf } => {
            let values: Vec<usize> = nodes
                .iter()
                .map(|&nd| {
                    let u: f64 = rng.random();
                    sample_cdf(&cdf[nd * space..(nd + 1) * space], u)
                })
                .collect();
            States::Discrete {
                space: *space,
                values,
            }
        }
    };
    Rollout { nodes, states }
}

fn grid_sequence(traj: &Trajectory, grid: &EvalGrid, tau: usize) -> Result<Vec<usize>> {
    if tau % traj.lag_time != 0 {
        return Err(Error::Evaluation(format!(
            "lag {} not a multiple of trajectory lag_time {}",
            tau, traj.lag_time
        )));
    }
    let stride = (tau / traj.lag_time).max(1);
    let mut out = Vec::new();
    let mut t = 0;
    while t < traj.len() {
        let cell = match &traj.states {
            States::Continuous { .. } => grid.cell_of_state(traj.state(t)),
            States::Discrete { .. } => grid.cell_of_index(traj.index(t)),
        };
        out.push(cell);
        t += stride;
    }
    Ok(out)
}

/// Marginal and transition Jensen-Shannon divergences between two
/// trajectory sets on a shared grid at lag `tau`. Each trajectory is
/// subsampled according to its own `lag_time`, so raw simulations and
/// lag-resolution rollouts mix freely. The transition divergence is
/// taken between the joint `(cell_t, cell_{t+tau})` distributions, which
/// weights each row by its marginal occupancy.
pub fn mjs_tjs(
    reference: &[Trajectory],
    predicted: &[Trajectory],
    grid: &EvalGrid,
    tau: usize,
) -> Result<(f64, f64)> {
    if reference.is_empty() || predicted.is_empty() {
        return Err(Error::Evaluation("both trajectory sets must be non-empty".into()));
    }
    let n = grid.n_cells();
    let collect = |trajs: &[Trajectory]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut marginal = vec![0.0; n];
        let mut joint = vec![0.0; n * n];
        for t in trajs {
            let seq = grid_sequence(t, grid, tau)?;
            for &c in &seq {
                marginal[c] += 1.0;
            }
            for w in seq.windows(2) {
                joint[w[0] * n + w[1]] += 1.0;
            }
        }
        Ok((marginal, joint))
    };
    let (m_ref, j_ref) = collect(reference)?;
    let (m_pred, j_pred) = collect(predicted)?;
    Ok((
        js_divergence(&m_ref, &m_pred),
        js_divergence(&j_ref, &j_pred),
    ))
}

/// Convenience wrapper: run `m` rollouts from the given start states and
/// wrap them as lag-resolution trajectories.
pub fn rollout_trajectories(
    model: &TrainedModel,
    tm: &TransitionModel,
    starts: &[Trajectory],
    n_steps: usize,
    tau: usize,
    seed: u64,
) -> Vec<Trajectory> {
    starts
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let r = unroll(model, tm, s, 0, n_steps, seed, k as u64);
            Trajectory {
                states: r.states,
                lag_time: tau,
                system_id: s.system_id.clone(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::GridSpec;

    #[test]
    fn sample_cdf_picks_intervals() {
        let cdf = vec![0.25, 0.5, 1.0];
        assert_eq!(sample_cdf(&cdf, 0.1), 0);
        assert_eq!(sample_cdf(&cdf, 0.3), 1);
        assert_eq!(sample_cdf(&cdf, 0.9), 2);
        assert_eq!(sample_cdf(&cdf, 1.0), 2);
    }

    #[test]
    fn identical_sets_have_zero_divergence() {
        let t = Trajectory::continuous(
            1,
            vec![0.1, 0.5, 0.9, 0.2, 0.8, 0.4],
            1,
            "x",
        )
        .unwrap();
        let grid = EvalGrid::Continuous {
            spec: GridSpec::new(4, vec![(0.0, 1.0)]).unwrap(),
        };
        let (mjs, tjs) = mjs_tjs(&[t.clone()], &[t], &grid, 1).unwrap();
        assert_eq!(mjs, 0.0);
        assert_eq!(tjs, 0.0);
    }

    #[test]
    fn disjoint_supports_reach_ln2() {
        let a = Trajectory::continuous(1, vec![0.1, 0.11, 0.12, 0.13], 1, "a").unwrap();
        let b = Trajectory::continuous(1, vec![0.9, 0.91, 0.92, 0.93], 1, "b").unwrap();
        let grid = EvalGrid::Continuous {
            spec: GridSpec::new(4, vec![(0.0, 1.0)]).unwrap(),
        };
        let (mjs, tjs) = mjs_tjs(&[a], &[b], &grid, 1).unwrap();
        assert!((mjs - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((tjs - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn divergences_are_symmetric_in_arguments() {
        let a = Trajectory::continuous(1, vec![0.1, 0.5, 0.3, 0.7, 0.2, 0.6], 1, "a").unwrap();
        let b = Trajectory::continuous(1, vec![0.9, 0.2, 0.8, 0.1, 0.6, 0.4], 1, "b").unwrap();
        let grid = EvalGrid::Continuous {
            spec: GridSpec::new(3, vec![(0.0, 1.0)]).unwrap(),
        };
        let (m1, t1) = mjs_tjs(&[a.clone()], &[b.clone()], &grid, 1).unwrap();
        let (m2, t2) = mjs_tjs(&[b], &[a], &grid, 1).unwrap();
        assert!((m1 - m2).abs() < 1e-12);
        assert!((t1 - t2).abs() < 1e-12);
    }

    #[test]
    fn lag_subsampling_respects_lag_time() {
        // Raw trajectory with lag_time 1, tau 2: every other sample.
        let t = Trajectory::continuous(1, vec![0.1, 0.9, 0.1, 0.9, 0.1], 1, "x").unwrap();
        let grid = EvalGrid::Continuous {
            spec: GridSpec::new(2, vec![(0.0, 1.0)]).unwrap(),
        };
        let seq = grid_sequence(&t, &grid, 2).unwrap();
        assert_eq!(seq, vec![0, 0, 0]);
    }
}
