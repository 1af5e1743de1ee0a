//! Stage-2 loss terms, each usable standalone on a tape.

use crate::error::{Error, Result};
use crate::landscape::{FpeForward, FpeModel, LandscapeGraph};
use crate::numerics::{ParamStore, Tape, Var};

/// Latent-consistency loss for a single lag pair: evolve the hidden state
/// from `c_t` and compare it (mean squared over nodes and channels) with
/// the encoding of the target distribution concentrated at `c_{t+τ}`.
pub fn loss_latent(
    model: &FpeModel,
    store: &ParamStore,
    graph: &LandscapeGraph,
    codewords: &[f64],
    c_t: usize,
    c_t_lag: usize,
) -> Result<f64> {
    let start = graph.node_of(c_t)?;
    let target = graph.node_of(c_t_lag)?;
    let mut tape = Tape::new();
    let fw = model.begin(&mut tape, store, graph, codewords)?;
    let p0 = model.smoothed_one_hot(&mut tape, start);
    let h_t = model.evolve_hidden(&mut tape, store, graph, &fw, p0, 1)?;
    let p_target = model.smoothed_one_hot(&mut tape, target);
    let h_target = model.probability_encode(&mut tape, store, &fw, p_target)?;
    let l = latent_l2(&mut tape, h_target, h_t)?;
    Ok(tape.value(l)[0])
}

/// `mean((a - b)^2)` over all entries.
pub fn latent_l2(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let d2 = tape.mul(d, d)?;
    tape.mean(d2)
}

/// Cross-entropy of a predicted distribution row against a one-hot
/// target: `-ln q[target]`.
pub fn loss_code(q: &[f64], target: usize) -> Result<f64> {
    if target >= q.len() {
        return Err(Error::Evaluation(format!(
            "target {target} outside distribution of {} entries",
            q.len()
        )));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > 1e-6 || q.iter().any(|&v| v < 0.0) {
        return Err(Error::Evaluation("q is not a distribution".into()));
    }
    Ok(-q[target].max(f64::MIN_POSITIVE).ln())
}

/// Cross-entropy on a tape against a weighted set of targets:
/// `-Σ_j w_j ln q[t_j]` with `Σ w_j = 1`.
pub fn loss_code_on_tape(
    tape: &mut Tape,
    q_row: Var,
    targets: &[usize],
    weights: &[f64],
) -> Result<Var> {
    let (_, n) = tape.shape(q_row);
    let q_col = tape.reshape(q_row, n, 1)?;
    let picked = tape.gather_rows(q_col, targets)?;
    let floored = tape.maximum_scalar(picked, f64::MIN_POSITIVE)?;
    let logs = tape.log(floored)?;
    let w = tape.constant_col(weights.to_vec());
    let weighted = tape.mul(logs, w)?;
    let s = tape.sum(weighted)?;
    tape.neg(s)
}

/// Boltzmann regularizer `KL(p_emp || softmax(-E/kT))` on a tape; the
/// energies come from the forward record so the gradient reaches the
/// energy head.
pub fn loss_phy_on_tape(
    tape: &mut Tape,
    fw: &FpeForward,
    empirical: &[f64],
    kt: f64,
) -> Result<Var> {
    let n = empirical.len();
    let e_row = tape.reshape(fw.energies, 1, n)?;
    let neg_scaled = tape.mul_scalar(e_row, -1.0 / kt)?;
    let q = tape.softmax(neg_scaled)?;
    let q_floored = tape.maximum_scalar(q, f64::MIN_POSITIVE)?;
    let log_q = tape.log(q_floored)?;
    let p = tape.constant_row(empirical.to_vec());
    let cross = tape.mul(log_q, p)?;
    let neg_cross = tape.neg(cross)?;
    let sum = tape.sum(neg_cross)?;
    let entropy: f64 = empirical
        .iter()
        .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
        .sum();
    tape.add_scalar(sum, entropy)
}

/// Standalone Boltzmann regularizer value for given energies.
pub fn loss_phy(energies: &[f64], empirical: &[f64], kt: f64) -> f64 {
    let q = crate::landscape::boltzmann_distribution(energies, kt);
    empirical
        .iter()
        .zip(&q)
        .map(|(&p, &qi)| {
            if p > 0.0 {
                p * (p / qi).ln()
            } else {
                0.0
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::CODEWORD_DIM;
    use crate::landscape::{boltzmann_distribution, FpeSettings, GraphTopology};
    use crate::numerics::{finite_difference_grad, rng_stream};
    use rand::Rng;

    fn toy_graph(n: usize) -> LandscapeGraph {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let topology = GraphTopology::new(n, edges).unwrap();
        LandscapeGraph {
            active: (0..n).collect(),
            topology,
            energy: vec![0.0; n],
            occupancy: vec![1; n],
            n_components: 1,
        }
    }

    fn toy_codewords(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_stream(seed, "loss-test-cw", 0);
        (0..n * CODEWORD_DIM)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect()
    }

    #[test]
    fn loss_code_uniform_is_ln_m() {
        let m = 7;
        let q = vec![1.0 / m as f64; m];
        let l = loss_code(&q, 3).unwrap();
        assert!((l - (m as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_code_certain_is_zero_and_half_is_ln2() {
        let mut q = vec![0.0; 4];
        q[2] = 1.0;
        assert_eq!(loss_code(&q, 2).unwrap(), 0.0);
        let q = vec![0.5, 0.5, 0.0, 0.0];
        assert!((loss_code(&q, 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_phy_zero_when_empirical_is_boltzmann() {
        let e = vec![0.3, -0.7, 1.1, 0.0];
        let p = boltzmann_distribution(&e, 1.0);
        let l = loss_phy(&e, &p, 1.0);
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn loss_phy_nonnegative_on_random_pairs() {
        let mut rng = rng_stream(31, "phy-nonneg", 0);
        for _ in 0..100 {
            let n = rng.random_range(2..12);
            let e: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            assert!(loss_phy(&e, &p, 1.0) >= -1e-14);
        }
    }

    #[test]
    fn loss_phy_gradient_is_p_minus_q() {
        // d KL / d E_i = p_i - q_i at kT = 1.
        let n = 5;
        let graph = toy_graph(n);
        let codewords = toy_codewords(n, 1);
        let mut store = crate::numerics::ParamStore::new();
        let model = FpeModel::init(&mut store, n, FpeSettings::default(), 1);
        let p = vec![0.4, 0.3, 0.1, 0.1, 0.1];

        let mut tape = Tape::new();
        let fw = model.begin(&mut tape, &store, &graph, &codewords).unwrap();
        let e_vals = tape.value(fw.energies).to_vec();
        let l = loss_phy_on_tape(&mut tape, &fw, &p, 1.0).unwrap();
        tape.backward(l).unwrap();
        let grad_e = tape.grad(fw.energies);
        let q = boltzmann_distribution(&e_vals, 1.0);
        for i in 0..n {
            assert!(
                (grad_e[i] - (p[i] - q[i])).abs() < 1e-10,
                "node {i}: {} vs {}",
                grad_e[i],
                p[i] - q[i]
            );
        }
    }

    #[test]
    fn loss_latent_zero_when_prediction_matches_target_encoding() {
        // With zero integration steps the evolved hidden state equals the
        // encoding of the start; pick target == start.
        let n = 4;
        let graph = toy_graph(n);
        let codewords = toy_codewords(n, 2);
        let mut store = crate::numerics::ParamStore::new();
        let model = FpeModel::init(
            &mut store,
            n,
            FpeSettings {
                n_int: 1,
                ..Default::default()
            },
            2,
        );
        let mut tape = Tape::new();
        let fw = model.begin(&mut tape, &store, &graph, &codewords).unwrap();
        let p0 = model.smoothed_one_hot(&mut tape, 1);
        let h0 = model
            .probability_encode(&mut tape, &store, &fw, p0)
            .unwrap();
        let h_target = model
            .probability_encode(&mut tape, &store, &fw, p0)
            .unwrap();
        let l = latent_l2(&mut tape, h_target, h0).unwrap();
        assert_eq!(tape.value(l)[0], 0.0);
    }

    #[test]
    fn loss_latent_invariant_under_node_relabeling() {
        let n = 4;
        let perm = [3usize, 1, 0, 2];
        let graph_a = toy_graph(n);
        let edges_b: Vec<(usize, usize)> = graph_a
            .topology
            .edges
            .iter()
            .map(|&(a, b)| (perm[a], perm[b]))
            .collect();
        let topology_b = GraphTopology::new(n, edges_b).unwrap();
        let graph_b = LandscapeGraph {
            active: (0..n).collect(),
            topology: topology_b,
            energy: vec![0.0; n],
            occupancy: vec![1; n],
            n_components: 1,
        };
        let cw_a = toy_codewords(n, 3);
        let mut cw_b = vec![0.0; cw_a.len()];
        for i in 0..n {
            cw_b[perm[i] * CODEWORD_DIM..(perm[i] + 1) * CODEWORD_DIM]
                .copy_from_slice(&cw_a[i * CODEWORD_DIM..(i + 1) * CODEWORD_DIM]);
        }
        let mut store_a = crate::numerics::ParamStore::new();
        let model_a = FpeModel::init(&mut store_a, n, FpeSettings::default(), 4);
        let mut store_b = crate::numerics::ParamStore::new();
        let model_b = FpeModel::init(&mut store_b, n, FpeSettings::default(), 4);
        let pos_a = store_a.get(model_a.pos_enc).data.clone();
        let mut pos_b = vec![0.0; pos_a.len()];
        for i in 0..n {
            pos_b[perm[i] * 3..(perm[i] + 1) * 3].copy_from_slice(&pos_a[i * 3..(i + 1) * 3]);
        }
        store_b.get_mut(model_b.pos_enc).data = pos_b;

        let la = loss_latent(&model_a, &store_a, &graph_a, &cw_a, 0, 2).unwrap();
        let lb = loss_latent(&model_b, &store_b, &graph_b, &cw_b, perm[0], perm[2]).unwrap();
        assert!((la - lb).abs() < 1e-10, "{la} vs {lb}");
    }

    #[test]
    fn loss_latent_gradient_matches_finite_differences() {
        let n = 4;
        let graph = toy_graph(n);
        let codewords = toy_codewords(n, 5);
        let mut store = crate::numerics::ParamStore::new();
        let model = FpeModel::init(
            &mut store,
            n,
            FpeSettings {
                n_int: 2,
                ..Default::default()
            },
            5,
        );
        // Check against the diffusion coefficients and the energy head.
        let targets = vec![model.log_beta_xi, model.energy_head.layers[0].weight];

        let eval = |store: &ParamStore| loss_latent(&model, store, &graph, &codewords, 0, 3).unwrap();

        let mut tape = Tape::new();
        let fw = model.begin(&mut tape, &store, &graph, &codewords).unwrap();
        let p0 = model.smoothed_one_hot(&mut tape, 0);
        let h_t = model
            .evolve_hidden(&mut tape, &store, &graph, &fw, p0, 1)
            .unwrap();
        let p_target = model.smoothed_one_hot(&mut tape, 3);
        let h_target = model
            .probability_encode(&mut tape, &store, &fw, p_target)
            .unwrap();
        let l = latent_l2(&mut tape, h_target, h_t).unwrap();
        tape.backward(l).unwrap();
        tape.accumulate_param_grads(&mut store);
        let analytic: Vec<Vec<f64>> = targets
            .iter()
            .map(|id| store.get(*id).grad.clone().unwrap())
            .collect();
        store.zero_grads(&targets);

        let fd = finite_difference_grad(&mut store, &targets, 1e-5, eval);
        for (slot, _) in targets.iter().enumerate() {
            for (a, b) in analytic[slot].iter().zip(&fd[slot]) {
                let denom = a.abs().max(b.abs()).max(1e-6);
                assert!(
                    (a - b).abs() / denom < 1e-3,
                    "slot {slot}: analytic {a} vs fd {b}"
                );
            }
        }
    }
}
