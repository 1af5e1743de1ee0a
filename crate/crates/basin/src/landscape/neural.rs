//! Learned probability dynamics on the landscape graph. A one-hot start
//! is lifted into a 64-wide per-node representation by a graph-conv
//! encoder, evolved by a flux equation whose drift is the energy
//! difference across each edge and whose diffusion strength is a learned
//! per-channel coefficient, then decoded back to a distribution over
//! nodes. The energy head enters both the encoder features and the edge
//! drift, which is what lets prediction error shape the energy estimate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::CODEWORD_DIM;
use crate::error::{Error, Result};
use crate::landscape::LandscapeGraph;
use crate::numerics::{rng_stream, Linear, Mlp, ParamId, ParamStore, Tape, Tensor, Var};

pub const POS_ENC_DIM: usize = 3;
const CHANNELS: usize = 64;
const ONE_HOT_EPS: f64 = 1e-6;
const H_FLOOR: f64 = 1e-12;

/// Static hyperparameters of the neural flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpeSettings {
    /// Sigmoid scale on energy differences in the flux gate.
    pub sigmoid_scale: f64,
    /// Euler substeps per lag unit.
    pub n_int: usize,
    /// Evolve the raw probability vector instead of the encoded state
    /// (the encoder/decoder bypass ablation).
    pub bypass_phi_psi: bool,
}

impl Default for FpeSettings {
    fn default() -> Self {
        Self {
            sigmoid_scale: 10.0,
            n_int: 10,
            bypass_phi_psi: false,
        }
    }
}

/// Parameter handles of the landscape dynamics model.
#[derive(Debug, Clone)]
pub struct FpeModel {
    pub n: usize,
    pub settings: FpeSettings,
    pub pos_enc: ParamId,
    pub phi1: Linear,
    pub phi2: Linear,
    pub att_query: Linear,
    pub att_key: Linear,
    /// `β_ξ` stored as logs so the coefficients stay positive.
    pub log_beta_xi: ParamId,
    pub psi1: Linear,
    pub psi2: Linear,
    pub energy_head: Mlp,
}

/// Per-tape recording of the pieces every forward pass needs.
pub struct FpeForward {
    pub energies: Var,
    attention: Var,
    beta: Var,
    gcn_src: Vec<usize>,
    gcn_dst: Vec<usize>,
    gcn_w: Var,
}

impl FpeModel {
    pub fn init(
        store: &mut ParamStore,
        n: usize,
        settings: FpeSettings,
        seed: u64,
    ) -> Self {
        let mut rng = rng_stream(seed, "fpe-init", 0);
        let pos_data: Vec<f64> = (0..n * POS_ENC_DIM)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let pos_enc = store.register(
            "fpe.pos_enc",
            Tensor::new(vec![n, POS_ENC_DIM], pos_data).expect("finite init"),
        );
        let phi1 = Linear::new(store, "fpe.phi1", POS_ENC_DIM + 2, CHANNELS, &mut rng);
        let phi2 = Linear::new(store, "fpe.phi2", CHANNELS, CHANNELS, &mut rng);
        let att_query = Linear::new(store, "fpe.att_query", POS_ENC_DIM, CHANNELS, &mut rng);
        let att_key = Linear::new(store, "fpe.att_key", POS_ENC_DIM, CHANNELS, &mut rng);
        let log_beta_xi = store.register("fpe.log_beta_xi", Tensor::zeros(1, CHANNELS));
        let psi1 = Linear::new(store, "fpe.psi1", CHANNELS, CHANNELS, &mut rng);
        let psi2 = Linear::new(store, "fpe.psi2", CHANNELS, 1, &mut rng);
        let energy_head = Mlp::new(
            store,
            "fpe.energy",
            &[CODEWORD_DIM, CHANNELS, 1],
            &mut rng,
        );
        Self {
            n,
            settings,
            pos_enc,
            phi1,
            phi2,
            att_query,
            att_key,
            log_beta_xi,
            psi1,
            psi2,
            energy_head,
        }
    }

    /// Everything trained in stage 2.
    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.pos_enc];
        ids.extend(self.phi1.params());
        ids.extend(self.phi2.params());
        ids.extend(self.att_query.params());
        ids.extend(self.att_key.params());
        ids.push(self.log_beta_xi);
        ids.extend(self.psi1.params());
        ids.extend(self.psi2.params());
        ids.extend(self.energy_head.params());
        ids
    }

    /// Record the per-tape shared pieces: energies of the active
    /// codewords, edge attention, diffusion coefficients, GCN layout.
    pub fn begin(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &LandscapeGraph,
        codewords: &[f64],
    ) -> Result<FpeForward> {
        let n = graph.n_nodes();
        if n != self.n {
            return Err(Error::Config(format!(
                "model built for {} nodes, graph has {n}",
                self.n
            )));
        }
        let cw = tape.constant_matrix(codewords.to_vec(), n, CODEWORD_DIM);
        let energies = self.energy_head.forward(tape, store, cw)?;

        let pos = tape.param(store, self.pos_enc);
        let q = self.att_query.forward(tape, store, pos)?;
        let k = self.att_key.forward(tape, store, pos)?;
        let q_recv = tape.gather_rows(q, &graph.topology.recv)?;
        let k_send = tape.gather_rows(k, &graph.topology.send)?;
        let prod = tape.mul(q_recv, k_send)?;
        let scores = tape.row_sum(prod)?;
        let scaled = tape.mul_scalar(scores, 1.0 / (CHANNELS as f64).sqrt())?;
        let attention = tape.segment_softmax(scaled, &graph.topology.recv)?;

        let log_beta = tape.param(store, self.log_beta_xi);
        let beta = tape.exp(log_beta)?;

        let (gcn_src, gcn_dst, gcn_w) = graph.topology.gcn_edges();
        let gcn_w = tape.constant_col(gcn_w);
        Ok(FpeForward {
            energies,
            attention,
            beta,
            gcn_src,
            gcn_dst,
            gcn_w,
        })
    }

    /// Normalized-adjacency propagation `Â x`.
    fn propagate(&self, tape: &mut Tape, fw: &FpeForward, x: Var) -> Result<Var> {
        let gathered = tape.gather_rows(x, &fw.gcn_src)?;
        let weighted = tape.mul(gathered, fw.gcn_w)?;
        tape.scatter_add_rows(weighted, &fw.gcn_dst, self.n)
    }

    /// Probability encoder: per-node features `[pos, p_i, E_i]` through
    /// two graph-conv layers with tanh.
    pub fn probability_encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        fw: &FpeForward,
        p: Var,
    ) -> Result<Var> {
        let pos = tape.param(store, self.pos_enc);
        let x = tape.concat_cols(&[pos, p, fw.energies])?;
        let l1 = self.phi1.forward(tape, store, x)?;
        let p1 = self.propagate(tape, fw, l1)?;
        let h1 = tape.tanh(p1)?;
        let l2 = self.phi2.forward(tape, store, h1)?;
        let p2 = self.propagate(tape, fw, l2)?;
        tape.tanh(p2)
    }

    /// Decoder: two graph-conv layers down to one logit per node, then a
    /// softmax over nodes.
    pub fn probability_decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        fw: &FpeForward,
        h: Var,
    ) -> Result<Var> {
        let l1 = self.psi1.forward(tape, store, h)?;
        let p1 = self.propagate(tape, fw, l1)?;
        let h1 = tape.tanh(p1)?;
        let l2 = self.psi2.forward(tape, store, h1)?;
        let logits = self.propagate(tape, fw, l2)?;
        let row = tape.reshape(logits, 1, self.n)?;
        tape.softmax(row)
    }

    /// Flux RHS `dH/dt`. `h` is the raw state `[n, channels]`; it is
    /// rectified through softplus before logs.
    pub fn neural_fpe_rhs(
        &self,
        tape: &mut Tape,
        graph: &LandscapeGraph,
        fw: &FpeForward,
        h: Var,
        beta: Var,
    ) -> Result<Var> {
        let recv = &graph.topology.recv;
        let send = &graph.topology.send;
        let sp = tape.softplus(h)?;
        let hp = tape.maximum_scalar(sp, H_FLOOR)?;
        let lh = tape.log(hp)?;
        let h_send = tape.gather_rows(hp, send)?;
        let h_recv = tape.gather_rows(hp, recv)?;
        let l_send = tape.gather_rows(lh, send)?;
        let l_recv = tape.gather_rows(lh, recv)?;
        let e_send = tape.gather_rows(fw.energies, send)?;
        let e_recv = tape.gather_rows(fw.energies, recv)?;
        let de = tape.sub(e_send, e_recv)?;

        let dlog = tape.sub(l_send, l_recv)?;
        let noise = tape.mul(dlog, beta)?;
        let drift = tape.add(noise, de)?;

        let scaled_de = tape.mul_scalar(de, self.settings.sigmoid_scale)?;
        let gate = tape.sigmoid(scaled_de)?;
        let gated_send = tape.mul(h_send, gate)?;
        let neg_gate = tape.neg(gate)?;
        let inv_gate = tape.add_scalar(neg_gate, 1.0)?;
        let gated_recv = tape.mul(h_recv, inv_gate)?;
        let conv = tape.add(gated_send, gated_recv)?;

        let flux = tape.mul(drift, conv)?;
        let weighted = tape.mul(flux, fw.attention)?;
        tape.scatter_add_rows(weighted, recv, self.n)
    }

    /// Smoothed one-hot initial distribution at `node`.
    pub fn smoothed_one_hot(&self, tape: &mut Tape, node: usize) -> Var {
        let n = self.n;
        let mut p = vec![ONE_HOT_EPS; n];
        p[node] = 1.0 + ONE_HOT_EPS;
        let z: f64 = 1.0 + n as f64 * ONE_HOT_EPS;
        p.iter_mut().for_each(|v| *v /= z);
        tape.constant_col(p)
    }

    /// Evolve an initial per-node distribution for `lag_units` and return
    /// the decoded distribution over nodes as a `[1, n]` row.
    pub fn predict_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &LandscapeGraph,
        fw: &FpeForward,
        p0: Var,
        lag_units: usize,
    ) -> Result<Var> {
        let steps = lag_units * self.settings.n_int;
        let dt = 1.0 / self.settings.n_int as f64;
        if self.settings.bypass_phi_psi {
            // Evolve the probability column itself with one channel.
            let beta_first = tape.select_per_row(fw.beta, &[0])?;
            let mut h = p0;
            for _ in 0..steps {
                let rhs = self.neural_fpe_rhs(tape, graph, fw, h, beta_first)?;
                let scaled = tape.mul_scalar(rhs, dt)?;
                h = tape.add(h, scaled)?;
            }
            let sp = tape.softplus(h)?;
            let pos = tape.maximum_scalar(sp, H_FLOOR)?;
            let row = tape.reshape(pos, 1, self.n)?;
            let total = tape.sum(row)?;
            tape.div(row, total)
        } else {
            let mut h = self.probability_encode(tape, store, fw, p0)?;
            for _ in 0..steps {
                let rhs = self.neural_fpe_rhs(tape, graph, fw, h, fw.beta)?;
                let scaled = tape.mul_scalar(rhs, dt)?;
                h = tape.add(h, scaled)?;
            }
            self.probability_decode(tape, store, fw, h)
        }
    }

    /// Hidden state after evolving for `lag_units` (the encoded route
    /// only; used by the latent-consistency loss).
    pub fn evolve_hidden(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &LandscapeGraph,
        fw: &FpeForward,
        p0: Var,
        lag_units: usize,
    ) -> Result<Var> {
        let steps = lag_units * self.settings.n_int;
        let dt = 1.0 / self.settings.n_int as f64;
        let mut h = self.probability_encode(tape, store, fw, p0)?;
        for _ in 0..steps {
            let rhs = self.neural_fpe_rhs(tape, graph, fw, h, fw.beta)?;
            let scaled = tape.mul_scalar(rhs, dt)?;
            h = tape.add(h, scaled)?;
        }
        Ok(h)
    }

    /// Refresh the graph's cached energies from the energy head.
    pub fn refresh_energies(
        &self,
        store: &ParamStore,
        graph: &mut LandscapeGraph,
        codewords: &[f64],
    ) -> Result<()> {
        let mut tape = Tape::new();
        let cw = tape.constant_matrix(codewords.to_vec(), graph.n_nodes(), CODEWORD_DIM);
        let e = self.energy_head.forward(&mut tape, store, cw)?;
        graph.energy = tape.value(e).to_vec();
        Ok(())
    }
}

/// Predicted distribution over active codewords after `lag_units` lag
/// steps starting from active codeword `start_codeword`.
pub fn predict_distribution(
    model: &FpeModel,
    store: &ParamStore,
    graph: &LandscapeGraph,
    codewords: &[f64],
    start_codeword: usize,
    lag_units: usize,
) -> Result<Vec<f64>> {
    let node = graph.node_of(start_codeword)?;
    let mut tape = Tape::new();
    let fw = model.begin(&mut tape, store, graph, codewords)?;
    let p0 = model.smoothed_one_hot(&mut tape, node);
    let q = model.predict_on_tape(&mut tape, store, graph, &fw, p0, lag_units)?;
    Ok(tape.value(q).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::GraphTopology;

    fn toy_graph(n: usize, edges: Vec<(usize, usize)>) -> LandscapeGraph {
        let topology = GraphTopology::new(n, edges).unwrap();
        let n_components = topology.connected_components();
        LandscapeGraph {
            active: (0..n).collect(),
            topology,
            energy: vec![0.0; n],
            occupancy: vec![1; n],
            n_components,
        }
    }

    fn toy_codewords(n: usize) -> Vec<f64> {
        (0..n * CODEWORD_DIM)
            .map(|i| ((i % 17) as f64 - 8.0) / 10.0)
            .collect()
    }

    #[test]
    fn attention_rows_sum_to_one_per_receiver() {
        let graph = toy_graph(4, vec![(0, 1), (1, 2), (2, 3), (0, 3)]);
        let mut store = ParamStore::new();
        let model = FpeModel::init(&mut store, 4, FpeSettings::default(), 3);
        let mut tape = Tape::new();
        let fw = model.begin(&mut tape, &store, &graph, &toy_codewords(4)).unwrap();
        let att = tape.value(fw.attention);
        let recv = &graph.topology.recv;
        let mut sums = vec![0.0; 4];
        for (k, &i) in recv.iter().enumerate() {
            sums[i] += att[k];
        }
        for s in sums {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_energy_equal_state_has_zero_rhs() {
        let graph = toy_graph(3, vec![(0, 1), (1, 2)]);
        let mut store = ParamStore::new();
        let mut model = FpeModel::init(&mut store, 3, FpeSettings::default(), 1);
        // Identical codeword vectors make the head produce equal energies.
        let cw: Vec<f64> = std::iter::repeat(0.37)
            .take(3 * CODEWORD_DIM)
            .collect();
        model.settings.sigmoid_scale = 5.0;
        let mut tape = Tape::new();
        let fw = model.begin(&mut tape, &store, &graph, &cw).unwrap();
        let h = tape.constant_matrix(vec![0.9; 3 * CHANNELS], 3, CHANNELS);
        let rhs = model.neural_fpe_rhs(&mut tape, &graph, &fw, h, fw.beta).unwrap();
        for v in tape.value(rhs) {
            assert!(v.abs() < 1e-12, "rhs entry {v}");
        }
    }

    #[test]
    fn sigmoid_gate_saturates_toward_high_energy_side() {
        // One edge; with a huge scale, sigma(k*E_ji) -> 1 when E_j > E_i,
        // so the flux is carried by the sender's state.
        let graph = toy_graph(2, vec![(0, 1)]);
        let mut store = ParamStore::new();
        let mut model = FpeModel::init(&mut store, 2, FpeSettings::default(), 5);
        model.settings.sigmoid_scale = 1e4;
        let mut tape = Tape::new();
        // Codewords chosen so energies differ.
        let mut cw = toy_codewords(2);
        for v in cw.iter_mut().take(CODEWORD_DIM) {
            *v += 1.0;
        }
        let fw = model.begin(&mut tape, &store, &graph, &cw).unwrap();
        let e = tape.value(fw.energies).to_vec();
        let de = e[1] - e[0];
        assert!(de.abs() > 1e-6, "degenerate test energies");
        let s = crate::numerics::sigmoid(model.settings.sigmoid_scale * de);
        if de > 0.0 {
            assert!(s > 1.0 - 1e-12);
        } else {
            assert!(s < 1e-12);
        }
    }

    #[test]
    fn prediction_is_a_distribution_even_untrained() {
        let graph = toy_graph(5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]);
        let mut store = ParamStore::new();
        let model = FpeModel::init(&mut store, 5, FpeSettings::default(), 7);
        let q = predict_distribution(&model, &store, &graph, &toy_codewords(5), 2, 1).unwrap();
        assert_eq!(q.len(), 5);
        assert!(q.iter().all(|&v| v >= 0.0));
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bypass_mode_yields_valid_distribution() {
        let graph = toy_graph(4, vec![(0, 1), (1, 2), (2, 3)]);
        let mut store = ParamStore::new();
        let settings = FpeSettings {
            bypass_phi_psi: true,
            ..Default::default()
        };
        let model = FpeModel::init(&mut store, 4, settings, 11);
        let q = predict_distribution(&model, &store, &graph, &toy_codewords(4), 1, 1).unwrap();
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(q.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn inactive_start_codeword_is_an_error() {
        let mut graph = toy_graph(3, vec![(0, 1), (1, 2)]);
        graph.active = vec![2, 5, 9];
        let mut store = ParamStore::new();
        let model = FpeModel::init(&mut store, 3, FpeSettings::default(), 0);
        let err =
            predict_distribution(&model, &store, &graph, &toy_codewords(3), 4, 1).unwrap_err();
        assert!(err.to_string().contains("not active"));
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        // Relabel nodes of a path graph with a permutation; permuting the
        // positional encodings and edges must permute H rows identically.
        let perm = [2usize, 0, 1];
        let graph_a = toy_graph(3, vec![(0, 1), (1, 2)]);
        let edges_b: Vec<(usize, usize)> = vec![(perm[0], perm[1]), (perm[1], perm[2])];
        let graph_b = {
            let topology = GraphTopology::new(3, edges_b).unwrap();
            LandscapeGraph {
                active: vec![0, 1, 2],
                topology,
                energy: vec![0.0; 3],
                occupancy: vec![1; 3],
                n_components: 1,
            }
        };
        let mut store_a = ParamStore::new();
        let model_a = FpeModel::init(&mut store_a, 3, FpeSettings::default(), 9);
        let mut store_b = ParamStore::new();
        let model_b = FpeModel::init(&mut store_b, 3, FpeSettings::default(), 9);

        // Same codewords and positional encodings, row-permuted for b.
        let cw_a = toy_codewords(3);
        let mut cw_b = vec![0.0; cw_a.len()];
        let pos_a = store_a.get(model_a.pos_enc).data.clone();
        let mut pos_b = vec![0.0; pos_a.len()];
        for i in 0..3 {
            cw_b[perm[i] * CODEWORD_DIM..(perm[i] + 1) * CODEWORD_DIM]
                .copy_from_slice(&cw_a[i * CODEWORD_DIM..(i + 1) * CODEWORD_DIM]);
            pos_b[perm[i] * POS_ENC_DIM..(perm[i] + 1) * POS_ENC_DIM]
                .copy_from_slice(&pos_a[i * POS_ENC_DIM..(i + 1) * POS_ENC_DIM]);
        }
        store_b.get_mut(model_b.pos_enc).data = pos_b;

        let p_a = vec![0.6, 0.3, 0.1];
        let mut p_b = vec![0.0; 3];
        for i in 0..3 {
            p_b[perm[i]] = p_a[i];
        }

        let mut tape_a = Tape::new();
        let fw_a = model_a.begin(&mut tape_a, &store_a, &graph_a, &cw_a).unwrap();
        let pa = tape_a.constant_col(p_a);
        let ha = model_a
            .probability_encode(&mut tape_a, &store_a, &fw_a, pa)
            .unwrap();

        let mut tape_b = Tape::new();
        let fw_b = model_b.begin(&mut tape_b, &store_b, &graph_b, &cw_b).unwrap();
        let pb = tape_b.constant_col(p_b);
        let hb = model_b
            .probability_encode(&mut tape_b, &store_b, &fw_b, pb)
            .unwrap();

        let va = tape_a.value(ha);
        let vb = tape_b.value(hb);
        for i in 0..3 {
            for c in 0..CHANNELS {
                let a = va[i * CHANNELS + c];
                let b = vb[perm[i] * CHANNELS + c];
                assert!((a - b).abs() < 1e-12, "row {i} channel {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn encoder_output_shape_is_nodes_by_channels() {
        let graph = toy_graph(6, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        let mut store = ParamStore::new();
        let model = FpeModel::init(&mut store, 6, FpeSettings::default(), 13);
        let mut tape = Tape::new();
        let fw = model.begin(&mut tape, &store, &graph, &toy_codewords(6)).unwrap();
        let p0 = model.smoothed_one_hot(&mut tape, 0);
        let h = model
            .probability_encode(&mut tape, &store, &fw, p0)
            .unwrap();
        assert_eq!(tape.shape(h), (6, CHANNELS));
    }

    #[test]
    fn isolated_nodes_depend_only_on_themselves() {
        // Two components: {0,1} and {2,3}. Changing p on one component
        // must not change H on the other.
        let graph = toy_graph(4, vec![(0, 1), (2, 3)]);
        let mut store = ParamStore::new();
        let model = FpeModel::init(&mut store, 4, FpeSettings::default(), 17);
        let cw = toy_codewords(4);
        let run = |p: Vec<f64>| {
            let mut tape = Tape::new();
            let fw = model.begin(&mut tape, &store, &graph, &cw).unwrap();
            let pv = tape.constant_col(p);
            let h = model.probability_encode(&mut tape, &store, &fw, pv).unwrap();
            tape.value(h).to_vec()
        };
        let a = run(vec![0.7, 0.1, 0.1, 0.1]);
        let b = run(vec![0.1, 0.7, 0.1, 0.1]);
        for i in 2..4 {
            for c in 0..CHANNELS {
                assert_eq!(a[i * CHANNELS + c], b[i * CHANNELS + c]);
            }
        }
    }
}
