//! The discrete energy landscape: active codewords as graph nodes, edges
//! from observed transitions, a scalar energy per node, and probability
//! dynamics over the graph (exact and learned).

mod exact;
mod neural;

pub use exact::{exact_fpe_rhs, free_energy, integrate_exact_fpe, integrate_exact_fpe_with};
pub use neural::{predict_distribution, FpeForward, FpeModel, FpeSettings, POS_ENC_DIM};

use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, CodebookModel};
use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::systems::Trajectory;

/// Undirected graph over landscape nodes with the derived edge layouts
/// used by the propagation kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphTopology {
    pub n: usize,
    /// Undirected edges, `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Directed edge endpoints sorted by `(receiver, sender)`.
    #[serde(skip)]
    pub recv: Vec<usize>,
    #[serde(skip)]
    pub send: Vec<usize>,
    /// Neighbor lists, sorted.
    #[serde(skip)]
    pub neighbors: Vec<Vec<usize>>,
}

impl GraphTopology {
    pub fn new(n: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(Error::DegenerateGraph(format!("self loop at node {}", e.0)));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.1 >= n {
                return Err(Error::DegenerateGraph(format!(
                    "edge ({}, {}) outside {} nodes",
                    e.0, e.1, n
                )));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut topo = Self {
            n,
            edges,
            recv: Vec::new(),
            send: Vec::new(),
            neighbors: Vec::new(),
        };
        topo.rebuild_derived();
        Ok(topo)
    }

    /// Recompute the derived edge layouts (after deserialization).
    pub fn rebuild_derived(&mut self) {
        let mut neighbors = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for l in neighbors.iter_mut() {
            l.sort_unstable();
        }
        let mut recv = Vec::with_capacity(2 * self.edges.len());
        let mut send = Vec::with_capacity(2 * self.edges.len());
        for (i, l) in neighbors.iter().enumerate() {
            for &j in l {
                recv.push(i);
                send.push(j);
            }
        }
        self.neighbors = neighbors;
        self.recv = recv;
        self.send = send;
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn n_directed(&self) -> usize {
        self.recv.len()
    }

    /// Number of connected components.
    pub fn connected_components(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut components = 0;
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            components += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for &j in &self.neighbors[i] {
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        components
    }

    /// Edges of `A + I` with symmetric normalization
    /// `1/sqrt((1+deg_i)(1+deg_j))`, as `(src, dst, weight)` triples.
    pub fn gcn_edges(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let deg: Vec<f64> = (0..self.n).map(|i| 1.0 + self.degree(i) as f64).collect();
        let mut src = Vec::with_capacity(self.n + self.n_directed());
        let mut dst = Vec::with_capacity(self.n + self.n_directed());
        let mut w = Vec::with_capacity(self.n + self.n_directed());
        for i in 0..self.n {
            src.push(i);
            dst.push(i);
            w.push(1.0 / deg[i]);
            for &j in &self.neighbors[i] {
                src.push(j);
                dst.push(i);
                w.push(1.0 / (deg[i] * deg[j]).sqrt());
            }
        }
        (src, dst, w)
    }
}

/// The estimated energy landscape: active codewords, their adjacency, the
/// per-node energies, and the occupancy statistics they were built from.
/// The learnable positional encodings live in the companion [`FpeModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGraph {
    /// Codebook indices of the active codewords, ascending.
    pub active: Vec<usize>,
    pub topology: GraphTopology,
    /// Energy per active node, refreshed from the energy head.
    pub energy: Vec<f64>,
    /// Training samples per active node.
    pub occupancy: Vec<u64>,
    /// 1 when connected; larger values flag disconnected landscapes.
    pub n_components: usize,
}

impl LandscapeGraph {
    pub fn n_nodes(&self) -> usize {
        self.active.len()
    }

    /// Node index of a codeword, or an error if it is inactive.
    pub fn node_of(&self, codeword: usize) -> Result<usize> {
        self.active
            .binary_search(&codeword)
            .map_err(|_| Error::Evaluation(format!("codeword {codeword} is not active")))
    }

    /// Empirical occupancy distribution with Laplace smoothing `alpha`.
    pub fn empirical_distribution(&self, alpha: f64) -> Vec<f64> {
        let total: f64 = self.occupancy.iter().map(|&c| c as f64).sum();
        let n = self.occupancy.len() as f64;
        self.occupancy
            .iter()
            .map(|&c| (c as f64 + alpha) / (total + alpha * n))
            .collect()
    }
}

/// Trajectories projected onto landscape nodes (positions in the active
/// list, not raw codeword indices).
#[derive(Debug, Clone, PartialEq)]
pub struct CodedTrajectories {
    pub sequences: Vec<Vec<usize>>,
    pub lag_time: usize,
}

impl CodedTrajectories {
    /// All in-trajectory pairs `(node_t, node_{t+lag})`.
    pub fn lag_pairs(&self) -> Vec<(usize, usize)> {
        let lag = self.lag_time;
        let mut out = Vec::new();
        for seq in &self.sequences {
            if seq.len() > lag {
                for t in 0..seq.len() - lag {
                    out.push((seq[t], seq[t + lag]));
                }
            }
        }
        out
    }
}

/// Map trajectories through the trained codebook and connect codewords
/// that appear consecutively. Nodes are the active codewords; energies
/// start at zero and are populated by the energy head.
pub fn build_topology(
    model: &CodebookModel,
    store: &ParamStore,
    codebook: &Codebook,
    trajs: &[Trajectory],
    lag_time: usize,
) -> Result<(LandscapeGraph, CodedTrajectories)> {
    let active = codebook.active_set();
    if active.len() < 2 {
        return Err(Error::DegenerateGraph(format!(
            "only {} active codeword(s); need at least 2",
            active.len()
        )));
    }
    let node_of = |cw: usize| active.binary_search(&cw).ok();

    let mut sequences = Vec::with_capacity(trajs.len());
    let mut edges = Vec::new();
    let mut occupancy = vec![0u64; active.len()];
    for (ti, t) in trajs.iter().enumerate() {
        let pairs: Vec<(usize, usize)> = (0..t.len()).map(|i| (ti, i)).collect();
        let indices = crate::codebook::assign_indices(model, store, trajs, &pairs);
        let seq: Vec<usize> = indices
            .iter()
            .map(|&cw| {
                node_of(cw).expect("assignment produced a codeword outside the active set")
            })
            .collect();
        for w in seq.windows(2) {
            if w[0] != w[1] {
                edges.push((w[0].min(w[1]), w[0].max(w[1])));
            }
        }
        for &nd in &seq {
            occupancy[nd] += 1;
        }
        sequences.push(seq);
    }
    if edges.is_empty() {
        return Err(Error::DegenerateGraph(
            "no transitions between codewords; trajectories never leave their cells".into(),
        ));
    }
    let topology = GraphTopology::new(active.len(), edges)?;
    let n_components = topology.connected_components();
    let n = active.len();
    Ok((
        LandscapeGraph {
            active,
            topology,
            energy: vec![0.0; n],
            occupancy,
            n_components,
        },
        CodedTrajectories {
            sequences,
            lag_time,
        },
    ))
}

/// Boltzmann distribution `exp(-E/kT)/Z`, computed with max subtraction.
pub fn boltzmann_distribution(energies: &[f64], kt: f64) -> Vec<f64> {
    assert!(kt > 0.0, "kT must be positive");
    let scaled: Vec<f64> = energies.iter().map(|e| -e / kt).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_energies_give_uniform_boltzmann() {
        let q = boltzmann_distribution(&[0.7; 5], 1.0);
        for v in q {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn two_state_boltzmann_closed_form() {
        let kt = 0.8;
        let q = boltzmann_distribution(&[0.0, kt * 2.0_f64.ln()], kt);
        assert!((q[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((q[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn boltzmann_shift_invariance() {
        let e = [0.3, -1.0, 2.0, 0.0];
        let shifted: Vec<f64> = e.iter().map(|v| v + 7.5).collect();
        let a = boltzmann_distribution(&e, 1.3);
        let b = boltzmann_distribution(&shifted, 1.3);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn topology_symmetrizes_and_dedups() {
        let t = GraphTopology::new(3, vec![(1, 0), (0, 1), (2, 1)]).unwrap();
        assert_eq!(t.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(t.neighbors[1], vec![0, 2]);
        assert_eq!(t.n_directed(), 4);
        assert_eq!(t.connected_components(), 1);
    }

    #[test]
    fn self_loop_rejected() {
        assert!(GraphTopology::new(2, vec![(0, 0)]).is_err());
    }

    #[test]
    fn components_counted() {
        let t = GraphTopology::new(4, vec![(0, 1), (2, 3)]).unwrap();
        assert_eq!(t.connected_components(), 2);
    }

    #[test]
    fn gcn_edges_weights_are_symmetric_normalized() {
        let t = GraphTopology::new(2, vec![(0, 1)]).unwrap();
        let (src, dst, w) = t.gcn_edges();
        // Self loops 1/2 each, cross edges 1/2 each (deg+1 = 2 for both).
        assert_eq!(src.len(), 4);
        for k in 0..4 {
            assert!((w[k] - 0.5).abs() < 1e-15, "edge {}->{} w={}", src[k], dst[k], w[k]);
        }
    }

    #[test]
    fn empirical_distribution_is_smoothed_and_normalized() {
        let g = LandscapeGraph {
            active: vec![0, 1],
            topology: GraphTopology::new(2, vec![(0, 1)]).unwrap(),
            energy: vec![0.0, 0.0],
            occupancy: vec![9, 0],
            n_components: 1,
        };
        let p = g.empirical_distribution(1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 10.0 / 11.0).abs() < 1e-12);
        assert!(p[1] > 0.0);
    }
}
