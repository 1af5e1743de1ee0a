//! The exact probability-flow equation on the landscape graph. For node
//! `i` with neighbors `j` and energy differences `E_ji = E_j - E_i`:
//!
//! ```text
//! dp_i/dt = Σ_{E_ji>0} (E_ji + β ln(p_j/p_i)) p_j
//!         + Σ_{E_ji<0} (E_ji + β ln(p_j/p_i)) p_i
//!         + Σ_{E_ji=0} β (p_j - p_i)
//! ```
//!
//! The flow conserves total probability edge by edge, monotonically
//! decreases the free energy `F(p) = Σ p_i E_i + β Σ p_i ln p_i`, and has
//! the Boltzmann distribution `p ∝ exp(-E/β)` as its stationary point.

use crate::error::{Error, Result};
use crate::landscape::GraphTopology;

const CLAMP_FLOOR: f64 = 1e-10;

/// Right-hand side of the flow at state `p` (strictly positive entries).
pub fn exact_fpe_rhs(
    topo: &GraphTopology,
    energy: &[f64],
    p: &[f64],
    beta: f64,
) -> Result<Vec<f64>> {
    if let Some(i) = p.iter().position(|&v| v <= 0.0) {
        return Err(Error::Integration(format!(
            "p[{i}] = {} is not strictly positive; clamp before calling",
            p[i]
        )));
    }
    let mut rhs = vec![0.0; topo.n];
    rhs_into(topo, energy, p, beta, &mut rhs);
    Ok(rhs)
}

fn rhs_into(topo: &GraphTopology, energy: &[f64], p: &[f64], beta: f64, rhs: &mut [f64]) {
    rhs.iter_mut().for_each(|v| *v = 0.0);
    for (&i, &j) in topo.recv.iter().zip(&topo.send) {
        let e_ji = energy[j] - energy[i];
        let term = if e_ji > 0.0 {
            (e_ji + beta * (p[j] / p[i]).ln()) * p[j]
        } else if e_ji < 0.0 {
            (e_ji + beta * (p[j] / p[i]).ln()) * p[i]
        } else {
            beta * (p[j] - p[i])
        };
        rhs[i] += term;
    }
}

/// Free energy `F(p) = Σ p_i E_i + β Σ p_i ln p_i`.
pub fn free_energy(energy: &[f64], p: &[f64], beta: f64) -> f64 {
    p.iter()
        .zip(energy)
        .map(|(&pi, &ei)| pi * ei + beta * pi * pi.ln())
        .sum()
}

/// Explicit Euler integration with per-step clamping (entries kept at
/// least `1e-10` before logs) and renormalization. `observe` is called
/// with the state after every step (and once with the initial state).
pub fn integrate_exact_fpe_with<F>(
    topo: &GraphTopology,
    energy: &[f64],
    p0: &[f64],
    beta: f64,
    t_final: f64,
    n_steps: usize,
    mut observe: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[f64]),
{
    if p0.len() != topo.n {
        return Err(Error::Integration(format!(
            "p0 has {} entries for {} nodes",
            p0.len(),
            topo.n
        )));
    }
    if p0.iter().any(|&v| v < 0.0) || (p0.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Integration("p0 is not a probability distribution".into()));
    }
    if n_steps == 0 || t_final <= 0.0 {
        return Err(Error::Integration("t_final and n_steps must be positive".into()));
    }
    let dt = t_final / n_steps as f64;
    let mut p: Vec<f64> = p0.iter().map(|&v| v.max(CLAMP_FLOOR)).collect();
    normalize(&mut p);
    observe(0, &p);
    let mut rhs = vec![0.0; topo.n];
    for step in 1..=n_steps {
        rhs_into(topo, energy, &p, beta, &mut rhs);
        for (pi, &ri) in p.iter_mut().zip(&rhs) {
            *pi += dt * ri;
        }
        if let Some(i) = p.iter().position(|&v| v < -1e-9) {
            return Err(Error::Integration(format!(
                "negative probability {} at node {i} on step {step}; \
                 increase n_steps (smaller dt)",
                p[i]
            )));
        }
        for pi in p.iter_mut() {
            *pi = pi.max(CLAMP_FLOOR);
        }
        normalize(&mut p);
        observe(step, &p);
    }
    Ok(p)
}

/// [`integrate_exact_fpe_with`] without observation.
pub fn integrate_exact_fpe(
    topo: &GraphTopology,
    energy: &[f64],
    p0: &[f64],
    beta: f64,
    t_final: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    integrate_exact_fpe_with(topo, energy, p0, beta, t_final, n_steps, |_, _| {})
}

fn normalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::boltzmann_distribution;
    use crate::numerics::rng_stream;
    use rand::Rng;
    use rand_chacha::ChaCha12Rng;

    fn total_variation(a: &[f64], b: &[f64]) -> f64 {
        0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }

    pub(crate) fn random_connected_graph(
        rng: &mut ChaCha12Rng,
        n_min: usize,
        n_max: usize,
    ) -> GraphTopology {
        let n = rng.random_range(n_min..=n_max);
        let mut edges = Vec::new();
        // Random spanning tree, then extra edges.
        for i in 1..n {
            let j = rng.random_range(0..i);
            edges.push((j, i));
        }
        let extra = rng.random_range(0..=n);
        for _ in 0..extra {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        GraphTopology::new(n, edges).unwrap()
    }

    fn random_distribution(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
        let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }

    #[test]
    fn symmetric_two_node_equilibrium_is_stationary() {
        let topo = GraphTopology::new(2, vec![(0, 1)]).unwrap();
        let rhs = exact_fpe_rhs(&topo, &[1.0, 1.0], &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(rhs, vec![0.0, 0.0]);
    }

    #[test]
    fn boltzmann_is_a_fixed_point() {
        let mut rng = rng_stream(21, "fpe-fixed-point", 0);
        for trial in 0..100 {
            let topo = random_connected_graph(&mut rng, 2, 20);
            let energy: Vec<f64> = (0..topo.n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let beta = 1.0;
            let p = boltzmann_distribution(&energy, beta);
            let rhs = exact_fpe_rhs(&topo, &energy, &p, beta).unwrap();
            let max = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max < 1e-10, "trial {trial}: |rhs| = {max}");
        }
    }

    #[test]
    fn probability_is_conserved() {
        let mut rng = rng_stream(22, "fpe-conservation", 0);
        for _ in 0..100 {
            let topo = random_connected_graph(&mut rng, 2, 20);
            let energy: Vec<f64> = (0..topo.n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = random_distribution(&mut rng, topo.n);
            let rhs = exact_fpe_rhs(&topo, &energy, &p, rng.random_range(0.2..2.0)).unwrap();
            let total: f64 = rhs.iter().sum();
            assert!(total.abs() < 1e-12, "sum dp/dt = {total}");
        }
    }

    #[test]
    fn nonpositive_probability_rejected() {
        let topo = GraphTopology::new(2, vec![(0, 1)]).unwrap();
        assert!(exact_fpe_rhs(&topo, &[0.0, 0.0], &[1.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn uniform_energy_relaxes_to_uniform() {
        let topo = GraphTopology::new(4, vec![(0, 1), (1, 2), (2, 3)]).unwrap();
        let energy = vec![0.5; 4];
        let p0 = vec![0.97, 0.01, 0.01, 0.01];
        let p = integrate_exact_fpe(&topo, &energy, &p0, 1.0, 40.0, 40_000).unwrap();
        let uniform = vec![0.25; 4];
        assert!(total_variation(&p, &uniform) < 1e-3);
    }

    #[test]
    fn random_graphs_relax_to_boltzmann_with_monotone_free_energy() {
        let mut rng = rng_stream(23, "fpe-relax", 0);
        for trial in 0..5 {
            let topo = random_connected_graph(&mut rng, 4, 12);
            let energy: Vec<f64> = (0..topo.n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let beta = 1.0;
            let target = boltzmann_distribution(&energy, beta);
            let p0 = random_distribution(&mut rng, topo.n);
            let mut prev_f = f64::INFINITY;
            let mut max_uptick = 0.0f64;
            let p = integrate_exact_fpe_with(
                &topo,
                &energy,
                &p0,
                beta,
                60.0,
                60_000,
                |_, p| {
                    let f = free_energy(&energy, p, beta);
                    max_uptick = max_uptick.max(f - prev_f);
                    prev_f = f;
                },
            )
            .unwrap();
            assert!(
                max_uptick < 1e-8,
                "trial {trial}: free energy rose by {max_uptick}"
            );
            let tv = total_variation(&p, &target);
            assert!(tv < 1e-3, "trial {trial}: TV = {tv}");
        }
    }

    #[test]
    fn mass_stays_normalized_every_step() {
        let topo = GraphTopology::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let energy = vec![0.0, -1.0, 1.0];
        let p0 = vec![1.0 / 3.0; 3];
        integrate_exact_fpe_with(&topo, &energy, &p0, 1.0, 5.0, 5000, |_, p| {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        })
        .unwrap();
    }

    #[test]
    fn energy_shift_leaves_rhs_unchanged() {
        let mut rng = rng_stream(24, "fpe-shift", 0);
        let topo = random_connected_graph(&mut rng, 3, 10);
        let energy: Vec<f64> = (0..topo.n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let shifted: Vec<f64> = energy.iter().map(|e| e + 3.25).collect();
        let p = random_distribution(&mut rng, topo.n);
        let a = exact_fpe_rhs(&topo, &energy, &p, 1.0).unwrap();
        let b = exact_fpe_rhs(&topo, &shifted, &p, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
