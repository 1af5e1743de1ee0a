//! Evaluation: energy-correlation metrics against a known truth, rollout
//! divergence metrics on a uniform grid, the frequency and autoencoder
//! energy baselines, and robust alignment of predicted to true energies.

mod baselines;
mod metrics;
mod ransac;
mod report;

pub use baselines::{ape_energy, msm_energy, ApeConfig, ApeModel, MsmModel};
pub use metrics::{
    assign_node, mjs_tjs, predict_state_energies, rho_f_continuous, rho_f_discrete, rho_t,
    rollout_trajectories, transition_model, unroll, Rollout, TransitionModel,
};
pub use ransac::{ransac_align, RansacFit};
pub use report::{mean_std, EvalReport, MetricStat, SeedMetrics, SCHEMA_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid over a continuous box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bins_per_dim: usize,
    pub bounds: Vec<(f64, f64)>,
}

impl GridSpec {
    pub fn new(bins_per_dim: usize, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bins_per_dim < 2 {
            return Err(Error::Config("grid needs at least 2 bins per dimension".into()));
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("invalid grid bounds ({lo}, {hi})")));
            }
        }
        Ok(Self {
            bins_per_dim,
            bounds,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn n_cells(&self) -> usize {
        self.bins_per_dim.pow(self.dim() as u32)
    }

    /// Flat cell index of a state (clamped into the box).
    pub fn cell_of(&self, state: &[f64]) -> usize {
        let b = self.bins_per_dim;
        let mut idx = 0;
        for (v, &(lo, hi)) in state.iter().zip(&self.bounds) {
            let frac = (v - lo) / (hi - lo);
            let bin = ((frac * b as f64).floor() as isize).clamp(0, b as isize - 1) as usize;
            idx = idx * b + bin;
        }
        idx
    }

    /// Integer coordinates of a flat cell index.
    pub fn coords_of(&self, cell: usize) -> Vec<usize> {
        let b = self.bins_per_dim;
        let d = self.dim();
        let mut rem = cell;
        let mut coords = vec![0; d];
        for k in (0..d).rev() {
            coords[k] = rem % b;
            rem /= b;
        }
        coords
    }

    /// Center of a flat cell index.
    pub fn center_of(&self, cell: usize) -> Vec<f64> {
        self.coords_of(cell)
            .iter()
            .zip(&self.bounds)
            .map(|(&c, &(lo, hi))| lo + (c as f64 + 0.5) * (hi - lo) / self.bins_per_dim as f64)
            .collect()
    }
}

/// Grid used for rollout divergence metrics, covering both state kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EvalGrid {
    Continuous { spec: GridSpec },
    /// Discrete states factored into blocks, each coarsened to `bins`.
    Discrete { blocks: Vec<usize>, bins: usize },
}

impl EvalGrid {
    pub fn n_cells(&self) -> usize {
        match self {
            EvalGrid::Continuous { spec } => spec.n_cells(),
            EvalGrid::Discrete { blocks, bins } => bins.pow(blocks.len() as u32),
        }
    }

    pub fn cell_of_state(&self, state: &[f64]) -> usize {
        match self {
            EvalGrid::Continuous { spec } => spec.cell_of(state),
            EvalGrid::Discrete { .. } => panic!("continuous state on discrete grid"),
        }
    }

    pub fn cell_of_index(&self, index: usize) -> usize {
        match self {
            EvalGrid::Discrete { blocks, bins } => {
                let mut rem = index;
                let mut digits = vec![0usize; blocks.len()];
                for (k, &b) in blocks.iter().enumerate().rev() {
                    digits[k] = rem % b;
                    rem /= b;
                }
                let mut cell = 0;
                for (d, &b) in digits.iter().zip(blocks) {
                    let bin = d * bins / b;
                    cell = cell * bins + bin.min(bins - 1);
                }
                cell
            }
            EvalGrid::Continuous { .. } => panic!("discrete state on continuous grid"),
        }
    }
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Evaluation(format!(
            "pearson needs two equal-length series of >= 2 points, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Evaluation("pearson undefined for zero-variance input".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Jensen-Shannon divergence with natural logs; inputs are normalized
/// and absent support is handled by the mixture convention.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let pi = if sp > 0.0 { pi / sp } else { 0.0 };
        let qi = if sq > 0.0 { qi / sq } else { 0.0 };
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            d += 0.5 * pi * (pi / m).ln();
        }
        if qi > 0.0 {
            d += 0.5 * qi * (qi / m).ln();
        }
    }
    d.clamp(0.0, std::f64::consts::LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_of_identical_series_is_one() {
        let a = vec![1.0, 2.0, 3.5, -1.0];
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_of_negated_series_is_minus_one() {
        let a = vec![1.0, 2.0, 3.5, -1.0];
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &b).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_affine_invariance() {
        let a = vec![0.3, -1.2, 2.2, 0.8, 1.1];
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_zero_variance_is_error() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn js_identical_is_zero_and_disjoint_is_ln2() {
        let p = vec![0.2, 0.8, 0.0];
        assert_eq!(js_divergence(&p, &p), 0.0);
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        assert!((js_divergence(&a, &b) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn grid_cells_round_trip() {
        let g = GridSpec::new(5, vec![(-2.0, 2.0), (-2.0, 2.0)]).unwrap();
        assert_eq!(g.n_cells(), 25);
        for cell in 0..25 {
            let center = g.center_of(cell);
            assert_eq!(g.cell_of(&center), cell);
        }
        // Out-of-range states clamp to edge cells.
        assert_eq!(g.cell_of(&[-10.0, -10.0]), 0);
        assert_eq!(g.cell_of(&[10.0, 10.0]), 24);
    }

    #[test]
    fn discrete_grid_coarsens_blocks() {
        let g = EvalGrid::Discrete {
            blocks: vec![64, 64],
            bins: 8,
        };
        assert_eq!(g.n_cells(), 64);
        // Genotype (9, 63) -> bins (1, 7) -> cell 1*8+7.
        assert_eq!(g.cell_of_index(9 * 64 + 63), 15);
    }

    proptest! {
        #[test]
        fn js_symmetric_and_bounded(
            p in proptest::collection::vec(0.0f64..1.0, 6),
            q in proptest::collection::vec(0.0f64..1.0, 6),
        ) {
            prop_assume!(p.iter().sum::<f64>() > 1e-9 && q.iter().sum::<f64>() > 1e-9);
            let ab = js_divergence(&p, &q);
            let ba = js_divergence(&q, &p);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&ab));
        }

        #[test]
        fn pearson_invariant_under_positive_affine(
            a in proptest::collection::vec(-10.0f64..10.0, 5..30),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let b: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
            if let (Ok(r1), Ok(r2)) = (pearson(&a, &b), pearson(&a, &a)) {
                prop_assert!((r1 - r2).abs() < 1e-9);
            }
        }
    }
}
