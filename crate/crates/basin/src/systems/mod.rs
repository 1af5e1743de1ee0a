//! Trajectory sources and observation transforms: simulators for the two
//! built-in benchmark systems, CSV ingestion for externally produced
//! trajectories, plus noise injection and time-delay embedding.

mod csv_io;
mod prinz;
mod sswm;
mod transforms;

pub use csv_io::{load_trajectories_csv, write_trajectories_csv, CsvSchema};
pub use prinz::{prinz_gradient, prinz_potential, simulate_prinz, PrinzConfig};
pub use sswm::{
    generate_fitness_landscape, kimura_fixation_probability, kimura_fixation_probability_with,
    simulate_sswm, single_locus_mutants, FitnessLandscape, SignConvention, SswmConfig, GENOTYPES,
    LOCI, VARIANTS_PER_LOCUS,
};
pub use transforms::{add_observation_noise, delay_embed};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed states of one trajectory: either real vectors or discrete
/// state indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum States {
    /// Row-major `len × dim` buffer.
    Continuous { dim: usize, values: Vec<f64> },
    /// Indices into a state space of the given size.
    Discrete { space: usize, values: Vec<usize> },
}

/// Time-ordered observations of a system plus the lag time (in raw steps)
/// at which transitions are modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: States,
    pub lag_time: usize,
    pub system_id: String,
}

impl Trajectory {
    pub fn continuous(dim: usize, values: Vec<f64>, lag_time: usize, system_id: &str) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::Data(format!(
                "continuous trajectory length {} is not a multiple of dim {}",
                values.len(),
                dim
            )));
        }
        if values.len() / dim < 2 {
            return Err(Error::Data("trajectory must have length >= 2".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite state value".into()));
        }
        Ok(Self {
            states: States::Continuous { dim, values },
            lag_time,
            system_id: system_id.to_string(),
        })
    }

    pub fn discrete(space: usize, values: Vec<usize>, lag_time: usize, system_id: &str) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Data("trajectory must have length >= 2".into()));
        }
        if let Some(&bad) = values.iter().find(|&&v| v >= space) {
            return Err(Error::Data(format!(
                "discrete state {bad} outside state space of size {space}"
            )));
        }
        Ok(Self {
            states: States::Discrete { space, values },
            lag_time,
            system_id: system_id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        match &self.states {
            States::Continuous { dim, values } => values.len() / dim,
            States::Discrete { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match &self.states {
            States::Continuous { dim, .. } => *dim,
            States::Discrete { .. } => 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.states, States::Discrete { .. })
    }

    /// Continuous state at time `t`; panics on discrete trajectories.
    pub fn state(&self, t: usize) -> &[f64] {
        match &self.states {
            States::Continuous { dim, values } => &values[t * dim..(t + 1) * dim],
            States::Discrete { .. } => panic!("state() on discrete trajectory"),
        }
    }

    /// Discrete state at time `t`; panics on continuous trajectories.
    pub fn index(&self, t: usize) -> usize {
        match &self.states {
            States::Discrete { values, .. } => values[t],
            States::Continuous { .. } => panic!("index() on continuous trajectory"),
        }
    }
}

/// Split trajectories into train/test at the trajectory level with the
/// given train fraction (rounded up, at least one test trajectory when
/// there are two or more).
pub fn split_trajectories(
    trajs: Vec<Trajectory>,
    train_fraction: f64,
) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let n = trajs.len();
    let mut n_train = ((n as f64) * train_fraction).round() as usize;
    n_train = n_train.clamp(1, n);
    if n_train == n && n >= 2 {
        n_train = n - 1;
    }
    let mut train = trajs;
    let test = train.split_off(n_train);
    (train, test)
}
