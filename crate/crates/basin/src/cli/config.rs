//! Experiment configuration: one TOML file fully determines a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codebook::SystemKind;
use crate::error::{Error, Result};
use crate::evaluation::{EvalGrid, GridSpec};
use crate::systems::{PrinzConfig, SignConvention, SswmConfig};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemChoice {
    Prinz,
    Sswm,
    Csv,
}

impl std::fmt::Display for SystemChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SystemChoice::Prinz => write!(f, "prinz"),
            SystemChoice::Sswm => write!(f, "sswm"),
            SystemChoice::Csv => write!(f, "csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrinzSection {
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub noise_sigma: f64,
    pub drift_sign: f64,
}

impl Default for PrinzSection {
    fn default() -> Self {
        let c = PrinzConfig::default();
        Self {
            n_trajectories: c.n_trajectories,
            n_steps: c.n_steps,
            dt: c.dt,
            noise_sigma: c.noise_sigma,
            drift_sign: c.drift_sign,
        }
    }
}

impl PrinzSection {
    pub fn to_config(&self, seed: u64) -> PrinzConfig {
        PrinzConfig {
            n_trajectories: self.n_trajectories,
            n_steps: self.n_steps,
            dt: self.dt,
            noise_sigma: self.noise_sigma,
            seed,
            drift_sign: self.drift_sign,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SswmSection {
    pub population_size: u64,
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub n_bumps: usize,
    pub kimura_sign_convention: SignConvention,
}

impl Default for SswmSection {
    fn default() -> Self {
        let c = SswmConfig::default();
        Self {
            population_size: c.population_size,
            n_trajectories: c.n_trajectories,
            n_steps: c.n_steps,
            n_bumps: 5,
            kimura_sign_convention: c.kimura_sign_convention,
        }
    }
}

impl SswmSection {
    pub fn to_config(&self, seed: u64) -> SswmConfig {
        SswmConfig {
            population_size: self.population_size,
            n_trajectories: self.n_trajectories,
            n_steps: self.n_steps,
            seed,
            kimura_sign_convention: self.kimura_sign_convention,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CsvKind {
    #[default]
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CsvSection {
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub kind: CsvKind,
    pub dim: Option<usize>,
    pub state_space: Option<usize>,
    /// Optional per-locus factorization for discrete inputs.
    pub blocks: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    /// Grid bins per dimension for continuous rollout metrics and rho_F.
    pub grid_bins: usize,
    /// Grid bounds per dimension (shared across dimensions).
    pub grid_lo: f64,
    pub grid_hi: f64,
    /// Coarsening bins per locus for discrete rollout metrics.
    pub discrete_bins: usize,
    /// Reference/model rollouts per evaluation.
    pub n_rollouts: usize,
    /// Rollout horizon in lag steps; 0 derives it from the test length.
    pub rollout_steps: usize,
    /// Frequency-baseline grid bins (continuous systems).
    pub msm_bins: usize,
    /// Frequency-baseline bins per locus (discrete systems).
    pub msm_discrete_bins: usize,
    pub ape_hidden: usize,
    pub ape_epochs: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            grid_bins: 5,
            grid_lo: -2.0,
            grid_hi: 2.0,
            discrete_bins: 8,
            n_rollouts: 100,
            rollout_steps: 0,
            msm_bins: 5,
            msm_discrete_bins: 8,
            ape_hidden: 64,
            ape_epochs: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    DataSize,
    K,
    Noise,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepAxis::DataSize => write!(f, "data_size"),
            SweepAxis::K => write!(f, "k"),
            SweepAxis::Noise => write!(f, "noise"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: None,
            values: Vec::new(),
        }
    }
}

/// A full experiment: system, dataset parameters, training parameters,
/// evaluation parameters, output location and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub system: SystemChoice,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub prinz: PrinzSection,
    pub sswm: SswmSection,
    pub csv: CsvSection,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemChoice::Prinz,
            output_dir: PathBuf::from("runs/experiment"),
            seeds: vec![0],
            prinz: PrinzSection::default(),
            sswm: SswmSection::default(),
            csv: CsvSection::default(),
            training: TrainConfig::default(),
            evaluation: EvaluationSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.apply_system_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    /// System-specific defaults applied when the user left the generic
    /// defaults in place.
    pub fn apply_system_defaults(&mut self) {
        if self.system == SystemChoice::Sswm {
            let generic = TrainConfig::default();
            if self.training.lag_time == generic.lag_time {
                self.training.lag_time = 10;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        self.training.validate()?;
        if self.system == SystemChoice::Csv && self.csv.train_path.is_none() {
            return Err(Error::Config("csv system requires csv.train_path".into()));
        }
        if self.evaluation.grid_bins < 2 {
            return Err(Error::Config("evaluation.grid_bins must be >= 2".into()));
        }
        Ok(())
    }

    /// The model's input/output description for this system.
    pub fn system_kind(&self) -> Result<SystemKind> {
        match self.system {
            SystemChoice::Prinz => Ok(SystemKind::Continuous { dim: 2 }),
            SystemChoice::Sswm => Ok(SystemKind::Discrete {
                space: crate::systems::GENOTYPES,
                blocks: vec![
                    crate::systems::VARIANTS_PER_LOCUS,
                    crate::systems::VARIANTS_PER_LOCUS,
                ],
            }),
            SystemChoice::Csv => match self.csv.kind {
                CsvKind::Continuous => {
                    let dim = self.csv.dim.ok_or_else(|| {
                        Error::Config("csv.dim required for continuous csv data".into())
                    })?;
                    Ok(SystemKind::Continuous { dim })
                }
                CsvKind::Discrete => {
                    let space = self.csv.state_space.ok_or_else(|| {
                        Error::Config("csv.state_space required for discrete csv data".into())
                    })?;
                    let blocks = self.csv.blocks.clone().unwrap_or_else(|| vec![space]);
                    if blocks.iter().product::<usize>() != space {
                        return Err(Error::Config(
                            "csv.blocks must multiply to csv.state_space".into(),
                        ));
                    }
                    Ok(SystemKind::Discrete { space, blocks })
                }
            },
        }
    }

    /// Grid for rollout metrics (and continuous rho_F).
    pub fn eval_grid(&self) -> Result<EvalGrid> {
        match self.system {
            SystemChoice::Prinz => Ok(EvalGrid::Continuous {
                spec: self.continuous_grid(self.evaluation.grid_bins)?,
            }),
            SystemChoice::Sswm => Ok(EvalGrid::Discrete {
                blocks: vec![
                    crate::systems::VARIANTS_PER_LOCUS,
                    crate::systems::VARIANTS_PER_LOCUS,
                ],
                bins: self.evaluation.discrete_bins,
            }),
            SystemChoice::Csv => match self.system_kind()? {
                SystemKind::Continuous { dim } => Ok(EvalGrid::Continuous {
                    spec: GridSpec::new(
                        self.evaluation.grid_bins,
                        vec![(self.evaluation.grid_lo, self.evaluation.grid_hi); dim],
                    )?,
                }),
                SystemKind::Discrete { blocks, .. } => Ok(EvalGrid::Discrete {
                    blocks,
                    bins: self.evaluation.discrete_bins,
                }),
            },
        }
    }

    pub fn continuous_grid(&self, bins: usize) -> Result<GridSpec> {
        let dim = match self.system_kind()? {
            SystemKind::Continuous { dim } => dim,
            SystemKind::Discrete { .. } => {
                return Err(Error::Config("continuous grid on a discrete system".into()))
            }
        };
        GridSpec::new(
            bins,
            vec![(self.evaluation.grid_lo, self.evaluation.grid_hi); dim],
        )
    }

    /// Stable hash of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed_{seed}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_parses_with_defaults() {
        let cfg: ExperimentConfig = toml::from_str("system = \"prinz\"\n").unwrap();
        assert_eq!(cfg.system, SystemChoice::Prinz);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.training.k, 200);
    }

    #[test]
    fn sections_override_fields() {
        let cfg: ExperimentConfig = toml::from_str(
            "system = \"sswm\"\nseeds = [1, 2]\n\n[training]\nk = 50\n\n[sswm]\nn_bumps = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.training.k, 50);
        assert_eq!(cfg.sswm.n_bumps, 3);
        assert_eq!(cfg.seeds, vec![1, 2]);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.training.k = 999;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn sswm_defaults_adjust_lag_time() {
        let mut cfg: ExperimentConfig = toml::from_str("system = \"sswm\"\n").unwrap();
        cfg.apply_system_defaults();
        assert_eq!(cfg.training.lag_time, 10);
    }

    #[test]
    fn csv_requires_paths() {
        let cfg: ExperimentConfig = toml::from_str("system = \"csv\"\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
