//! The five experiment commands: `simulate`, `train`, `evaluate`,
//! `baseline`, `sweep`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cli::config::{CsvKind, ExperimentConfig, SweepAxis, SystemChoice};
use crate::codebook::SystemKind;
use crate::error::{Error, Result};
use crate::evaluation::{
    ape_energy, mjs_tjs, msm_energy, rho_f_continuous, rho_f_discrete, rho_t,
    rollout_trajectories, transition_model, ApeConfig, EvalGrid, EvalReport, SeedMetrics,
};
use crate::persist::{load_checkpoint, save_checkpoint};
use crate::systems::{
    add_observation_noise, generate_fitness_landscape, load_trajectories_csv, prinz_potential,
    simulate_prinz, simulate_sswm, split_trajectories, write_trajectories_csv, CsvSchema,
    FitnessLandscape, States, Trajectory,
};
use crate::training::{train_pipeline, TrainedModel};

const TRAIN_FRACTION: f64 = 0.7;

/// In-memory dataset for one experiment.
pub struct Dataset {
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub landscape: Option<FitnessLandscape>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulateMetadata {
    schema_version: u32,
    system: String,
    seed: u64,
    config_hash: String,
    n_train: usize,
    n_test: usize,
    lag_time: usize,
    sswm_n_bumps: Option<usize>,
}

/// Generate (or load, for csv systems) the dataset in memory.
pub fn generate_dataset(cfg: &ExperimentConfig, data_seed: u64) -> Result<Dataset> {
    match cfg.system {
        SystemChoice::Prinz => {
            let trajs = simulate_prinz(&cfg.prinz.to_config(data_seed))?;
            let (train, test) = split_trajectories(trajs, TRAIN_FRACTION);
            Ok(Dataset {
                train,
                test,
                landscape: None,
            })
        }
        SystemChoice::Sswm => {
            let landscape = generate_fitness_landscape(data_seed, cfg.sswm.n_bumps)?;
            let trajs = simulate_sswm(&cfg.sswm.to_config(data_seed), &landscape)?;
            let (train, test) = split_trajectories(trajs, TRAIN_FRACTION);
            Ok(Dataset {
                train,
                test,
                landscape: Some(landscape),
            })
        }
        SystemChoice::Csv => {
            let schema = csv_schema(cfg)?;
            let train_path = cfg.csv.train_path.as_ref().unwrap();
            let lag = cfg.training.lag_time;
            let all = load_trajectories_csv(train_path, &schema, lag, "csv")?;
            if let Some(test_path) = &cfg.csv.test_path {
                let test = load_trajectories_csv(test_path, &schema, lag, "csv")?;
                Ok(Dataset {
                    train: all,
                    test,
                    landscape: None,
                })
            } else {
                let (train, test) = split_trajectories(all, TRAIN_FRACTION);
                Ok(Dataset {
                    train,
                    test,
                    landscape: None,
                })
            }
        }
    }
}

fn csv_schema(cfg: &ExperimentConfig) -> Result<CsvSchema> {
    Ok(match cfg.csv.kind {
        CsvKind::Continuous => CsvSchema::Continuous { dim: cfg.csv.dim },
        CsvKind::Discrete => CsvSchema::Discrete {
            state_space: cfg.csv.state_space.ok_or_else(|| {
                Error::Config("csv.state_space required for discrete csv data".into())
            })?,
        },
    })
}

/// `simulate`: write per-trajectory CSVs in a 7:3 train/test split plus
/// metadata (and the fitness table for the evolutionary system).
pub fn cmd_simulate(cfg: &ExperimentConfig, data_seed: u64) -> Result<PathBuf> {
    let ds = generate_dataset(cfg, data_seed)?;
    let dir = cfg.data_dir();
    let train_dir = dir.join("train");
    let test_dir = dir.join("test");
    fs::create_dir_all(&train_dir)?;
    fs::create_dir_all(&test_dir)?;
    for (k, t) in ds.train.iter().enumerate() {
        write_trajectories_csv(
            train_dir.join(format!("traj_{k:05}.csv")),
            std::slice::from_ref(t),
            k as u64,
        )?;
    }
    for (k, t) in ds.test.iter().enumerate() {
        write_trajectories_csv(
            test_dir.join(format!("traj_{k:05}.csv")),
            std::slice::from_ref(t),
            (ds.train.len() + k) as u64,
        )?;
    }
    if let Some(land) = &ds.landscape {
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("fitness_landscape.csv"))?);
        writeln!(f, "genotype,fitness")?;
        for (g, v) in land.fitness.iter().enumerate() {
            writeln!(f, "{g},{v:.16e}")?;
        }
        f.flush()?;
    }
    let meta = SimulateMetadata {
        schema_version: 1,
        system: cfg.system.to_string(),
        seed: data_seed,
        config_hash: cfg.hash(),
        n_train: ds.train.len(),
        n_test: ds.test.len(),
        lag_time: cfg.training.lag_time,
        sswm_n_bumps: (cfg.system == SystemChoice::Sswm).then_some(cfg.sswm.n_bumps),
    };
    fs::write(
        dir.join("metadata.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(dir)
}

/// Load the on-disk dataset written by `cmd_simulate`.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = cfg.data_dir();
    if !dir.join("metadata.json").exists() {
        return Err(Error::Data(format!(
            "no dataset at {}; run `basin simulate` first",
            dir.display()
        )));
    }
    let schema = match cfg.system_kind()? {
        SystemKind::Continuous { dim } => CsvSchema::Continuous { dim: Some(dim) },
        SystemKind::Discrete { space, .. } => CsvSchema::Discrete { state_space: space },
    };
    let lag = cfg.training.lag_time;
    let system_id = cfg.system.to_string();
    let train = load_trajectories_csv(dir.join("train"), &schema, lag, &system_id)?;
    let test = load_trajectories_csv(dir.join("test"), &schema, lag, &system_id)?;
    let landscape = if cfg.system == SystemChoice::Sswm {
        Some(load_fitness_csv(&dir.join("fitness_landscape.csv"))?)
    } else {
        None
    };
    Ok(Dataset {
        train,
        test,
        landscape,
    })
}

fn load_fitness_csv(path: &Path) -> Result<FitnessLandscape> {
    let text = fs::read_to_string(path)?;
    let mut fitness = vec![0.0; crate::systems::GENOTYPES];
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (g, v) = line.split_once(',').ok_or_else(|| Error::Csv {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected genotype,fitness".into(),
        })?;
        let g: usize = g.parse().map_err(|e| Error::Csv {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("bad genotype: {e}"),
        })?;
        fitness[g] = v.parse().map_err(|e| Error::Csv {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("bad fitness: {e}"),
        })?;
    }
    Ok(FitnessLandscape {
        n_loci: crate::systems::LOCI,
        alleles_per_locus: crate::systems::VARIANTS_PER_LOCUS,
        fitness,
        seed: 0,
    })
}

/// `train`: run both stages for every seed, writing a JSONL loss log and
/// a checkpoint per seed.
pub fn cmd_train(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(cfg)?;
    let kind = cfg.system_kind()?;
    let results: Vec<Result<PathBuf>> = seeds
        .par_iter()
        .map(|&seed| train_one_seed(cfg, &ds, kind.clone(), seed))
        .collect();
    results.into_iter().collect()
}

fn train_one_seed(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    kind: SystemKind,
    seed: u64,
) -> Result<PathBuf> {
    let mut tc = cfg.training.clone();
    tc.seed = seed;
    let model = train_pipeline(&ds.train, kind, &tc)?;
    let dir = cfg.seed_dir(seed);
    fs::create_dir_all(&dir)?;
    let mut log = std::io::BufWriter::new(fs::File::create(dir.join("training_log.jsonl"))?);
    for row in &model.losses {
        writeln!(log, "{}", serde_json::to_string(row)?)?;
    }
    log.flush()?;
    let ckpt = dir.join("checkpoint");
    save_checkpoint(&ckpt, &model)?;
    Ok(ckpt)
}

/// Truth oracle for a system, if one exists.
pub enum Truth {
    Prinz,
    Fitness(FitnessLandscape),
    None,
}

impl Truth {
    fn of_state(&self, traj: &Trajectory, t: usize) -> f64 {
        match self {
            Truth::Prinz => {
                let s = traj.state(t);
                prinz_potential([s[0], s[1]])
            }
            Truth::Fitness(land) => land.fitness_of(traj.index(t)),
            Truth::None => f64::NAN,
        }
    }

    fn available(&self) -> bool {
        !matches!(self, Truth::None)
    }
}


/// Evaluate one trained model against a dataset.
pub fn evaluate_model(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    ds: &Dataset,
    eval_seed: u64,
    timings: bool,
) -> Result<SeedMetrics> {
    let start = Instant::now();
    let truth = match (&cfg.system, &ds.landscape) {
        (SystemChoice::Prinz, _) => Truth::Prinz,
        (SystemChoice::Sswm, Some(land)) => Truth::Fitness(land.clone()),
        _ => Truth::None,
    };

    let (rho_t_val, rho_f_val) = if truth.available() {
        let rt = rho_t(model, &ds.test, |traj, t| truth.of_state(traj, t))?;
        let rf = match &cfg.system {
            SystemChoice::Prinz => Some(rho_f_continuous(
                model,
                &cfg.continuous_grid(cfg.evaluation.grid_bins)?,
                |s| prinz_potential([s[0], s[1]]),
            )?),
            SystemChoice::Sswm => {
                let Truth::Fitness(land) = &truth else { unreachable!() };
                Some(rho_f_discrete(model, |g| land.fitness_of(g))?)
            }
            SystemChoice::Csv => None,
        };
        (Some(rt), rf)
    } else {
        (None, None)
    };

    // Rollout metrics: reference trajectories from the true dynamics when
    // a simulator exists, otherwise the held-out test trajectories.
    let tau = cfg.training.lag_time;
    let horizon = if cfg.evaluation.rollout_steps > 0 {
        cfg.evaluation.rollout_steps
    } else {
        (ds.test.iter().map(|t| t.len()).min().unwrap_or(2) - 1) / tau.max(1)
    };
    let horizon = horizon.max(1);
    let m = cfg.evaluation.n_rollouts;
    let references: Vec<Trajectory> = match cfg.system {
        SystemChoice::Prinz => {
            let mut pc = cfg.prinz.to_config(eval_seed ^ 0x5eed_0001);
            pc.n_trajectories = m;
            pc.n_steps = horizon * tau;
            simulate_prinz(&pc)?
        }
        SystemChoice::Sswm => {
            let land = ds.landscape.as_ref().expect("sswm landscape present");
            let mut sc = cfg.sswm.to_config(eval_seed ^ 0x5eed_0002);
            sc.n_trajectories = m;
            sc.n_steps = horizon * tau;
            simulate_sswm(&sc, land)?
        }
        SystemChoice::Csv => ds.test.clone(),
    };
    let tm = transition_model(model)?;
    let predicted = rollout_trajectories(model, &tm, &references, horizon, tau, eval_seed);
    let grid = cfg.eval_grid()?;
    let (mjs, tjs) = mjs_tjs(&references, &predicted, &grid, tau)?;

    Ok(SeedMetrics {
        seed: model.config.seed,
        rho_t: rho_t_val,
        rho_f: rho_f_val,
        mjs: Some(mjs),
        tjs: Some(tjs),
        active_codewords: Some(model.graph.n_nodes()),
        runtime_seconds: if timings {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    })
}

/// `evaluate`: compute metrics for every seed's checkpoint and write the
/// aggregate report.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    checkpoint: Option<&Path>,
    timings: bool,
) -> Result<EvalReport> {
    let ds = load_dataset(cfg)?;
    let per_seed: Vec<SeedMetrics> = if let Some(path) = checkpoint {
        let model = load_checkpoint(path)?;
        vec![evaluate_model(cfg, &model, &ds, model.config.seed, timings)?]
    } else {
        let results: Vec<Result<SeedMetrics>> = seeds
            .par_iter()
            .map(|&seed| {
                let model = load_checkpoint(cfg.seed_dir(seed).join("checkpoint"))?;
                evaluate_model(cfg, &model, &ds, seed, timings)
            })
            .collect();
        results.into_iter().collect::<Result<Vec<_>>>()?
    };
    let mut notices = Vec::new();
    if per_seed.iter().any(|s| s.rho_t.is_none()) {
        notices.push(
            "no energy truth for this system; correlation metrics omitted".to_string(),
        );
    }
    let report = EvalReport::aggregate(
        &cfg.system.to_string(),
        "landscape",
        &cfg.hash(),
        cfg.training.lag_time,
        per_seed,
        notices,
    );
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(
        cfg.output_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

/// `baseline`: the frequency or autoencoder energy baseline on identical
/// splits and grids.
pub fn cmd_baseline(
    cfg: &ExperimentConfig,
    kind: &str,
    seeds: &[u64],
    timings: bool,
) -> Result<EvalReport> {
    let ds = load_dataset(cfg)?;
    let per_seed = match kind {
        "msm" => baseline_msm(cfg, &ds, seeds, timings)?,
        "ape" => baseline_ape(cfg, &ds, seeds, timings)?,
        other => {
            return Err(Error::Config(format!(
                "unknown baseline `{other}`; valid kinds: msm, ape"
            )))
        }
    };
    let report = EvalReport::aggregate(
        &cfg.system.to_string(),
        &format!("baseline_{kind}"),
        &cfg.hash(),
        cfg.training.lag_time,
        per_seed,
        Vec::new(),
    );
    fs::create_dir_all(&cfg.output_dir)?;
    fs::write(
        cfg.output_dir.join(format!("baseline_{kind}.json")),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

fn msm_grid(cfg: &ExperimentConfig) -> Result<EvalGrid> {
    Ok(match cfg.system_kind()? {
        SystemKind::Continuous { dim } => EvalGrid::Continuous {
            spec: crate::evaluation::GridSpec::new(
                cfg.evaluation.msm_bins,
                vec![(cfg.evaluation.grid_lo, cfg.evaluation.grid_hi); dim],
            )?,
        },
        SystemKind::Discrete { blocks, .. } => EvalGrid::Discrete {
            blocks,
            bins: cfg.evaluation.msm_discrete_bins,
        },
    })
}

pub fn baseline_msm(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    seeds: &[u64],
    timings: bool,
) -> Result<Vec<SeedMetrics>> {
    let start = Instant::now();
    let grid = msm_grid(cfg)?;
    let msm = msm_energy(&ds.train, &grid)?;
    let truth = match (&cfg.system, &ds.landscape) {
        (SystemChoice::Prinz, _) => Truth::Prinz,
        (SystemChoice::Sswm, Some(land)) => Truth::Fitness(land.clone()),
        _ => Truth::None,
    };
    let (rt, rf) = if truth.available() {
        let mut pred = Vec::new();
        let mut actual = Vec::new();
        for t in &ds.test {
            for i in 0..t.len() {
                let p = match &t.states {
                    States::Continuous { .. } => msm.energy_of_state(t.state(i)),
                    States::Discrete { .. } => msm.energy_of_index(t.index(i)),
                };
                pred.push(p);
                actual.push(truth.of_state(t, i));
            }
        }
        let rt = crate::evaluation::pearson(&pred, &actual)?;
        let rf = match &cfg.system {
            SystemChoice::Prinz => {
                let eval_grid = cfg.continuous_grid(cfg.evaluation.grid_bins)?;
                let pred: Vec<f64> = (0..eval_grid.n_cells())
                    .map(|c| msm.energy_of_state(&eval_grid.center_of(c)))
                    .collect();
                let actual: Vec<f64> = (0..eval_grid.n_cells())
                    .map(|c| {
                        let s = eval_grid.center_of(c);
                        prinz_potential([s[0], s[1]])
                    })
                    .collect();
                Some(crate::evaluation::pearson(&pred, &actual)?)
            }
            SystemChoice::Sswm => {
                let Truth::Fitness(land) = &truth else { unreachable!() };
                let pred: Vec<f64> = (0..crate::systems::GENOTYPES)
                    .map(|g| msm.energy_of_index(g))
                    .collect();
                let actual: Vec<f64> = (0..crate::systems::GENOTYPES)
                    .map(|g| land.fitness_of(g))
                    .collect();
                Some(crate::evaluation::pearson(&pred, &actual)?)
            }
            SystemChoice::Csv => None,
        };
        (Some(rt), rf)
    } else {
        (None, None)
    };
    let runtime = if timings {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    Ok(seeds
        .iter()
        .map(|&seed| SeedMetrics {
            seed,
            rho_t: rt,
            rho_f: rf,
            mjs: None,
            tjs: None,
            active_codewords: None,
            runtime_seconds: runtime,
        })
        .collect())
}

pub fn baseline_ape(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    seeds: &[u64],
    timings: bool,
) -> Result<Vec<SeedMetrics>> {
    if cfg.system_kind()?.is_discrete() {
        return Err(Error::Config(
            "the autoencoder baseline applies to continuous systems".into(),
        ));
    }
    let truth = match cfg.system {
        SystemChoice::Prinz => Truth::Prinz,
        _ => Truth::None,
    };
    seeds
        .par_iter()
        .map(|&seed| {
            let start = Instant::now();
            let ape = ape_energy(
                &ds.train,
                &ApeConfig {
                    hidden: cfg.evaluation.ape_hidden,
                    epochs: cfg.evaluation.ape_epochs,
                    seed,
                    ..Default::default()
                },
            )?;
            let (rt, rf) = if truth.available() {
                let mut pred = Vec::new();
                let mut actual = Vec::new();
                for t in &ds.test {
                    for i in 0..t.len() {
                        pred.push(ape.physics_energy_of(t.state(i)));
                        actual.push(truth.of_state(t, i));
                    }
                }
                let rt = crate::evaluation::pearson(&pred, &actual)?;
                let eval_grid = cfg.continuous_grid(cfg.evaluation.grid_bins)?;
                let pred: Vec<f64> = (0..eval_grid.n_cells())
                    .map(|c| ape.physics_energy_of(&eval_grid.center_of(c)))
                    .collect();
                let actual: Vec<f64> = (0..eval_grid.n_cells())
                    .map(|c| {
                        let s = eval_grid.center_of(c);
                        prinz_potential([s[0], s[1]])
                    })
                    .collect();
                (
                    Some(rt),
                    Some(crate::evaluation::pearson(&pred, &actual)?),
                )
            } else {
                (None, None)
            };
            Ok(SeedMetrics {
                seed,
                rho_t: rt,
                rho_f: rf,
                mjs: None,
                tjs: None,
                active_codewords: None,
                runtime_seconds: if timings {
                    start.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            })
        })
        .collect()
}

/// `sweep`: train and evaluate across one axis, emitting a tidy CSV of
/// `(axis, seed, metric, value)` rows.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, timings: bool) -> Result<PathBuf> {
    if cfg.sweep.values.is_empty() {
        return Err(Error::Config("sweep.values must be non-empty".into()));
    }
    if cfg.system == SystemChoice::Csv && axis != SweepAxis::Noise {
        // data_size still works on csv; K too. Only noise needs continuous.
    }
    let jobs: Vec<(f64, u64)> = cfg
        .sweep
        .values
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let rows: Vec<Result<Vec<(f64, u64, &'static str, f64)>>> = jobs
        .par_iter()
        .map(|&(value, seed)| sweep_point(cfg, axis, value, seed, timings))
        .collect();
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join(format!("sweep_{axis}.csv"));
    let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
    writeln!(f, "axis,seed,metric,value")?;
    for (axis_value, seed, metric, value) in all {
        writeln!(f, "{axis_value},{seed},{metric},{value}")?;
    }
    f.flush()?;
    Ok(path)
}

fn sweep_point(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
    seed: u64,
    timings: bool,
) -> Result<Vec<(f64, u64, &'static str, f64)>> {
    let mut point_cfg = cfg.clone();
    let mut ds = generate_dataset(&point_cfg, seed)?;
    match axis {
        SweepAxis::K => {
            point_cfg.training.k = value.round() as usize;
        }
        SweepAxis::DataSize => {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::Config(format!(
                    "data_size fraction must be in (0, 1], got {value}"
                )));
            }
            for t in ds.train.iter_mut() {
                truncate_trajectory(t, value);
            }
        }
        SweepAxis::Noise => {
            ds.train = add_observation_noise(&ds.train, value, seed ^ 0x4015e)?;
            ds.test = add_observation_noise(&ds.test, value, seed ^ 0x401f)?;
        }
    }
    let kind = point_cfg.system_kind()?;
    let mut tc = point_cfg.training.clone();
    tc.seed = seed;
    let model = train_pipeline(&ds.train, kind, &tc)?;
    let metrics = evaluate_model(&point_cfg, &model, &ds, seed, timings)?;

    // Frequency baseline alongside, for data-size comparisons.
    let msm_rows = baseline_msm(&point_cfg, &ds, &[seed], timings)?;
    let msm = &msm_rows[0];

    let mut out = Vec::new();
    if let Some(v) = metrics.rho_t {
        out.push((value, seed, "rho_t", v));
    }
    if let Some(v) = metrics.rho_f {
        out.push((value, seed, "rho_f", v));
    }
    if let Some(v) = metrics.mjs {
        out.push((value, seed, "mjs", v));
    }
    if let Some(v) = metrics.tjs {
        out.push((value, seed, "tjs", v));
    }
    out.push((
        value,
        seed,
        "active_codewords",
        metrics.active_codewords.unwrap_or(0) as f64,
    ));
    if let Some(v) = msm.rho_t {
        out.push((value, seed, "msm_rho_t", v));
    }
    if let Some(v) = msm.rho_f {
        out.push((value, seed, "msm_rho_f", v));
    }
    Ok(out)
}

fn truncate_trajectory(t: &mut Trajectory, fraction: f64) {
    let keep = ((t.len() as f64 * fraction).round() as usize).max(2);
    match &mut t.states {
        States::Continuous { dim, values } => values.truncate(keep * *dim),
        States::Discrete { values, .. } => values.truncate(keep),
    }
}
