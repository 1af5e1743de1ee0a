// Scratch calibration probe (temporary).
use basin::cli::{generate_dataset, ExperimentConfig, SystemChoice};
use basin::evaluation::{pearson, predict_state_energies};
use basin::systems::prinz_potential;
use basin::training::train_pipeline;

fn main() {
    let mut cfg = ExperimentConfig::default();
    cfg.system = SystemChoice::Prinz;
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let k: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr2: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let e2: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(30);
    let sps: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(8);
    cfg.training.init_spread = spread;
    cfg.training.k = k;
    cfg.training.stage2_learning_rate = Some(lr2);
    cfg.training.epochs_stage2 = e2;
    cfg.training.stage2_sources_per_step = sps;
    if let Ok(v) = std::env::var("LR1") {
        cfg.training.learning_rate = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("E1") {
        cfg.training.epochs_stage1 = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("S1") {
        cfg.training.stage1_max_steps_per_epoch = Some(v.parse().unwrap());
    }
    if let Ok(v) = std::env::var("SEED") {
        cfg.training.seed = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("RESEED") {
        cfg.training.reseed_dead_codewords = v != "0";
    }
    if let Ok(v) = std::env::var("NINT") {
        cfg.training.n_int = v.parse().unwrap();
    }

    let ds = generate_dataset(&cfg, 0).unwrap();
    let t0 = std::time::Instant::now();
    let model = train_pipeline(
        &ds.train,
        basin::codebook::SystemKind::Continuous { dim: 2 },
        &cfg.training,
    )
    .unwrap();
    let train_time = t0.elapsed().as_secs_f64();

    let n = model.graph.n_nodes();
    // Oracle check: correlation of -log(occupancy) with V at cell level,
    // weighted by test states.
    let mut pairs = Vec::new();
    for (ti, t) in ds.test.iter().enumerate() {
        for i in 0..t.len() {
            pairs.push((ti, i));
        }
    }
    let pred = predict_state_energies(&model, &ds.test, &pairs);
    let truth: Vec<f64> = pairs
        .iter()
        .map(|&(ti, i)| {
            let s = ds.test[ti].state(i);
            prinz_potential([s[0], s[1]])
        })
        .collect();
    let rho_model = pearson(&pred, &truth).unwrap();

    // Reference: energies forced to -log(empirical occupancy).
    let emp = model.graph.empirical_distribution(1.0);
    let mut ref_model = model.clone();
    ref_model.graph.energy = emp.iter().map(|p| -p.ln()).collect();
    let pred_ref = predict_state_energies(&ref_model, &ds.test, &pairs);
    let rho_occupancy = pearson(&pred_ref, &truth).unwrap();

    // How well did the head fit -log emp?
    let target: Vec<f64> = emp.iter().map(|p| -p.ln()).collect();
    let rho_head_vs_occ = pearson(&model.graph.energy, &target).unwrap();

    println!(
        "spread={spread} k={k} lr2={lr2} e2={e2} sps={sps} | active={n} t={train_time:.1}s \
         rho_model={rho_model:.4} rho_occupancy_oracle={rho_occupancy:.4} head_vs_occ={rho_head_vs_occ:.4}"
    );
}
