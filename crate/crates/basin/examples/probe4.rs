// Scratch calibration probe for the evolutionary system (temporary).
use basin::cli::{evaluate_model, generate_dataset, ExperimentConfig, SystemChoice};
use basin::evaluation::{pearson, predict_state_energies};
use basin::training::train_pipeline;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let k: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let e2: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(15);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut cfg = ExperimentConfig::default();
    cfg.system = SystemChoice::Sswm;
    cfg.apply_system_defaults();
    cfg.training.k = k;
    cfg.training.epochs_stage2 = e2;
    cfg.training.seed = seed;
    if let Ok(v) = std::env::var("LR1") {
        cfg.training.learning_rate = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("E1") {
        cfg.training.epochs_stage1 = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("CBM") {
        cfg.training.codebook_lr_multiplier = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("FRZ") {
        cfg.training.encoder_freeze_after = Some(v.parse().unwrap());
    }
    if let Ok(v) = std::env::var("LAG") {
        cfg.training.lag_time = v.parse().unwrap();
    }

    let ds = generate_dataset(&cfg, seed).unwrap();
    let t0 = std::time::Instant::now();
    let kind = cfg.system_kind().unwrap();
    let model = match train_pipeline(&ds.train, kind, &cfg.training) {
        Ok(m) => m,
        Err(e) => {
            println!("k={k} seed={seed} TRAIN ERR: {e}");
            return;
        }
    };
    let t_train = t0.elapsed().as_secs_f64();

    let land = ds.landscape.as_ref().unwrap();
    let mut pairs = Vec::new();
    for (ti, t) in ds.test.iter().enumerate() {
        for i in 0..t.len() {
            pairs.push((ti, i));
        }
    }
    let pred = predict_state_energies(&model, &ds.test, &pairs);
    let truth: Vec<f64> = pairs
        .iter()
        .map(|&(ti, i)| land.fitness_of(ds.test[ti].index(i)))
        .collect();
    let rho_fit = pearson(&pred, &truth).unwrap();
    // Occupancy-anchored oracle.
    let emp = model.graph.empirical_distribution(1.0);
    let mut om = model.clone();
    om.graph.energy = emp.iter().map(|p| -p.ln()).collect();
    let pred_o = predict_state_energies(&om, &ds.test, &pairs);
    let rho_or = pearson(&pred_o, &truth).unwrap();

    let t1 = std::time::Instant::now();
    let metrics = evaluate_model(&cfg, &model, &ds, seed, false).unwrap();
    let t_eval = t1.elapsed().as_secs_f64();
    println!(
        "k={k} e2={e2} seed={seed} | active={} edges={} t_train={t_train:.0}s t_eval={t_eval:.0}s \
         rho_t={rho_fit:.4} oracle={rho_or:.4} rho_f={:.4} mjs={:.4} tjs={:.4}",
        model.graph.n_nodes(),
        model.graph.topology.edges.len(),
        metrics.rho_f.unwrap_or(f64::NAN),
        metrics.mjs.unwrap_or(f64::NAN),
        metrics.tjs.unwrap_or(f64::NAN),
    );
}
