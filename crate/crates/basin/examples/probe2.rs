// Scratch stage-1-only calibration probe (temporary).
use basin::cli::{generate_dataset, ExperimentConfig, SystemChoice};
use basin::codebook::{stage1_train, CodebookModel, Stage1Config, SystemKind};
use basin::evaluation::pearson;
use basin::numerics::ParamStore;
use basin::systems::prinz_potential;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let spread: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let k: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let lr1: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let e1: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(10);
    let s1: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(800);
    let seed: u64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut cfg = ExperimentConfig::default();
    cfg.system = SystemChoice::Prinz;
    let ds = generate_dataset(&cfg, 0).unwrap();

    let mut store = ParamStore::new();
    let model =
        CodebookModel::init(&mut store, SystemKind::Continuous { dim: 2 }, k, seed).unwrap();
    let mut c = Stage1Config {
        epochs: e1,
        learning_rate: lr1,
        max_steps_per_epoch: Some(s1),
        init_spread: spread,
        seed,
        ..Default::default()
    };
    if let Ok(v) = std::env::var("RESEED") {
        c.reseed_dead_codewords = v != "0";
    }
    if let Ok(v) = std::env::var("CBM") {
        c.codebook_lr_multiplier = v.parse().unwrap();
    }
    let t0 = std::time::Instant::now();
    let (codebook, hist) = stage1_train(&model, &mut store, &ds.train, &c).unwrap();
    let t = t0.elapsed().as_secs_f64();
    let active = codebook.active_count();

    // Occupancy-energy oracle at the cell level over test states.
    let graph = basin::landscape::build_topology(&model, &store, &codebook, &ds.train, 100);
    let (graph, _) = match graph {
        Ok(g) => g,
        Err(e) => {
            println!("spread={spread} k={k} lr1={lr1} e1={e1} s1={s1} active={active} t={t:.0}s topo-err: {e}");
            return;
        }
    };
    let emp = graph.empirical_distribution(1.0);
    let energies: Vec<f64> = emp.iter().map(|p| -p.ln()).collect();
    let codewords_all = model.codeword_data(&store).to_vec();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for traj in &ds.test {
        for i in (0..traj.len()).step_by(10) {
            let pairs = [(0usize, i)];
            let feats = model
                .kind
                .featurize_batch(std::slice::from_ref(traj), &pairs);
            let latent = model.encode_raw(&store, &feats, 1);
            let node =
                basin::codebook::nearest_in_subset(&latent, &codewords_all, &graph.active);
            pred.push(energies[node]);
            let s = traj.state(i);
            truth.push(prinz_potential([s[0], s[1]]));
        }
    }
    let rho = pearson(&pred, &truth).unwrap();
    let final_rec = hist.last().unwrap().reconstruct;
    println!(
        "spread={spread} k={k} lr1={lr1} e1={e1} s1={s1} seed={seed} | active={active} \
         t={t:.0}s rho_occ={rho:.4} rec={final_rec:.3} edges={} comps={}",
        graph.topology.edges.len(),
        graph.n_components
    );
}
