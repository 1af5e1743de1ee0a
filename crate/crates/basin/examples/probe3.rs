// Scratch quantizer-law study (temporary): k-means directly on raw 2-D
// states; correlation of -log(cell mass) with the potential.
use basin::cli::{generate_dataset, ExperimentConfig};
use basin::evaluation::pearson;
use basin::numerics::rng_stream;
use basin::systems::prinz_potential;
use rand::Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let k: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);

    let cfg = ExperimentConfig::default();
    let ds = generate_dataset(&cfg, 0).unwrap();
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for t in &ds.train {
        for i in 0..t.len() {
            let s = t.state(i);
            pts.push([s[0], s[1]]);
        }
    }
    let mut rng = rng_stream(0, "kmeans-study", 0);
    let mut centers: Vec<[f64; 2]> = (0..k)
        .map(|_| pts[rng.random_range(0..pts.len())])
        .collect();
    let assign = |centers: &[[f64; 2]], p: &[f64; 2]| -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, c) in centers.iter().enumerate() {
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    };
    for it in 0..iters {
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0u64; k];
        for p in &pts {
            let a = assign(&centers, p);
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        for i in 0..k {
            if counts[i] > 0 {
                centers[i] = [sums[i][0] / counts[i] as f64, sums[i][1] / counts[i] as f64];
            }
        }
        if it % 10 == 9 {
            let active = counts.iter().filter(|&&c| c > 0).count();
            eprintln!("iter {it}: active {active}");
        }
    }
    // Final mass and correlation on test states.
    let mut counts = vec![0u64; k];
    for p in &pts {
        counts[assign(&centers, p)] += 1;
    }
    let total: u64 = counts.iter().sum();
    let energy: Vec<f64> = counts
        .iter()
        .map(|&c| -(((c + 1) as f64) / (total as f64)).ln())
        .collect();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for t in &ds.test {
        for i in (0..t.len()).step_by(5) {
            let s = t.state(i);
            let a = assign(&centers, &[s[0], s[1]]);
            pred.push(energy[a]);
            truth.push(prinz_potential([s[0], s[1]]));
        }
    }
    let rho = pearson(&pred, &truth).unwrap();
    let active = counts.iter().filter(|&&c| c > 0).count();
    println!("k={k} iters={iters} active={active} rho_occ_kmeans={rho:.4}");
}
