//! Strong-selection weak-mutation dynamics on a two-locus genotype space:
//! the population is monomorphic, one random single-locus mutant is
//! proposed per step, and it fixes with the Kimura probability.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng_stream;
use crate::systems::Trajectory;

pub const LOCI: usize = 2;
pub const VARIANTS_PER_LOCUS: usize = 64;
pub const GENOTYPES: usize = VARIANTS_PER_LOCUS * VARIANTS_PER_LOCUS;

/// Sign convention for the exponent of the fixation formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `(1 - e^{-2s}) / (1 - e^{-2Ns})`: beneficial mutations fix more
    /// often. The population-genetics standard, and the default.
    #[default]
    Standard,
    /// `(1 - e^{2s}) / (1 - e^{2Ns})`: the exponents written positive,
    /// which reverses the preference.
    PositiveExponent,
}

/// Fixation probability of a mutant with selection coefficient `s` in a
/// population of size `n`, written with positive exponents:
/// `(1 - e^{2s}) / (1 - e^{2Ns})`, with the analytic limit `1/N` at
/// `s = 0`. Output clamped to `[0, 1]`.
pub fn kimura_fixation_probability(s: f64, n: u64) -> f64 {
    kimura_fixation_probability_with(s, n, SignConvention::PositiveExponent)
}

/// Fixation probability under an explicit sign convention.
pub fn kimura_fixation_probability_with(s: f64, n: u64, convention: SignConvention) -> f64 {
    let s = match convention {
        SignConvention::Standard => s,
        SignConvention::PositiveExponent => -s,
    };
    kimura_standard(s, n)
}

/// `(1 - e^{-2s}) / (1 - e^{-2Ns})` evaluated stably: series near zero,
/// log-space for strongly deleterious mutants.
fn kimura_standard(s: f64, n: u64) -> f64 {
    let nf = n as f64;
    let num_arg = 2.0 * s;
    let den_arg = 2.0 * nf * s;
    let p = if den_arg.abs() < 1e-4 {
        // (1-e^-x)/(1-e^-y) = (x/y) * (1 - x/2 + x^2/6) / (1 - y/2 + y^2/6)
        let x = num_arg;
        let y = den_arg;
        let series = |t: f64| 1.0 - t / 2.0 + t * t / 6.0 - t * t * t / 24.0;
        (1.0 / nf) * series(x) / series(y)
    } else if den_arg < -700.0 {
        // Denominator would overflow; work in log space:
        // ln p = ln(e^{-2s} - 1) + 2Ns.
        let ln_num = if -num_arg > 40.0 {
            -num_arg
        } else {
            ((-num_arg).exp() - 1.0).ln()
        };
        (ln_num + den_arg).exp()
    } else {
        (-(-num_arg).exp_m1()) / (-(-den_arg).exp_m1())
    };
    p.clamp(0.0, 1.0)
}

/// Two-locus fitness table, strictly positive everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessLandscape {
    pub n_loci: usize,
    pub alleles_per_locus: usize,
    pub fitness: Vec<f64>,
    pub seed: u64,
}

impl FitnessLandscape {
    pub fn fitness_of(&self, genotype: usize) -> f64 {
        self.fitness[genotype]
    }

    pub fn log_fitness_of(&self, genotype: usize) -> f64 {
        self.fitness[genotype].ln()
    }

    pub fn genotype(alleles: [usize; LOCI]) -> usize {
        alleles[0] * VARIANTS_PER_LOCUS + alleles[1]
    }

    pub fn alleles(genotype: usize) -> [usize; LOCI] {
        [genotype / VARIANTS_PER_LOCUS, genotype % VARIANTS_PER_LOCUS]
    }
}

/// Random smooth fitness landscape: log-fitness is a sum of Gaussian
/// bumps with random centers and positive amplitudes on the allele grid;
/// fitness is its exponential, hence strictly positive.
pub fn generate_fitness_landscape(seed: u64, n_bumps: usize) -> Result<FitnessLandscape> {
    if n_bumps < 1 {
        return Err(Error::Config("n_bumps must be >= 1".into()));
    }
    let mut rng = rng_stream(seed, "fitness-landscape", 0);
    let m = VARIANTS_PER_LOCUS as f64;
    let bumps: Vec<(f64, f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            let cx = rng.random_range(0.0..m);
            let cy = rng.random_range(0.0..m);
            let amplitude = rng.random_range(0.5..1.5);
            let width = rng.random_range(6.0..14.0);
            (cx, cy, amplitude, width)
        })
        .collect();
    let mut fitness = vec![0.0; GENOTYPES];
    for g in 0..GENOTYPES {
        let [a, b] = FitnessLandscape::alleles(g);
        let (x, y) = (a as f64, b as f64);
        let mut logf = 0.0;
        for &(cx, cy, amp, w) in &bumps {
            let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            logf += amp * (-d2 / (2.0 * w * w)).exp();
        }
        fitness[g] = logf.exp();
    }
    Ok(FitnessLandscape {
        n_loci: LOCI,
        alleles_per_locus: VARIANTS_PER_LOCUS,
        fitness,
        seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SswmConfig {
    pub population_size: u64,
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub kimura_sign_convention: SignConvention,
}

impl Default for SswmConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            n_trajectories: 1000,
            n_steps: 100,
            seed: 0,
            kimura_sign_convention: SignConvention::Standard,
        }
    }
}

/// Single-locus mutants of a genotype: 2 × 63 = 126 neighbors.
pub fn single_locus_mutants(genotype: usize) -> Vec<usize> {
    let [a, b] = FitnessLandscape::alleles(genotype);
    let mut out = Vec::with_capacity(LOCI * (VARIANTS_PER_LOCUS - 1));
    for v in 0..VARIANTS_PER_LOCUS {
        if v != a {
            out.push(FitnessLandscape::genotype([v, b]));
        }
    }
    for v in 0..VARIANTS_PER_LOCUS {
        if v != b {
            out.push(FitnessLandscape::genotype([a, v]));
        }
    }
    out
}

/// Simulate monomorphic adaptive walks: per step propose one uniformly
/// random single-locus mutant `j` of the current genotype `i` and accept
/// it with `kimura(s_i(j), N)` where `s_i(j) = f_j/f_i - 1`.
pub fn simulate_sswm(cfg: &SswmConfig, land: &FitnessLandscape) -> Result<Vec<Trajectory>> {
    if cfg.population_size < 2 {
        return Err(Error::Config("population_size must be >= 2".into()));
    }
    if land.fitness.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::Config("fitness values must be strictly positive".into()));
    }
    let mut out = Vec::with_capacity(cfg.n_trajectories);
    for k in 0..cfg.n_trajectories {
        let mut rng = rng_stream(cfg.seed, "sswm", k as u64);
        let mut g = rng.random_range(0..GENOTYPES);
        let mut values = Vec::with_capacity(cfg.n_steps + 1);
        values.push(g);
        for _ in 0..cfg.n_steps {
            let locus = rng.random_range(0..LOCI);
            let [a, b] = FitnessLandscape::alleles(g);
            let current_allele = if locus == 0 { a } else { b };
            let mut variant = rng.random_range(0..VARIANTS_PER_LOCUS - 1);
            if variant >= current_allele {
                variant += 1;
            }
            let candidate = if locus == 0 {
                FitnessLandscape::genotype([variant, b])
            } else {
                FitnessLandscape::genotype([a, variant])
            };
            let s = land.fitness_of(candidate) / land.fitness_of(g) - 1.0;
            let p = kimura_fixation_probability_with(
                s,
                cfg.population_size,
                cfg.kimura_sign_convention,
            );
            if rng.random::<f64>() < p {
                g = candidate;
            }
            values.push(g);
        }
        out.push(Trajectory::discrete(GENOTYPES, values, 1, "sswm")?);
    }
    Ok(out)
}
