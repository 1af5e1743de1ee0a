use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Metrics of one trained seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub rho_t: Option<f64>,
    pub rho_f: Option<f64>,
    pub mjs: Option<f64>,
    pub tjs: Option<f64>,
    pub active_codewords: Option<usize>,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (n-1 denominator, 0 for n = 1).
pub fn mean_std(values: &[f64]) -> MetricStat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MetricStat { mean, std }
}

/// Aggregated evaluation results. Correlation fields are `None` when the
/// system has no energy truth (CSV ingestion without an oracle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub system: String,
    pub model: String,
    pub config_hash: String,
    pub tau: usize,
    pub per_seed: Vec<SeedMetrics>,
    pub rho_t: Option<MetricStat>,
    pub rho_f: Option<MetricStat>,
    pub mjs: Option<MetricStat>,
    pub tjs: Option<MetricStat>,
    pub runtime_seconds: f64,
    /// Explanatory notices (for example, omitted truth metrics).
    pub notices: Vec<String>,
}

impl EvalReport {
    pub fn aggregate(
        system: &str,
        model: &str,
        config_hash: &str,
        tau: usize,
        per_seed: Vec<SeedMetrics>,
        notices: Vec<String>,
    ) -> Self {
        let pick = |f: fn(&SeedMetrics) -> Option<f64>| -> Option<MetricStat> {
            let vals: Vec<f64> = per_seed.iter().filter_map(f).collect();
            if vals.is_empty() {
                None
            } else {
                Some(mean_std(&vals))
            }
        };
        let runtime = per_seed.iter().map(|s| s.runtime_seconds).sum();
        let rho_t = pick(|s| s.rho_t);
        let rho_f = pick(|s| s.rho_f);
        let mjs = pick(|s| s.mjs);
        let tjs = pick(|s| s.tjs);
        Self {
            schema_version: SCHEMA_VERSION,
            system: system.to_string(),
            model: model.to_string(),
            config_hash: config_hash.to_string(),
            tau,
            per_seed,
            rho_t,
            rho_f,
            mjs,
            tjs,
            runtime_seconds: runtime,
            notices,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_matches_hand_computation() {
        let s = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s.mean - 2.5).abs() < 1e-12);
        let expected = (((1.5f64 * 1.5) * 2.0 + (0.5 * 0.5) * 2.0) / 3.0).sqrt();
        assert!((s.std - expected).abs() < 1e-12);
    }

    #[test]
    fn aggregate_skips_missing_metrics() {
        let per_seed = vec![
            SeedMetrics {
                seed: 0,
                rho_t: Some(0.9),
                rho_f: None,
                mjs: Some(0.1),
                tjs: Some(0.2),
                active_codewords: Some(50),
                runtime_seconds: 1.0,
            },
            SeedMetrics {
                seed: 1,
                rho_t: Some(0.8),
                rho_f: None,
                mjs: Some(0.3),
                tjs: Some(0.4),
                active_codewords: Some(52),
                runtime_seconds: 2.0,
            },
        ];
        let r = EvalReport::aggregate("prinz", "landscape", "abc", 100, per_seed, vec![]);
        assert!(r.rho_f.is_none());
        assert!((r.rho_t.unwrap().mean - 0.85).abs() < 1e-12);
        assert!((r.runtime_seconds - 3.0).abs() < 1e-12);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"schema_version\":1"));
        assert!(json.contains("\"rho_f\":null"));
    }
}
