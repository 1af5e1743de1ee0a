//! Robust linear alignment of predicted to true energies: random minimal
//! samples, inlier counting against a MAD-based residual threshold, then
//! an ordinary least-squares refit on the best inlier set.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::rng_stream;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    /// `pred ≈ slope * truth + intercept`.
    pub slope: f64,
    pub intercept: f64,
    pub inliers: Vec<bool>,
    pub n_inliers: usize,
}

const N_ITERATIONS: usize = 200;

/// Fit `pred = a*truth + b` robustly. The inlier threshold is one median
/// absolute deviation of the residuals of an initial least-squares fit.
pub fn ransac_align(pred: &[f64], truth: &[f64], seed: u64) -> Result<RansacFit> {
    let n = pred.len();
    if n != truth.len() || n < 10 {
        return Err(Error::Evaluation(format!(
            "ransac needs two equal series of >= 10 points, got {} and {}",
            n,
            truth.len()
        )));
    }
    let (a0, b0) = ols(truth, pred).ok_or_else(|| {
        Error::Evaluation("ransac undefined for constant inputs".into())
    })?;
    let mut residuals: Vec<f64> = truth
        .iter()
        .zip(pred)
        .map(|(&x, &y)| (y - (a0 * x + b0)).abs())
        .collect();
    residuals.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mad = residuals[n / 2].max(1e-12);

    let mut rng = rng_stream(seed, "ransac", 0);
    let mut best_count = 0usize;
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..N_ITERATIONS {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if truth[i] == truth[j] {
            continue;
        }
        let a = (pred[i] - pred[j]) / (truth[i] - truth[j]);
        let b = pred[i] - a * truth[i];
        let count = truth
            .iter()
            .zip(pred)
            .filter(|(&x, &y)| (y - (a * x + b)).abs() <= mad)
            .count();
        if count > best_count {
            best_count = count;
            best = Some((a, b));
        }
    }
    let (a, b) = best.ok_or_else(|| {
        Error::Evaluation("ransac found no valid minimal sample (constant truth?)".into())
    })?;
    let inliers: Vec<bool> = truth
        .iter()
        .zip(pred)
        .map(|(&x, &y)| (y - (a * x + b)).abs() <= mad)
        .collect();
    // Refit on inliers.
    let xs: Vec<f64> = truth
        .iter()
        .zip(&inliers)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .collect();
    let ys: Vec<f64> = pred
        .iter()
        .zip(&inliers)
        .filter(|(_, &m)| m)
        .map(|(&y, _)| y)
        .collect();
    let (slope, intercept) = ols(&xs, &ys).unwrap_or((a, b));
    let n_inliers = inliers.iter().filter(|&&m| m).count();
    Ok(RansacFit {
        slope,
        intercept,
        inliers,
        n_inliers,
    })
}

fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    if x.is_empty() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        cov += (xi - mx) * (yi - my);
        var += (xi - mx) * (xi - mx);
    }
    if var == 0.0 {
        return None;
    }
    let a = cov / var;
    Some((a, my - a * mx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_stream;
    use rand::Rng;

    #[test]
    fn exact_line_recovers_coefficients_with_all_inliers() {
        let truth: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 - 3.0).collect();
        let pred: Vec<f64> = truth.iter().map(|x| 2.0 * x + 1.0).collect();
        let fit = ransac_align(&pred, &truth, 0).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-9);
        assert!((fit.intercept - 1.0).abs() < 1e-9);
        assert_eq!(fit.n_inliers, 20);
    }

    #[test]
    fn gross_outliers_do_not_bias_the_slope() {
        let mut rng = rng_stream(3, "ransac-test", 0);
        let n = 200;
        let mut truth = Vec::with_capacity(n);
        let mut pred = Vec::with_capacity(n);
        for i in 0..n {
            let x = i as f64 / 20.0;
            truth.push(x);
            if i % 10 == 0 {
                // 10% gross outliers.
                pred.push(50.0 + rng.random_range(-5.0..5.0));
            } else {
                pred.push(3.0 * x - 2.0 + rng.random_range(-0.01..0.01));
            }
        }
        let fit = ransac_align(&pred, &truth, 1).unwrap();
        assert!(
            (fit.slope - 3.0).abs() / 3.0 < 0.01,
            "slope {} off by more than 1%",
            fit.slope
        );
        assert!(fit.n_inliers <= n);
    }

    #[test]
    fn constant_truth_is_degenerate() {
        let truth = vec![1.0; 15];
        let pred: Vec<f64> = (0..15).map(|i| i as f64).collect();
        assert!(ransac_align(&pred, &truth, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let truth: Vec<f64> = (0..50).map(|i| (i as f64).sin() * 2.0 + i as f64 / 10.0).collect();
        let pred: Vec<f64> = truth
            .iter()
            .enumerate()
            .map(|(i, x)| if i % 7 == 0 { 9.0 } else { x * 1.5 + 0.25 })
            .collect();
        let a = ransac_align(&pred, &truth, 42).unwrap();
        let b = ransac_align(&pred, &truth, 42).unwrap();
        assert_eq!(a, b);
    }
}
