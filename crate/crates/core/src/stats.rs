//! Small statistical helpers: medians, bootstrap errors, Wilson intervals and
//! least-squares lines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty sample");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Bootstrap standard error of the median.
pub fn bootstrap_median_stderr(xs: &[f64], resamples: usize, seed: u64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mut rng = rng_from_seed(seed);
    let mut buf = vec![0.0; xs.len()];
    let meds: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.random_range(0..xs.len())];
            }
            median(&buf)
        })
        .collect();
    variance(&meds).sqrt()
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

/// Ordinary least squares fit of `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = x.iter().zip(y).map(|(a, b)| b - (slope * a + intercept)).collect();
    LineFit { slope, intercept, residuals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn wilson_matches_reference_values() {
        // 8 of 10 at 95%: (0.4902, 0.9433) from the closed form.
        let (lo, hi) = wilson_interval(8, 10, 1.959_963_984_540_054);
        assert!((lo - 0.490_162).abs() < 1e-5, "{lo}");
        assert!((hi - 0.943_318).abs() < 1e-5, "{hi}");
        let (lo, hi) = wilson_interval(0, 0, 1.96);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn line_fit_is_exact_on_lines() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 0.6 * v - 1.5).collect();
        let fit = linear_fit(&x, &y);
        assert!((fit.slope - 0.6).abs() < 1e-14);
        assert!((fit.intercept + 1.5).abs() < 1e-14);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-14));
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let xs: Vec<f64> = (0..50).map(|k| (k as f64 * 0.37).sin()).collect();
        let a = bootstrap_median_stderr(&xs, 200, 3);
        let b = bootstrap_median_stderr(&xs, 200, 3);
        assert_eq!(a, b);
        assert!(a > 0.0);
    }
}
