//! Batch means, effective sample size and small regression helpers.

use crate::error::{Error, Result};

pub const DEFAULT_BATCHES: usize = 32;
pub const MIN_BATCHES: usize = 20;

/// Summary of one scalar series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchMeans {
    pub mean: f64,
    /// Sample variance of the raw series.
    pub variance: f64,
    pub standard_error: f64,
    pub effective_samples: f64,
    pub samples: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two points.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Non-overlapping batch means over `batches` equal batches. Leftover
/// samples at the front are dropped and the latest data is kept.
pub fn batch_means(xs: &[f64], batches: usize) -> Result<BatchMeans> {
    if batches < MIN_BATCHES {
        return Err(Error::Diagnostics(format!(
            "batch means needs at least {MIN_BATCHES} batches, got {batches}"
        )));
    }
    let size = xs.len() / batches;
    if size == 0 {
        return Err(Error::Diagnostics(format!(
            "{} samples cannot fill {batches} batches; run longer or thin less",
            xs.len()
        )));
    }
    let used = &xs[xs.len() - size * batches..];
    let means: Vec<f64> = used.chunks(size).map(mean).collect();
    let mu = mean(used);
    let variance = sample_variance(used);
    let se2 = sample_variance(&means) / batches as f64;
    let n = used.len() as f64;
    let effective_samples = if se2 > 0.0 { (variance / se2).min(n) } else { n };
    Ok(BatchMeans {
        mean: mu,
        variance,
        standard_error: se2.sqrt(),
        effective_samples,
        samples: used.len(),
    })
}

/// Ordinary least squares `y = intercept + slope x`, returning `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn constant_series() {
        let xs = vec![0.25; 640];
        let b = batch_means(&xs, DEFAULT_BATCHES).unwrap();
        assert_eq!(b.mean, 0.25);
        assert_eq!(b.variance, 0.0);
        assert_eq!(b.standard_error, 0.0);
        assert_eq!(b.effective_samples, 640.0);
    }

    #[test]
    fn too_few_batches() {
        assert!(matches!(batch_means(&[1.0; 100], 10), Err(Error::Diagnostics(_))));
        assert!(matches!(batch_means(&[1.0; 10], 32), Err(Error::Diagnostics(_))));
    }

    #[test]
    fn iid_standard_error() {
        let mut rng = crate::rng::replica_rng(3, 0);
        let xs: Vec<f64> = (0..64_000).map(|_| rng.random::<f64>()).collect();
        let b = batch_means(&xs, DEFAULT_BATCHES).unwrap();
        let se_iid = (1.0 / 12.0 / 64_000.0f64).sqrt();
        assert!((b.mean - 0.5).abs() < 4.0 * se_iid);
        assert!((b.standard_error / se_iid - 1.0).abs() < 0.5);
        assert!(b.effective_samples <= b.samples as f64);
    }

    #[test]
    fn fit_exact_line() {
        let (s, c) = linear_fit(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]);
        assert!((s - 2.0).abs() < 1e-14 && (c - 1.0).abs() < 1e-14);
    }
}
