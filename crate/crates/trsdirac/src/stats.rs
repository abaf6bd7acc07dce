//! Batch-means error bars and small statistical helpers.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

/// Mean and standard error of a set of batch estimates, each an average over
/// an equally weighted batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Self { mean, stderr: 0.0 }
    }

    /// Residual `|a − b|` in units of the combined error
    /// `√(se_a² + se_b² + bias²)`.
    pub fn units(a: f64, b: f64, errs: &[f64]) -> f64 {
        let combined = errs.iter().map(|e| e * e).sum::<f64>().sqrt();
        let d = (a - b).abs();
        if combined > 0.0 {
            d / combined
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn batch_means(batches: &[f64]) -> Estimate {
    let n = batches.len();
    assert!(n > 0, "no batches");
    let mean = batches.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Estimate { mean, stderr: f64::NAN };
    }
    let var = batches.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Estimate { mean, stderr: (var / n as f64).sqrt() }
}

/// Streaming accumulator that splits a sequence of per-item values into
/// `n_batches` consecutive batches of (nearly) equal size.
#[derive(Debug, Clone)]
pub struct Batcher {
    per_batch: usize,
    n_batches: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
    seen: usize,
}

impl Batcher {
    pub fn new(n_items: usize, n_batches: usize) -> Self {
        let n_batches = n_batches.clamp(1, n_items.max(1));
        Self {
            per_batch: n_items.div_ceil(n_batches).max(1),
            n_batches,
            sums: vec![0.0; n_batches],
            counts: vec![0; n_batches],
            seen: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        self.push_many(x, 1);
    }

    /// Add the sum of `count` consecutive items at once; the batch is chosen
    /// by the first of them.
    pub fn push_many(&mut self, sum: f64, count: usize) {
        let b = (self.seen / self.per_batch).min(self.n_batches - 1);
        self.sums[b] += sum;
        self.counts[b] += count;
        self.seen += count;
    }

    pub fn estimate(&self) -> Estimate {
        let means: Vec<f64> = self
            .sums
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s / c as f64)
            .collect();
        batch_means(&means)
    }

    pub fn count(&self) -> usize {
        self.seen
    }
}

/// Two-sided standard-normal quantile for `confidence` (e.g. 0.997 → ≈3).
pub fn two_sided_quantile(confidence: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(0.5 + 0.5 * confidence.clamp(0.0, 1.0 - 1e-16))
}
