//! Monte Carlo summaries and autocorrelation diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_replicas: usize,
    pub seed: u64,
}

impl MonteCarloEstimate {
    /// Mean and `sd / sqrt(n)` of i.i.d. samples.
    pub fn from_samples(samples: &[f64], seed: u64) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(FkError::Argument(format!("need at least 2 replicas, got {n}")));
        }
        let (mean, var) = mean_var(samples);
        Ok(Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_replicas: n,
            seed,
        })
    }

    /// Number of standard errors between the estimate and `target`.
    pub fn z_against(&self, target: f64) -> f64 {
        z_score(self.mean - target, self.std_error)
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        (self.mean - target).abs() <= n_se * self.std_error
    }
}

/// `diff / se`, zero when both vanish.
pub fn z_score(diff: f64, se: f64) -> f64 {
    if se == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    } else {
        diff / se
    }
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Empirical autocorrelation at `lag` (biased normalization).
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if lag >= n {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c0: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    if c0 == 0.0 {
        return 0.0;
    }
    let ck: f64 = (0..n - lag).map(|i| (xs[i] - mean) * (xs[i + lag] - mean)).sum();
    ck / c0
}

/// Integrated autocorrelation time `1 + 2 Σ ρ_k` with Sokal's automatic
/// window (smallest `M` with `M ≥ 5 τ(M)`).
pub fn integrated_autocorrelation_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 1.0;
    }
    let mut tau = 1.0;
    for m in 1..n / 2 {
        tau += 2.0 * autocorrelation(xs, m);
        if m as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Mean of a correlated series with standard error `sd · sqrt(τ / n)`.
pub fn chain_estimate(xs: &[f64], seed: u64) -> Result<MonteCarloEstimate> {
    let mut est = MonteCarloEstimate::from_samples(xs, seed)?;
    est.std_error *= integrated_autocorrelation_time(xs).sqrt();
    Ok(est)
}

/// Mean of a correlated series with a batch-means standard error.
pub fn batch_means_estimate(xs: &[f64], n_batches: usize, seed: u64) -> Result<MonteCarloEstimate> {
    if n_batches < 2 || xs.len() < 2 * n_batches {
        return Err(FkError::Argument(format!(
            "{} samples cannot form {n_batches} batches",
            xs.len()
        )));
    }
    let size = xs.len() / n_batches;
    let means: Vec<f64> = xs
        .chunks_exact(size)
        .take(n_batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let (_, var) = mean_var(&means);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(MonteCarloEstimate {
        mean,
        std_error: (var / n_batches as f64).sqrt(),
        n_replicas: xs.len(),
        seed,
    })
}
