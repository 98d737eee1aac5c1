//! Exact law of the number of M2 particles in state 1, used as an
//! independent reference for the mean-field system.
//!
//! For M2 (rates 0->1 = 1, 1->0 = 2, V = (0, 1)) with `N` particles, the count
//! `k` of particles in state 1 is itself a Markov chain:
//! `k -> k+1` at rate `N - k`, `k -> k-1` at rate `2k + k(N - k)/N`.

#![allow(dead_code)]

use fkpath_core::numerics::expm;
use nalgebra::DMatrix;

pub fn count_generator(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    let mut a = DMatrix::zeros(n + 1, n + 1);
    for k in 0..=n {
        let kf = k as f64;
        if k < n {
            a[(k, k + 1)] = nf - kf;
        }
        if k > 0 {
            a[(k, k - 1)] = 2.0 * kf + kf * (nf - kf) / nf;
        }
        a[(k, k)] = -(0..=n).filter(|&j| j != k).map(|j| a[(k, j)]).sum::<f64>();
    }
    a
}

/// Law of `k_t` started from `k_0 = 0`.
pub fn count_law(n: usize, t: f64) -> Vec<f64> {
    let p = expm(&(count_generator(n) * t));
    p.row(0).iter().copied().collect()
}

/// `E[m(ξ_t)(1_{x=1})]`.
pub fn mean_fraction(n: usize, t: f64) -> f64 {
    count_law(n, t).iter().enumerate().map(|(k, p)| p * k as f64 / n as f64).sum()
}

/// `E[1{ξ^1_t = 1} 1{ξ^2_t = 1}]`.
pub fn pair_moment(n: usize, t: f64) -> f64 {
    let nf = n as f64;
    count_law(n, t)
        .iter()
        .enumerate()
        .map(|(k, p)| p * (k as f64) * (k as f64 - 1.0) / (nf * (nf - 1.0)))
        .sum()
}
