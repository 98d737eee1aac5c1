//! Particle Gibbs-Glauber chain on path space.
//!
//! One step refreshes the conditional system around the current path and
//! then draws the next path uniformly among its `N` ancestral lines.

use rand::Rng;
use serde::Serialize;

use crate::conditional::simulate_conditional;
use crate::error::{FkError, Result};
use crate::models::{InitialLaw, Model};
use crate::paths::{CadlagPath, PathFunctional};
use crate::rng::{stream, Stream};
use crate::stats::{autocorrelation, batch_means_estimate, integrated_autocorrelation_time, z_score};

/// One transition of the kernel: returns the new path and the index of the
/// line it was drawn from (0 is the previous path).
pub fn gibbs_step_indexed<M, R>(
    model: &M,
    n: usize,
    t: f64,
    x: &CadlagPath<M::State>,
    init: &InitialLaw<M::State>,
    rng: &mut R,
) -> Result<(CadlagPath<M::State>, usize)>
where
    M: Model,
    R: Rng + ?Sized,
{
    let dual = simulate_conditional(model, n, t, x, init, rng)?;
    let k = rng.random_range(0..n);
    Ok((dual.line(k).clone(), k))
}

pub fn gibbs_step<M, R>(
    model: &M,
    n: usize,
    t: f64,
    x: &CadlagPath<M::State>,
    init: &InitialLaw<M::State>,
    rng: &mut R,
) -> Result<CadlagPath<M::State>>
where
    M: Model,
    R: Rng + ?Sized,
{
    gibbs_step_indexed(model, n, t, x, init, rng).map(|(p, _)| p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GibbsSettings {
    pub n_particles: usize,
    pub horizon: f64,
    /// Recorded iterations (after burn-in).
    pub iters: usize,
    pub burn_in: usize,
    pub keep_paths: bool,
}

/// Functional values (and optionally paths) along a chain.
#[derive(Debug, Clone)]
pub struct GibbsChainTrace<S> {
    pub n_particles: usize,
    pub horizon: f64,
    pub seed: u64,
    /// `values[k][j]` is functional `j` at recorded iteration `k`.
    pub values: Vec<Vec<f64>>,
    pub iterates: Option<Vec<CadlagPath<S>>>,
    /// How many recorded steps returned the previous path's line (index 0).
    pub stayed_on_frozen: usize,
}

impl<S> GibbsChainTrace<S> {
    pub fn series(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[j]).collect()
    }
}

pub fn gibbs_chain<M: Model>(
    model: &M,
    settings: &GibbsSettings,
    x0: &CadlagPath<M::State>,
    functionals: &[PathFunctional<M::State>],
    init: &InitialLaw<M::State>,
    seed: u64,
) -> Result<GibbsChainTrace<M::State>> {
    if settings.iters < 1 {
        return Err(FkError::Argument("a chain needs at least one iteration".into()));
    }
    let mut rng: Stream = stream(seed);
    let mut x = x0.clone();
    for _ in 0..settings.burn_in {
        x = gibbs_step(model, settings.n_particles, settings.horizon, &x, init, &mut rng)?;
    }
    let mut values = Vec::with_capacity(settings.iters);
    let mut iterates = settings.keep_paths.then(Vec::new);
    let mut stayed = 0;
    for _ in 0..settings.iters {
        let (next, k) = gibbs_step_indexed(model, settings.n_particles, settings.horizon, &x, init, &mut rng)?;
        x = next;
        stayed += usize::from(k == 0);
        values.push(functionals.iter().map(|f| f.evaluate(&x)).collect());
        if let Some(v) = iterates.as_mut() {
            v.push(x.clone());
        }
    }
    Ok(GibbsChainTrace {
        n_particles: settings.n_particles,
        horizon: settings.horizon,
        seed,
        values,
        iterates,
        stayed_on_frozen: stayed,
    })
}

/// Mixing summary of one functional along a chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingDiagnostics {
    pub lag1_autocorrelation: f64,
    pub integrated_autocorrelation_time: f64,
}

pub fn mixing_diagnostics(series: &[f64]) -> MixingDiagnostics {
    MixingDiagnostics {
        lag1_autocorrelation: autocorrelation(series, 1),
        integrated_autocorrelation_time: integrated_autocorrelation_time(series),
    }
}

/// `E[f(X_k) g(X_{k+1})] - E[g(X_k) f(X_{k+1})]` along a stationary chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetryGap {
    pub gap: f64,
    pub std_error: f64,
    pub z: f64,
}

/// Symmetry gap of two recorded series, with a batch-means standard error.
pub fn symmetry_gap(f: &[f64], g: &[f64]) -> Result<SymmetryGap> {
    if f.len() != g.len() || f.len() < 41 {
        return Err(FkError::Argument("symmetry gap needs two aligned series of length > 40".into()));
    }
    let d: Vec<f64> = (0..f.len() - 1).map(|k| f[k] * g[k + 1] - g[k] * f[k + 1]).collect();
    let est = batch_means_estimate(&d, 20, 0)?;
    Ok(SymmetryGap {
        gap: est.mean,
        std_error: est.std_error,
        z: z_score(est.mean, est.std_error),
    })
}

/// A pair of functionals compared under time reversal of the chain.
pub type FunctionalPair<S> = (PathFunctional<S>, PathFunctional<S>);

/// Runs one chain recording every functional in `pairs` and returns the
/// symmetry gap of each pair.
pub fn reversibility_check<M: Model>(
    model: &M,
    settings: &GibbsSettings,
    x0: &CadlagPath<M::State>,
    pairs: &[FunctionalPair<M::State>],
    init: &InitialLaw<M::State>,
    seed: u64,
) -> Result<Vec<SymmetryGap>> {
    let functionals: Vec<_> = pairs.iter().flat_map(|(f, g)| [f.clone(), g.clone()]).collect();
    let trace = gibbs_chain(model, settings, x0, &functionals, init, seed)?;
    (0..pairs.len())
        .map(|p| symmetry_gap(&trace.series(2 * p), &trace.series(2 * p + 1)))
        .collect()
}
