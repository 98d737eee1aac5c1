//! Annealed Boltzmann-Gibbs family: dynamics reversible w.r.t.
//! `π_β ∝ exp(-β H)` with `β = β_t`, and potential `V_t = ∂_t β_t · H`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{FiniteCtmcModel, InitialLaw, PotentialSchedule, RateSchedule};
use crate::error::{FkError, Result};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// An inverse-temperature schedule `t ↦ β_t` with its derivative.
#[derive(Clone)]
pub struct BetaSchedule {
    value: ScalarFn,
    derivative: ScalarFn,
    derivative_sup: f64,
    linear: Option<(f64, f64)>,
}

impl fmt::Debug for BetaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.linear {
            Some((b0, slope)) => write!(f, "BetaSchedule::linear({b0}, {slope})"),
            None => write!(f, "BetaSchedule::custom(sup β' = {})", self.derivative_sup),
        }
    }
}

impl BetaSchedule {
    /// `β_t = beta0 + slope · t`.
    pub fn linear(beta0: f64, slope: f64) -> Self {
        Self {
            value: Arc::new(move |t| beta0 + slope * t),
            derivative: Arc::new(move |_| slope),
            derivative_sup: slope.max(0.0),
            linear: Some((beta0, slope)),
        }
    }

    pub fn custom(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative_sup: f64,
    ) -> Self {
        Self {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            derivative_sup,
            linear: None,
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        (self.value)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (self.derivative)(t)
    }

    pub fn derivative_sup(&self) -> f64 {
        self.derivative_sup
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.linear, Some((_, s)) if s == 0.0)
    }
}

/// Boltzmann weights `exp(-β H(x)) / Σ_y exp(-β H(y))`.
pub fn boltzmann(energy: &[f64], beta: f64) -> DVector<f64> {
    let emin = energy.iter().copied().fold(f64::INFINITY, f64::min);
    let w = DVector::from_iterator(energy.len(), energy.iter().map(|h| (-beta * (h - emin)).exp()));
    let total = w.sum();
    w / total
}

/// Metropolis rates `q(x,y) · min(1, exp(-β (H(y) - H(x))))` for a symmetric proposal `q`.
pub fn metropolis_generator(proposal: &DMatrix<f64>, energy: &[f64], beta: f64) -> DMatrix<f64> {
    let n = energy.len();
    let mut l = DMatrix::zeros(n, n);
    for x in 0..n {
        let mut exit = 0.0;
        for y in 0..n {
            if x != y {
                let r = proposal[(x, y)] * (-beta * (energy[y] - energy[x])).exp().min(1.0);
                l[(x, y)] = r;
                exit += r;
            }
        }
        l[(x, x)] = -exit;
    }
    l
}

/// A finite Feynman-Kac model whose normalizing constant is a free-energy ratio.
#[derive(Clone, Debug)]
pub struct JarzynskiModel {
    energy: Vec<f64>,
    schedule: BetaSchedule,
    model: FiniteCtmcModel,
}

impl JarzynskiModel {
    /// Metropolis dynamics on `energy.len()` states with symmetric `proposal` rates.
    pub fn metropolis(energy: Vec<f64>, proposal: DMatrix<f64>, schedule: BetaSchedule) -> Result<Self> {
        let n = energy.len();
        if proposal.nrows() != n || proposal.ncols() != n {
            return Err(FkError::Argument("proposal shape does not match the energy vector".into()));
        }
        if energy.iter().any(|h| !(*h >= 0.0) || !h.is_finite()) {
            return Err(FkError::Argument("energy must be finite and nonnegative".into()));
        }
        for x in 0..n {
            for y in 0..n {
                if x != y && (proposal[(x, y)] < 0.0 || (proposal[(x, y)] - proposal[(y, x)]).abs() > 1e-14) {
                    return Err(FkError::Argument("proposal rates must be symmetric and nonnegative".into()));
                }
            }
        }
        let rate_sup = (0..n)
            .map(|x| (0..n).filter(|&y| y != x).map(|y| proposal[(x, y)]).sum::<f64>())
            .fold(0.0, f64::max);
        let hmax = energy.iter().copied().fold(0.0, f64::max);
        let potential_sup = schedule.derivative_sup() * hmax;

        let rates = {
            let (energy, schedule, proposal) = (energy.clone(), schedule.clone(), proposal.clone());
            RateSchedule::TimeVarying(Arc::new(move |t| {
                metropolis_generator(&proposal, &energy, schedule.beta(t))
            }))
        };
        let potential = match schedule.linear {
            Some((_, slope)) => PotentialSchedule::Constant(energy.iter().map(|h| slope * h).collect()),
            None => {
                let (energy, schedule) = (energy.clone(), schedule.clone());
                PotentialSchedule::TimeVarying(Arc::new(move |t, x| schedule.derivative(t) * energy[x]))
            }
        };
        let model = FiniteCtmcModel::new("jarzynski", n, rates, potential, potential_sup, rate_sup)?;
        Ok(Self { energy, schedule, model })
    }

    /// Assembles a model from arbitrary parts; [`Self::check_stationarity`]
    /// then decides whether the base dynamics are admissible.
    pub fn from_parts(energy: Vec<f64>, schedule: BetaSchedule, model: FiniteCtmcModel) -> Result<Self> {
        if energy.len() != model.size() {
            return Err(FkError::Argument("energy length does not match the model".into()));
        }
        Ok(Self { energy, schedule, model })
    }

    pub fn model(&self) -> &FiniteCtmcModel {
        &self.model
    }

    pub fn energy(&self) -> &[f64] {
        &self.energy
    }

    pub fn schedule(&self) -> &BetaSchedule {
        &self.schedule
    }

    /// `π_{β_0}`, the law the particles start from.
    pub fn initial_law(&self) -> InitialLaw<usize> {
        InitialLaw::Categorical(boltzmann(&self.energy, self.schedule.beta(0.0)).iter().copied().collect())
    }

    /// `Σ exp(-β_t H) / Σ exp(-β_0 H)`.
    pub fn free_energy_ratio(&self, t: f64) -> f64 {
        let part = |b: f64| self.energy.iter().map(|h| (-b * h).exp()).sum::<f64>();
        part(self.schedule.beta(t)) / part(self.schedule.beta(0.0))
    }

    /// `max_s max_y |(π_{β_s} L_s)(y)|` over a grid of `[0, t]`; fails with a
    /// model-consistency error above `tol`.
    pub fn check_stationarity(&self, t: f64, tol: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for k in 0..=100 {
            let s = t * k as f64 / 100.0;
            let pi = boltzmann(&self.energy, self.schedule.beta(s));
            let residual = pi.transpose() * self.model.generator(s);
            worst = worst.max(residual.amax());
        }
        if worst > tol {
            return Err(FkError::ModelConsistency(format!(
                "base dynamics are not stationary for π_β: residual {worst:e} > {tol:e}"
            )));
        }
        Ok(worst)
    }
}
