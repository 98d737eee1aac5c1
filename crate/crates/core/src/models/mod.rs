//! Reference processes `X_t` and potentials `V_t`.
//!
//! A [`Model`] knows how to sample the potential-free motion of `X` exactly
//! (finite chains, by thinning) or on a time grid (torus diffusions), and how
//! to evaluate the bounded potential.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::paths::CadlagPath;

pub mod builtin;
pub mod conditions;
mod finite;
mod jarzynski;
mod torus;

pub use finite::{FiniteCtmcModel, PotentialSchedule, RateSchedule};
pub use jarzynski::{BetaSchedule, JarzynskiModel};
pub use torus::TorusDiffusionModel;

/// State spaces supported by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSpace {
    Finite { size: usize },
    Torus { dimension: usize },
}

impl StateSpace {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StateSpace::Finite { size } if size < 2 => Err(FkError::Argument(format!(
                "finite state space needs at least 2 states, got {size}"
            ))),
            StateSpace::Torus { dimension } if dimension < 1 => Err(FkError::Argument(
                "torus dimension must be at least 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Law of the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw<S> {
    Dirac(S),
    Categorical(Vec<f64>),
    Uniform,
}

impl<S> InitialLaw<S> {
    pub(crate) fn check_weights(weights: &[f64], size: usize) -> Result<()> {
        if weights.len() != size {
            return Err(FkError::Argument(format!(
                "categorical law has {} weights for {size} states",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(FkError::Argument("categorical weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(FkError::Argument(format!(
                "categorical weights sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// A time-inhomogeneous Markov process together with a bounded potential.
pub trait Model: Send + Sync {
    type State: Clone + PartialEq + fmt::Debug + Send + Sync + 'static;

    fn state_space(&self) -> StateSpace;

    fn contains(&self, x: &Self::State) -> bool;

    /// `V_t(x)`, always within `[0, potential_sup]`.
    fn potential(&self, t: f64, x: &Self::State) -> f64;

    fn potential_sup(&self) -> f64;

    /// True when `V_t` does not depend on `t`.
    fn potential_is_time_constant(&self) -> bool;

    fn sample_initial<R: Rng + ?Sized>(
        &self,
        law: &InitialLaw<Self::State>,
        rng: &mut R,
    ) -> Result<Self::State>;

    /// Samples the potential-free motion on `(s, t]` started from `from` at
    /// time `s`, appending change-points to `out`.
    fn extend_free_motion<R: Rng + ?Sized>(
        &self,
        from: &Self::State,
        s: f64,
        t: f64,
        rng: &mut R,
        out: &mut Vec<(f64, Self::State)>,
    ) -> Result<()>;

    /// The potential-free motion on `[s, t]` started at `start`.
    fn sample_free_motion<R: Rng + ?Sized>(
        &self,
        start: &Self::State,
        s: f64,
        t: f64,
        rng: &mut R,
    ) -> Result<CadlagPath<Self::State>> {
        if !(s <= t) {
            return Err(FkError::Argument(format!("free motion needs s <= t, got [{s}, {t}]")));
        }
        if !self.contains(start) {
            return Err(FkError::Domain(format!("start state {start:?} not in the state space")));
        }
        let mut events = Vec::new();
        self.extend_free_motion(start, s, t, rng, &mut events)?;
        CadlagPath::from_events(s, t, start.clone(), events)
    }
}
