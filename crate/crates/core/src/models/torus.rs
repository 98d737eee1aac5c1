use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{InitialLaw, Model, StateSpace};
use crate::error::{FkError, Result};

type DriftFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
type PotentialFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Diffusion `dX = b(t, X) dt + σ dW` on the unit torus `[0, 1)^d`, sampled
/// by Euler-Maruyama on a fixed step. This model carries discretization bias.
#[derive(Clone)]
pub struct TorusDiffusionModel {
    dimension: usize,
    drift: DriftFn,
    diffusion_coeff: f64,
    euler_step: f64,
    potential: PotentialFn,
    potential_sup: f64,
    time_constant_potential: bool,
}

impl fmt::Debug for TorusDiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusDiffusionModel")
            .field("dimension", &self.dimension)
            .field("diffusion_coeff", &self.diffusion_coeff)
            .field("euler_step", &self.euler_step)
            .field("potential_sup", &self.potential_sup)
            .finish_non_exhaustive()
    }
}

impl TorusDiffusionModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dimension: usize,
        drift: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        diffusion_coeff: f64,
        euler_step: f64,
        potential: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        potential_sup: f64,
        time_constant_potential: bool,
    ) -> Result<Self> {
        StateSpace::Torus { dimension }.validate()?;
        if !(diffusion_coeff > 0.0) {
            return Err(FkError::Argument("diffusion_coeff must be positive".into()));
        }
        if !(euler_step > 0.0) {
            return Err(FkError::Argument("euler_step must be positive".into()));
        }
        if !(potential_sup >= 0.0 && potential_sup.is_finite()) {
            return Err(FkError::Argument("potential_sup must be finite and nonnegative".into()));
        }
        Ok(Self {
            dimension,
            drift: Arc::new(drift),
            diffusion_coeff,
            euler_step,
            potential: Arc::new(potential),
            potential_sup,
            time_constant_potential,
        })
    }

    pub fn euler_step(&self) -> f64 {
        self.euler_step
    }

    pub fn diffusion_coeff(&self) -> f64 {
        self.diffusion_coeff
    }
}

fn wrap(v: f64) -> f64 {
    let w = v - v.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

impl Model for TorusDiffusionModel {
    type State = Vec<f64>;

    fn state_space(&self) -> StateSpace {
        StateSpace::Torus { dimension: self.dimension }
    }

    fn contains(&self, x: &Vec<f64>) -> bool {
        x.len() == self.dimension && x.iter().all(|v| (0.0..1.0).contains(v))
    }

    fn potential(&self, t: f64, x: &Vec<f64>) -> f64 {
        (self.potential)(t, x).clamp(0.0, self.potential_sup)
    }

    fn potential_sup(&self) -> f64 {
        self.potential_sup
    }

    fn potential_is_time_constant(&self) -> bool {
        self.time_constant_potential
    }

    fn sample_initial<R: Rng + ?Sized>(&self, law: &InitialLaw<Vec<f64>>, rng: &mut R) -> Result<Vec<f64>> {
        match law {
            InitialLaw::Dirac(x) if self.contains(x) => Ok(x.clone()),
            InitialLaw::Dirac(x) => Err(FkError::Domain(format!("initial point {x:?} not on the torus"))),
            InitialLaw::Uniform => Ok((0..self.dimension).map(|_| rng.random::<f64>()).collect()),
            InitialLaw::Categorical(_) => Err(FkError::Argument(
                "categorical initial laws need a finite state space".into(),
            )),
        }
    }

    /// Euler-Maruyama on the grid `s + k · euler_step`, last step truncated at `t`.
    fn extend_free_motion<R: Rng + ?Sized>(
        &self,
        from: &Vec<f64>,
        s: f64,
        t: f64,
        rng: &mut R,
        out: &mut Vec<(f64, Vec<f64>)>,
    ) -> Result<()> {
        let mut x = from.clone();
        let mut time = s;
        while time < t {
            let dt = self.euler_step.min(t - time);
            let b = (self.drift)(time, &x);
            if b.len() != self.dimension || b.iter().any(|v| !v.is_finite()) {
                return Err(FkError::ModelEvaluation(format!("invalid drift {b:?} at t={time}")));
            }
            let scale = self.diffusion_coeff * dt.sqrt();
            for (xi, bi) in x.iter_mut().zip(&b) {
                let z: f64 = rng.sample(StandardNormal);
                *xi = wrap(*xi + bi * dt + scale * z);
            }
            time = if t - time <= self.euler_step { t } else { time + dt };
            out.push((time, x.clone()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;
    use crate::rng::stream;

    #[test]
    fn paths_stay_on_torus_and_follow_grid() {
        let m = builtin::torus_default();
        let p = m.sample_free_motion(&vec![0.5], 0.0, 1.0, &mut stream(2)).unwrap();
        p.validate().unwrap();
        assert_eq!(p.jump_count(), (1.0 / m.euler_step()).round() as usize);
        for (_, x) in p.events() {
            assert!(m.contains(x));
        }
        assert!(m.potential(0.0, p.terminal()) <= m.potential_sup());
    }

    #[test]
    fn invalid_parameters() {
        assert!(TorusDiffusionModel::new(1, |_, _| vec![0.0], 1.0, 0.0, |_, _| 0.0, 1.0, true).is_err());
        assert!(TorusDiffusionModel::new(0, |_, _| vec![], 1.0, 0.1, |_, _| 0.0, 1.0, true).is_err());
        let nan = TorusDiffusionModel::new(1, |_, _| vec![f64::NAN], 1.0, 0.1, |_, _| 0.0, 1.0, true).unwrap();
        let err = nan.sample_free_motion(&vec![0.1], 0.0, 1.0, &mut stream(1)).unwrap_err();
        assert!(matches!(err, FkError::ModelEvaluation(_)));
    }
}
