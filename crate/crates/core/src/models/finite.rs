use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::{InitialLaw, Model, StateSpace};
use crate::error::{FkError, Result};

type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
type PotentialFn = Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>;

/// Generator `L_t` of a finite chain.
#[derive(Clone)]
pub enum RateSchedule {
    Constant(DMatrix<f64>),
    TimeVarying(MatrixFn),
}

/// Potential `V_t` of a finite chain.
#[derive(Clone)]
pub enum PotentialSchedule {
    Constant(Vec<f64>),
    TimeVarying(PotentialFn),
}

/// A finite continuous-time Markov chain with a bounded potential.
#[derive(Clone)]
pub struct FiniteCtmcModel {
    name: String,
    size: usize,
    rates: RateSchedule,
    potential: PotentialSchedule,
    potential_sup: f64,
    rate_sup: f64,
}

impl fmt::Debug for FiniteCtmcModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteCtmcModel")
            .field("name", &self.name)
            .field("size", &self.size)
            .field("potential_sup", &self.potential_sup)
            .field("rate_sup", &self.rate_sup)
            .finish_non_exhaustive()
    }
}

const GENERATOR_TOL: f64 = 1e-10;

fn check_generator(l: &DMatrix<f64>, size: usize, rate_sup: f64, t: f64) -> Result<()> {
    if l.nrows() != size || l.ncols() != size {
        return Err(FkError::ModelEvaluation(format!(
            "rate matrix at t={t} is {}x{}, expected {size}x{size}",
            l.nrows(),
            l.ncols()
        )));
    }
    for x in 0..size {
        let mut row_sum = 0.0;
        let mut scale: f64 = 1.0;
        for y in 0..size {
            let r = l[(x, y)];
            if !r.is_finite() {
                return Err(FkError::ModelEvaluation(format!("non-finite rate L[{x},{y}] at t={t}")));
            }
            if x != y && r < 0.0 {
                return Err(FkError::ModelEvaluation(format!("negative rate L[{x},{y}]={r} at t={t}")));
            }
            row_sum += r;
            scale = scale.max(r.abs());
        }
        if row_sum.abs() > GENERATOR_TOL * scale {
            return Err(FkError::ModelEvaluation(format!("row {x} of L sums to {row_sum} at t={t}")));
        }
        let exit = -l[(x, x)];
        if exit > rate_sup * (1.0 + 1e-12) + 1e-300 {
            return Err(FkError::ModelEvaluation(format!(
                "exit rate {exit} of state {x} exceeds rate_sup {rate_sup} at t={t}"
            )));
        }
    }
    Ok(())
}

impl FiniteCtmcModel {
    /// Builds and validates a model. Time-varying parts are spot-checked on a
    /// grid of `[0, 10]`; sampling re-checks them at every evaluation.
    pub fn new(
        name: impl Into<String>,
        size: usize,
        rates: RateSchedule,
        potential: PotentialSchedule,
        potential_sup: f64,
        rate_sup: f64,
    ) -> Result<Self> {
        StateSpace::Finite { size }.validate()?;
        if !(potential_sup >= 0.0 && potential_sup.is_finite()) {
            return Err(FkError::Argument(format!("potential_sup must be finite and >= 0, got {potential_sup}")));
        }
        if !(rate_sup >= 0.0 && rate_sup.is_finite()) {
            return Err(FkError::Argument(format!("rate_sup must be finite and >= 0, got {rate_sup}")));
        }
        let model = Self {
            name: name.into(),
            size,
            rates,
            potential,
            potential_sup,
            rate_sup,
        };
        if let PotentialSchedule::Constant(v) = &model.potential {
            if v.len() != size {
                return Err(FkError::Argument(format!("potential vector has {} entries for {size} states", v.len())));
            }
        }
        let probes: Vec<f64> = match (&model.rates, &model.potential) {
            (RateSchedule::Constant(_), PotentialSchedule::Constant(_)) => vec![0.0],
            _ => (0..=40).map(|k| 0.25 * k as f64).collect(),
        };
        for &t in &probes {
            check_generator(&model.generator(t), size, rate_sup, t)
                .map_err(|e| FkError::Argument(e.to_string()))?;
            for x in 0..size {
                let v = model.potential_value(t, x);
                if !(v >= 0.0 && v <= potential_sup * (1.0 + 1e-12)) {
                    return Err(FkError::Argument(format!(
                        "potential V_{t}({x}) = {v} outside [0, {potential_sup}]"
                    )));
                }
            }
        }
        Ok(model)
    }

    /// Time-homogeneous constructor from a rate matrix and a potential vector.
    /// The sup bounds are taken as the largest exit rate and largest potential.
    pub fn homogeneous(name: impl Into<String>, generator: DMatrix<f64>, potential: Vec<f64>) -> Result<Self> {
        let size = generator.nrows();
        let rate_sup = (0..size).map(|x| -generator[(x, x)]).fold(0.0, f64::max);
        let potential_sup = potential.iter().copied().fold(0.0, f64::max);
        Self::new(
            name,
            size,
            RateSchedule::Constant(generator),
            PotentialSchedule::Constant(potential),
            potential_sup,
            rate_sup,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn rate_sup(&self) -> f64 {
        self.rate_sup
    }

    pub fn rates(&self) -> &RateSchedule {
        &self.rates
    }

    pub fn potential_schedule(&self) -> &PotentialSchedule {
        &self.potential
    }

    pub fn is_time_homogeneous(&self) -> bool {
        matches!(
            (&self.rates, &self.potential),
            (RateSchedule::Constant(_), PotentialSchedule::Constant(_))
        )
    }

    /// `L_t`.
    pub fn generator(&self, t: f64) -> DMatrix<f64> {
        match &self.rates {
            RateSchedule::Constant(l) => l.clone(),
            RateSchedule::TimeVarying(f) => f(t),
        }
    }

    fn potential_value(&self, t: f64, x: usize) -> f64 {
        match &self.potential {
            PotentialSchedule::Constant(v) => v[x],
            PotentialSchedule::TimeVarying(f) => f(t, x),
        }
    }

    /// `(V_t(x))_x`.
    pub fn potential_vector(&self, t: f64) -> DVector<f64> {
        DVector::from_fn(self.size, |x, _| self.potential_value(t, x))
    }

    /// `L_t - diag(V_t)`, the generator of the unnormalized Feynman-Kac flow.
    pub fn feynman_kac_generator(&self, t: f64) -> DMatrix<f64> {
        let mut a = self.generator(t);
        for x in 0..self.size {
            a[(x, x)] -= self.potential_value(t, x);
        }
        a
    }

    /// The same dynamics with `V ≡ 0`.
    pub fn without_potential(&self) -> Self {
        Self {
            name: format!("{}-free", self.name),
            potential: PotentialSchedule::Constant(vec![0.0; self.size]),
            potential_sup: 0.0,
            ..self.clone()
        }
    }

    fn jump_target<R: Rng + ?Sized>(&self, x: usize, t: f64, rng: &mut R) -> Result<Option<usize>> {
        let pick = |l: &DMatrix<f64>, rng: &mut R| -> Result<Option<usize>> {
            let exit = -l[(x, x)];
            if !exit.is_finite() {
                return Err(FkError::ModelEvaluation(format!("non-finite exit rate at t={t}")));
            }
            if exit > self.rate_sup * (1.0 + 1e-12) {
                return Err(FkError::ModelEvaluation(format!(
                    "exit rate {exit} of state {x} exceeds rate_sup {} at t={t}",
                    self.rate_sup
                )));
            }
            let u = rng.random::<f64>() * self.rate_sup;
            if u >= exit {
                return Ok(None);
            }
            let mut acc = 0.0;
            let mut last = None;
            for y in 0..self.size {
                if y == x {
                    continue;
                }
                let r = l[(x, y)];
                if !(r >= 0.0) || !r.is_finite() {
                    return Err(FkError::ModelEvaluation(format!("invalid rate L[{x},{y}]={r} at t={t}")));
                }
                if r > 0.0 {
                    last = Some(y);
                }
                acc += r;
                if u < acc {
                    return Ok(Some(y));
                }
            }
            Ok(last)
        };
        match &self.rates {
            RateSchedule::Constant(l) => pick(l, rng),
            RateSchedule::TimeVarying(f) => pick(&f(t), rng),
        }
    }
}

impl Model for FiniteCtmcModel {
    type State = usize;

    fn state_space(&self) -> StateSpace {
        StateSpace::Finite { size: self.size }
    }

    fn contains(&self, x: &usize) -> bool {
        *x < self.size
    }

    fn potential(&self, t: f64, x: &usize) -> f64 {
        self.potential_value(t, *x)
    }

    fn potential_sup(&self) -> f64 {
        self.potential_sup
    }

    fn potential_is_time_constant(&self) -> bool {
        matches!(self.potential, PotentialSchedule::Constant(_))
    }

    fn sample_initial<R: Rng + ?Sized>(&self, law: &InitialLaw<usize>, rng: &mut R) -> Result<usize> {
        match law {
            InitialLaw::Dirac(x) if *x < self.size => Ok(*x),
            InitialLaw::Dirac(x) => Err(FkError::Domain(format!("initial state {x} out of range"))),
            InitialLaw::Uniform => Ok(rng.random_range(0..self.size)),
            InitialLaw::Categorical(w) => {
                InitialLaw::<usize>::check_weights(w, self.size)?;
                let u = rng.random::<f64>();
                let mut acc = 0.0;
                for (x, p) in w.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Ok(x);
                    }
                }
                Ok(w.iter().rposition(|p| *p > 0.0).unwrap_or(0))
            }
        }
    }

    /// Thinning against `rate_sup`: candidate times form a Poisson process of
    /// rate `rate_sup`; a candidate at time `τ` moves `x → y` with probability
    /// `L_τ(x, y) / rate_sup`.
    fn extend_free_motion<R: Rng + ?Sized>(
        &self,
        from: &usize,
        s: f64,
        t: f64,
        rng: &mut R,
        out: &mut Vec<(f64, usize)>,
    ) -> Result<()> {
        if self.rate_sup == 0.0 || t <= s {
            return Ok(());
        }
        let clock = Exp::new(self.rate_sup).map_err(|e| FkError::ModelEvaluation(e.to_string()))?;
        let mut x = *from;
        let mut time = s;
        loop {
            time += clock.sample(rng);
            if time > t {
                return Ok(());
            }
            if let Some(y) = self.jump_target(x, time, rng)? {
                out.push((time, y));
                x = y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;
    use crate::rng::stream;

    #[test]
    fn rejects_bad_generators() {
        let bad_rows = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 2.0, -2.0]);
        assert!(FiniteCtmcModel::homogeneous("x", bad_rows, vec![0.0, 1.0]).is_err());
        let negative = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, -2.0]);
        assert!(FiniteCtmcModel::homogeneous("x", negative, vec![0.0, 1.0]).is_err());
        let one = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert!(FiniteCtmcModel::homogeneous("x", one, vec![0.0]).is_err());
        let l = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let low_sup = FiniteCtmcModel::new(
            "x",
            2,
            RateSchedule::Constant(l.clone()),
            PotentialSchedule::Constant(vec![0.0, 1.0]),
            1.0,
            1.5,
        );
        assert!(low_sup.is_err());
        let v_over = FiniteCtmcModel::new(
            "x",
            2,
            RateSchedule::Constant(l),
            PotentialSchedule::Constant(vec![0.0, 1.0]),
            0.5,
            2.0,
        );
        assert!(v_over.is_err());
    }

    #[test]
    fn nonfinite_rates_are_model_errors() {
        let model = FiniteCtmcModel::new(
            "blowup",
            2,
            RateSchedule::TimeVarying(Arc::new(|t| {
                let r = if t > 10.5 { f64::NAN } else { 1.0 };
                DMatrix::from_row_slice(2, 2, &[-r, r, r, -r])
            })),
            PotentialSchedule::Constant(vec![0.0, 0.0]),
            0.0,
            1.0,
        )
        .unwrap();
        let err = model.sample_free_motion(&0, 10.5, 20.0, &mut stream(1)).unwrap_err();
        assert!(matches!(err, FkError::ModelEvaluation(_)));
    }

    #[test]
    fn zero_length_interval_has_no_events() {
        let m2 = builtin::m2();
        let p = m2.sample_free_motion(&0, 0.0, 0.0, &mut stream(3)).unwrap();
        assert_eq!(p.jump_count(), 0);
        assert_eq!(*p.terminal(), 0);
    }

    #[test]
    fn events_strictly_increase_and_alternate() {
        let m2 = builtin::m2();
        for seed in 0..200 {
            let p = m2.sample_free_motion(&0, 0.0, 3.0, &mut stream(seed)).unwrap();
            p.validate().unwrap();
            let mut prev = 0usize;
            for (time, x) in p.events() {
                assert_eq!(*p.eval(*time).unwrap(), *x);
                assert_ne!(*x, prev);
                prev = *x;
            }
        }
    }

    #[test]
    fn potential_is_bounded() {
        let models = [builtin::m2(), builtin::ring4()];
        let mut rng = stream(5);
        for model in &models {
            for _ in 0..10_000 {
                let t = rng.random::<f64>() * 10.0;
                let x = rng.random_range(0..model.size());
                let v = model.potential(t, &x);
                assert!((0.0..=model.potential_sup()).contains(&v));
            }
        }
        let m2 = builtin::m2();
        assert_eq!(m2.potential(0.3, &0), 0.0);
        assert_eq!(m2.potential(7.0, &1), 1.0);
    }

    #[test]
    fn initial_laws() {
        let m2 = builtin::m2();
        let mut rng = stream(9);
        assert_eq!(m2.sample_initial(&InitialLaw::Dirac(1), &mut rng).unwrap(), 1);
        assert!(m2.sample_initial(&InitialLaw::Dirac(2), &mut rng).is_err());
        assert!(m2.sample_initial(&InitialLaw::Categorical(vec![0.5, 0.4]), &mut rng).is_err());
        assert!(m2.sample_initial(&InitialLaw::Categorical(vec![1.5, -0.5]), &mut rng).is_err());
        let hits = (0..20_000)
            .filter(|_| m2.sample_initial(&InitialLaw::Categorical(vec![0.25, 0.75]), &mut rng).unwrap() == 1)
            .count() as f64
            / 20_000.0;
        assert!((hits - 0.75).abs() < 3.0 * (0.75f64 * 0.25 / 20_000.0).sqrt() + 1e-3);
    }
}
