//! Càdlàg trajectories stored as change-points, and functionals on them.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::models::Model;
use crate::numerics::adaptive_simpson;

/// Absolute tolerance for quadrature of time-dependent integrands.
pub const QUADRATURE_TOL: f64 = 1e-10;

/// A piecewise-constant right-continuous path on `[start_time, end_time]`.
///
/// Serialized as `{t0, t1, x0, events: [[time, state], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CadlagPath<S> {
    #[serde(rename = "t0")]
    start_time: f64,
    #[serde(rename = "t1")]
    end_time: f64,
    #[serde(rename = "x0")]
    initial_state: S,
    events: Vec<(f64, S)>,
}

impl<S: Clone + PartialEq> CadlagPath<S> {
    /// The constant path at `state` on `[start, end]`.
    pub fn constant(start: f64, end: f64, state: S) -> Self {
        Self {
            start_time: start,
            end_time: end.max(start),
            initial_state: state,
            events: Vec::new(),
        }
    }

    pub fn from_events(start: f64, end: f64, initial: S, events: Vec<(f64, S)>) -> Result<Self> {
        let p = Self {
            start_time: start,
            end_time: end,
            initial_state: initial,
            events,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks strictly increasing event times inside `(start_time, end_time]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.start_time.is_finite() && self.end_time.is_finite()) || self.end_time < self.start_time {
            return Err(FkError::Domain(format!(
                "invalid path domain [{}, {}]",
                self.start_time, self.end_time
            )));
        }
        let mut prev = self.start_time;
        for (k, (t, _)) in self.events.iter().enumerate() {
            if !(*t > prev) || *t > self.end_time {
                return Err(FkError::Domain(format!(
                    "event {k} at time {t} breaks ordering within ({}, {}]",
                    self.start_time, self.end_time
                )));
            }
            prev = *t;
        }
        Ok(())
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn end_time(&self) -> f64 {
        self.end_time
    }

    pub fn initial_state(&self) -> &S {
        &self.initial_state
    }

    pub fn events(&self) -> &[(f64, S)] {
        &self.events
    }

    pub fn jump_count(&self) -> usize {
        self.events.len()
    }

    pub fn terminal(&self) -> &S {
        self.events.last().map_or(&self.initial_state, |(_, x)| x)
    }

    /// Right-continuous evaluation, `s` clamped to the domain.
    pub fn at(&self, s: f64) -> &S {
        let k = self.events.partition_point(|(t, _)| *t <= s);
        if k == 0 {
            &self.initial_state
        } else {
            &self.events[k - 1].1
        }
    }

    pub fn eval(&self, s: f64) -> Result<&S> {
        if s < self.start_time || s > self.end_time || s.is_nan() {
            return Err(FkError::Domain(format!(
                "time {s} outside [{}, {}]",
                self.start_time, self.end_time
            )));
        }
        Ok(self.at(s))
    }

    /// Appends a jump to `state` at `time` and extends the domain to cover it.
    pub(crate) fn push_jump(&mut self, time: f64, state: S) {
        debug_assert!(time > self.events.last().map_or(self.start_time, |e| e.0));
        self.events.push((time, state));
        if time > self.end_time {
            self.end_time = time;
        }
    }

    /// Sets the state from `time` on, where `time` is at or after the last
    /// event; an event already at `time` is overwritten.
    pub(crate) fn set_from(&mut self, time: f64, state: S) {
        if self.events.last().is_some_and(|e| e.0 == time) {
            self.events.pop();
        }
        let before = self.events.last().map_or(&self.initial_state, |e| &e.1);
        if *before != state {
            self.push_jump(time, state);
        } else if time > self.end_time {
            self.end_time = time;
        }
    }

    pub(crate) fn extend_to(&mut self, time: f64) {
        if time > self.end_time {
            self.end_time = time;
        }
    }

    /// The restriction of the path to `[start_time, s]`.
    pub fn truncated(&self, s: f64) -> Result<Self> {
        if s < self.start_time || s > self.end_time {
            return Err(FkError::Domain(format!(
                "cannot truncate [{}, {}] at {s}",
                self.start_time, self.end_time
            )));
        }
        let k = self.events.partition_point(|(t, _)| *t <= s);
        Ok(Self {
            start_time: self.start_time,
            end_time: s,
            initial_state: self.initial_state.clone(),
            events: self.events[..k].to_vec(),
        })
    }

    /// Constant pieces `(from, to, state)` of the path clipped to `[a, b]`.
    pub fn segments(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64, &S)> + '_ {
        let first = self.events.partition_point(|(t, _)| *t <= a);
        let head_state = if first == 0 {
            &self.initial_state
        } else {
            &self.events[first - 1].1
        };
        let tail = &self.events[first..];
        let mut cursor = a;
        let mut state = head_state;
        let mut idx = 0usize;
        let mut done = b <= a;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            if idx < tail.len() && tail[idx].0 < b {
                let (t, ref x) = tail[idx];
                let seg = (cursor, t, state);
                cursor = t;
                state = x;
                idx += 1;
                Some(seg)
            } else {
                done = true;
                Some((cursor, b, state))
            }
        })
    }
}

/// Integral of `model.potential` along `path` over `[a, b]`.
///
/// Closed form per constant piece for time-constant potentials, adaptive
/// Simpson per piece otherwise.
pub fn integrate_potential<M: Model>(
    path: &CadlagPath<M::State>,
    model: &M,
    a: f64,
    b: f64,
) -> Result<f64> {
    if a < path.start_time || b > path.end_time || a > b {
        return Err(FkError::Domain(format!(
            "integration window [{a}, {b}] outside [{}, {}]",
            path.start_time, path.end_time
        )));
    }
    Ok(integrate_segments(path.segments(a, b), model))
}

pub(crate) fn integrate_segments<'a, M: Model>(
    segments: impl Iterator<Item = (f64, f64, &'a M::State)>,
    model: &M,
) -> f64 {
    let constant = model.potential_is_time_constant();
    segments
        .map(|(u, v, x)| {
            if v <= u {
                0.0
            } else if constant {
                model.potential(u, x) * (v - u)
            } else {
                adaptive_simpson(&|s| model.potential(s, x), u, v, QUADRATURE_TOL)
            }
        })
        .sum()
}

/// Ancestral-line adoption at time `s`: the adopter's history is replaced by
/// the donor's history on `[start, s]`.
pub fn splice_adopt<S: Clone + PartialEq>(
    adopter: &CadlagPath<S>,
    donor: &CadlagPath<S>,
    s: f64,
) -> Result<CadlagPath<S>> {
    if adopter.start_time != donor.start_time {
        return Err(FkError::Domain(format!(
            "mismatched start times {} and {}",
            adopter.start_time, donor.start_time
        )));
    }
    if adopter.end_time < s || donor.end_time < s {
        return Err(FkError::Domain(format!(
            "adoption time {s} beyond path domains (adopter ends {}, donor ends {})",
            adopter.end_time, donor.end_time
        )));
    }
    donor.truncated(s)
}

type StateFn<S> = Arc<dyn Fn(&S) -> f64 + Send + Sync>;
type TimeStateFn<S> = Arc<dyn Fn(f64, &S) -> f64 + Send + Sync>;

/// A real-valued functional of a path.
#[derive(Clone)]
pub enum PathFunctional<S> {
    /// `f(x_end)`.
    Terminal(StateFn<S>),
    /// `f(x_s)` at a fixed time `s`.
    AtTime(f64, StateFn<S>),
    /// `∫ g(s, x_s) ds` over the whole domain.
    TimeIntegral(TimeStateFn<S>),
    JumpCount,
    Product(Vec<PathFunctional<S>>),
}

impl<S> fmt::Debug for PathFunctional<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Terminal(_) => write!(f, "Terminal(..)"),
            Self::AtTime(s, _) => write!(f, "AtTime({s}, ..)"),
            Self::TimeIntegral(_) => write!(f, "TimeIntegral(..)"),
            Self::JumpCount => write!(f, "JumpCount"),
            Self::Product(v) => f.debug_tuple("Product").field(v).finish(),
        }
    }
}

impl<S: Clone + PartialEq + 'static> PathFunctional<S> {
    pub fn terminal(f: impl Fn(&S) -> f64 + Send + Sync + 'static) -> Self {
        Self::Terminal(Arc::new(f))
    }

    pub fn at_time(s: f64, f: impl Fn(&S) -> f64 + Send + Sync + 'static) -> Self {
        Self::AtTime(s, Arc::new(f))
    }

    pub fn time_integral(g: impl Fn(f64, &S) -> f64 + Send + Sync + 'static) -> Self {
        Self::TimeIntegral(Arc::new(g))
    }

    pub fn constant(c: f64) -> Self {
        Self::terminal(move |_| c)
    }

    pub fn evaluate(&self, path: &CadlagPath<S>) -> f64 {
        match self {
            Self::Terminal(f) => f(path.terminal()),
            Self::AtTime(s, f) => f(path.at(*s)),
            Self::TimeIntegral(g) => path
                .segments(path.start_time, path.end_time)
                .map(|(u, v, x)| adaptive_simpson(&|s| g(s, x), u, v, QUADRATURE_TOL))
                .sum(),
            Self::JumpCount => path.jump_count() as f64,
            Self::Product(parts) => parts.iter().map(|p| p.evaluate(path)).product(),
        }
    }
}

impl PathFunctional<usize> {
    /// `1{x_end = state}`.
    pub fn terminal_indicator(state: usize) -> Self {
        Self::terminal(move |x| f64::from(u8::from(*x == state)))
    }

    /// Time spent in `state`.
    pub fn occupation_time(state: usize) -> Self {
        Self::time_integral(move |_, x| f64::from(u8::from(*x == state)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;
    use proptest::prelude::*;

    fn two_jump() -> CadlagPath<usize> {
        CadlagPath::from_events(0.0, 1.0, 0, vec![(0.3, 1), (0.7, 0)]).unwrap()
    }

    #[test]
    fn right_continuous_eval() {
        let c = CadlagPath::constant(0.0, 1.0, 0usize);
        assert_eq!(*c.eval(0.5).unwrap(), 0);
        let p = CadlagPath::from_events(0.0, 1.0, 0usize, vec![(0.3, 1)]).unwrap();
        assert_eq!(*p.eval(0.3).unwrap(), 1);
        assert_eq!(*p.eval(0.2999).unwrap(), 0);
        assert_eq!(*two_jump().eval(0.699).unwrap(), 1);
        assert_eq!(*two_jump().eval(0.7).unwrap(), 0);
        assert!(matches!(two_jump().eval(1.2), Err(FkError::Domain(_))));
        assert!(matches!(two_jump().eval(-0.1), Err(FkError::Domain(_))));
    }

    #[test]
    fn rejects_unordered_events() {
        assert!(CadlagPath::from_events(0.0, 1.0, 0usize, vec![(0.5, 1), (0.5, 0)]).is_err());
        assert!(CadlagPath::from_events(0.0, 1.0, 0usize, vec![(0.0, 1)]).is_err());
        assert!(CadlagPath::from_events(0.0, 1.0, 0usize, vec![(1.5, 1)]).is_err());
        assert!(CadlagPath::from_events(0.0, 1.0, 0usize, vec![(1.0, 1)]).is_ok());
    }

    #[test]
    fn potential_integrals_on_m2() {
        let m2 = builtin::m2();
        let zero = CadlagPath::constant(0.0, 1.0, 0usize);
        assert_eq!(integrate_potential(&zero, &m2, 0.0, 1.0).unwrap(), 0.0);
        let one = CadlagPath::constant(0.0, 2.0, 1usize);
        assert_eq!(integrate_potential(&one, &m2, 0.0, 2.0).unwrap(), 2.0);
        let p = CadlagPath::from_events(0.0, 1.0, 0usize, vec![(0.4, 1)]).unwrap();
        assert!((integrate_potential(&p, &m2, 0.0, 1.0).unwrap() - 0.6).abs() < 1e-15);
        assert!(integrate_potential(&p, &m2, 0.0, 1.5).is_err());
    }

    #[test]
    fn time_dependent_potential_uses_quadrature() {
        let model = builtin::jarzynski_two_state(
            crate::models::BetaSchedule::custom(|t| t - t.ln_1p(), |t| t / (1.0 + t), 1.0),
        )
        .unwrap();
        let p = CadlagPath::constant(0.0, 2.0, 1usize);
        // V_t(1) = t / (1 + t), integral over [0,2] is 2 - ln 3.
        let v = integrate_potential(&p, model.model(), 0.0, 2.0).unwrap();
        assert!((v - (2.0 - 3f64.ln())).abs() < 1e-10);
    }

    #[test]
    fn splice_semantics() {
        let donor = CadlagPath::constant(0.0, 0.5, 1usize);
        let adopter = CadlagPath::constant(0.0, 0.5, 0usize);
        assert_eq!(splice_adopt(&adopter, &donor, 0.5).unwrap(), donor);
        assert_eq!(splice_adopt(&donor, &donor, 0.5).unwrap(), donor);
        let d = two_jump();
        let a = CadlagPath::constant(0.0, 1.0, 0usize);
        let s = splice_adopt(&a, &d, 0.8).unwrap();
        for u in [0.0, 0.29, 0.3, 0.5, 0.7, 0.8] {
            assert_eq!(s.eval(u).unwrap(), d.eval(u).unwrap());
        }
        let short = CadlagPath::constant(0.0, 0.2, 0usize);
        assert!(splice_adopt(&short, &d, 0.5).is_err());
        let shifted = CadlagPath::constant(0.1, 1.0, 0usize);
        assert!(splice_adopt(&shifted, &d, 0.5).is_err());
    }

    #[test]
    fn functionals() {
        let p = two_jump();
        assert_eq!(PathFunctional::terminal_indicator(0).evaluate(&p), 1.0);
        assert_eq!(PathFunctional::<usize>::JumpCount.evaluate(&p), 2.0);
        assert!((PathFunctional::occupation_time(1).evaluate(&p) - 0.4).abs() < 1e-14);
        assert_eq!(PathFunctional::at_time(0.5, |x: &usize| *x as f64).evaluate(&p), 1.0);
        let prod = PathFunctional::Product(vec![
            PathFunctional::<usize>::JumpCount,
            PathFunctional::constant(3.0),
        ]);
        assert_eq!(prod.evaluate(&p), 6.0);
    }

    #[test]
    fn json_layout() {
        let j = serde_json::to_value(two_jump()).unwrap();
        assert_eq!(
            j,
            serde_json::json!({"t0": 0.0, "t1": 1.0, "x0": 0, "events": [[0.3, 1], [0.7, 0]]})
        );
        let back: CadlagPath<usize> = serde_json::from_value(j).unwrap();
        assert_eq!(back, two_jump());
    }

    fn arb_path() -> impl Strategy<Value = CadlagPath<usize>> {
        proptest::collection::vec((0.0f64..5.0, 0usize..2), 0..20).prop_map(|mut raw| {
            raw.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            raw.dedup_by(|a, b| a.0 == b.0);
            let events: Vec<_> = raw.into_iter().filter(|e| e.0 > 0.0).collect();
            CadlagPath::from_events(0.0, 5.0, 0, events).unwrap()
        })
    }

    proptest! {
        #[test]
        fn integral_is_additive(path in arb_path(), a in 0.0f64..5.0, b in 0.0f64..5.0, c in 0.0f64..5.0) {
            let mut w = [a, b, c];
            w.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let m2 = builtin::m2();
            let left = integrate_potential(&path, &m2, w[0], w[1]).unwrap();
            let right = integrate_potential(&path, &m2, w[1], w[2]).unwrap();
            let whole = integrate_potential(&path, &m2, w[0], w[2]).unwrap();
            prop_assert!((left + right - whole).abs() <= 1e-12);
        }

        #[test]
        fn truncation_preserves_values(path in arb_path(), s in 0.0f64..5.0, u in 0.0f64..1.0) {
            let tr = path.truncated(s).unwrap();
            tr.validate().unwrap();
            let probe = u * s;
            prop_assert_eq!(tr.eval(probe).unwrap(), path.eval(probe).unwrap());
        }
    }
}
