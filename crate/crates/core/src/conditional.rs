//! The dual system with its first ancestral line frozen.
//!
//! Line 0 replays a given path. Each free line follows the reference
//! process and, at rate `V_s`, adopts the ancestral line of the frozen
//! particle with probability `2/N` or of a uniformly chosen other free
//! particle otherwise. For `N = 2` every selection targets the frozen line.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::error::{FkError, Result};
use crate::mean_field::{accept_selection, check_common_args, Walker};
use crate::models::{InitialLaw, Model};
use crate::paths::{integrate_potential, CadlagPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionTarget {
    Frozen,
    /// Index of the adopted free line (1-based line index, the frozen line is 0).
    Peer(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualSelectionEvent {
    pub time: f64,
    /// Line index of the jumping particle, in `1..N`.
    pub jumper: usize,
    pub target: SelectionTarget,
}

#[derive(Debug, Clone)]
pub struct DualSystem<S> {
    n_particles: usize,
    horizon: f64,
    frozen_line: CadlagPath<S>,
    free_lines: Vec<CadlagPath<S>>,
    free_trajectories: Vec<CadlagPath<S>>,
    selection_log: Vec<DualSelectionEvent>,
}

/// Runs the conditional system given `frozen` on `[0, t]`; the `N - 1` free
/// particles start i.i.d. from `init`.
pub fn simulate_conditional<M, R>(
    model: &M,
    n: usize,
    t: f64,
    frozen: &CadlagPath<M::State>,
    init: &InitialLaw<M::State>,
    rng: &mut R,
) -> Result<DualSystem<M::State>>
where
    M: Model,
    R: Rng + ?Sized,
{
    let vstar = model.potential_sup();
    check_common_args(n, t, vstar)?;
    if frozen.start_time() != 0.0 || frozen.end_time() != t {
        return Err(FkError::Argument(format!(
            "frozen path is defined on [{}, {}], expected [0, {t}]",
            frozen.start_time(),
            frozen.end_time()
        )));
    }
    frozen.validate().map_err(|e| FkError::Argument(e.to_string()))?;
    if !model.contains(frozen.initial_state()) {
        return Err(FkError::Argument("frozen path starts outside the state space".into()));
    }

    let free = n - 1;
    let mut walkers = Vec::with_capacity(free);
    for _ in 0..free {
        walkers.push(Walker::new(model.sample_initial(init, rng)?, 0.0));
    }
    let frozen_prob = 2.0 / n as f64;
    let mut buf = Vec::new();
    let mut log = Vec::new();
    if vstar > 0.0 {
        let clock = Exp::new(free as f64 * vstar).map_err(|e| FkError::Argument(e.to_string()))?;
        let mut s = 0.0;
        loop {
            s += clock.sample(rng);
            if s > t {
                break;
            }
            let i = rng.random_range(0..free);
            walkers[i].advance(model, s, rng, &mut buf)?;
            let v = model.potential(s, &walkers[i].state);
            if !accept_selection(v, vstar, s, rng)? {
                continue;
            }
            let target = if free == 1 || rng.random::<f64>() < frozen_prob {
                SelectionTarget::Frozen
            } else {
                // Uniform among the free - 1 peers other than i.
                let mut j = rng.random_range(0..free - 1);
                if j >= i {
                    j += 1;
                }
                SelectionTarget::Peer(j + 1)
            };
            match target {
                SelectionTarget::Frozen => {
                    let line = frozen.truncated(s)?;
                    let state = frozen.at(s).clone();
                    walkers[i].adopt(line, state, s);
                }
                SelectionTarget::Peer(j) => {
                    let j = j - 1;
                    walkers[j].advance(model, s, rng, &mut buf)?;
                    let (line, state) = (walkers[j].line.clone(), walkers[j].state.clone());
                    walkers[i].adopt(line, state, s);
                }
            }
            log.push(DualSelectionEvent { time: s, jumper: i + 1, target });
        }
    }
    for w in &mut walkers {
        w.advance(model, t, rng, &mut buf)?;
    }
    let (free_lines, free_trajectories) = walkers.into_iter().map(|w| (w.line, w.trajectory)).unzip();
    Ok(DualSystem {
        n_particles: n,
        horizon: t,
        frozen_line: frozen.clone(),
        free_lines,
        free_trajectories,
        selection_log: log,
    })
}

impl<S: Clone + PartialEq> DualSystem<S> {
    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn frozen_line(&self) -> &CadlagPath<S> {
        &self.frozen_line
    }

    pub fn free_lines(&self) -> &[CadlagPath<S>] {
        &self.free_lines
    }

    pub fn free_trajectories(&self) -> &[CadlagPath<S>] {
        &self.free_trajectories
    }

    /// Line `k`, with `k = 0` the frozen line.
    pub fn line(&self, k: usize) -> &CadlagPath<S> {
        if k == 0 {
            &self.frozen_line
        } else {
            &self.free_lines[k - 1]
        }
    }

    pub fn selection_log(&self) -> &[DualSelectionEvent] {
        &self.selection_log
    }

    /// `(frozen-targeted, peer-targeted)` selection counts.
    pub fn target_histogram(&self) -> (usize, usize) {
        let frozen = self
            .selection_log
            .iter()
            .filter(|e| e.target == SelectionTarget::Frozen)
            .count();
        (frozen, self.selection_log.len() - frozen)
    }
}

/// `exp(-∫_0^t V_s(frozen_s) ds)`.
pub fn dual_weight<M: Model>(frozen: &CadlagPath<M::State>, model: &M) -> Result<f64> {
    Ok((-integrate_potential(frozen, model, frozen.start_time(), frozen.end_time())?).exp())
}

/// Compares the two forms of the selection drift of free particle `i` in a
/// configuration `x^1..x^n` (index 0 is the frozen particle):
///
/// * `V(x^i) [(1 - 2/n) m(x^{-{1,i}})(f) + (2/n) f(x^1) - f(x^i)]`
/// * `(1 - 1/n) V(x^i) [m(x^{-1})(f) - f(x^i)] + (2/n) V(x^i) [f(x^1) - f(x^i)]`
///
/// Both are evaluated on centred differences `f(·) - f(x^i)` and the largest
/// absolute gap over `i` is returned.
pub fn dual_generator_identity_check<S>(
    potential: impl Fn(&S) -> f64,
    f: impl Fn(&S) -> f64,
    config: &[S],
) -> Result<f64> {
    let n = config.len();
    if n < 3 {
        return Err(FkError::Argument(format!("identity check needs n >= 3, got {n}")));
    }
    let nf = n as f64;
    let values: Vec<f64> = config.iter().map(&f).collect();
    let mut worst: f64 = 0.0;
    for i in 1..n {
        let v = potential(&config[i]);
        let fi = values[i];
        let to_frozen = values[0] - fi;
        let peers: f64 = (1..n).filter(|&j| j != i).map(|j| values[j] - fi).sum::<f64>() / (nf - 2.0);
        let lhs = v * ((1.0 - 2.0 / nf) * peers + (2.0 / nf) * to_frozen);
        let all_free: f64 = (1..n).map(|j| values[j] - fi).sum::<f64>() / (nf - 1.0);
        let rhs = (1.0 - 1.0 / nf) * v * all_free + (2.0 / nf) * v * to_frozen;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;
    use crate::rng::stream;

    fn frozen_m2(seed: u64) -> CadlagPath<usize> {
        builtin::m2().sample_free_motion(&0, 0.0, 1.0, &mut stream(seed)).unwrap()
    }

    #[test]
    fn frozen_line_is_replayed_exactly() {
        let m2 = builtin::m2();
        for seed in 0..30 {
            let x = frozen_m2(seed);
            let d = simulate_conditional(&m2, 5, 1.0, &x, &InitialLaw::Dirac(0), &mut stream(seed + 100)).unwrap();
            assert_eq!(d.frozen_line(), &x);
            for l in d.free_lines() {
                l.validate().unwrap();
                assert_eq!((l.start_time(), l.end_time()), (0.0, 1.0));
            }
        }
    }

    #[test]
    fn zero_potential_no_selection() {
        let free = builtin::m2().without_potential();
        let x = frozen_m2(1);
        let d = simulate_conditional(&free, 4, 1.0, &x, &InitialLaw::Uniform, &mut stream(2)).unwrap();
        assert!(d.selection_log().is_empty());
        assert_eq!(d.free_lines(), d.free_trajectories());
    }

    #[test]
    fn two_particles_always_target_frozen() {
        let m2 = builtin::m2();
        let mut total = 0;
        for seed in 0..200 {
            let x = CadlagPath::constant(0.0, 1.0, 1usize);
            let d = simulate_conditional(&m2, 2, 1.0, &x, &InitialLaw::Dirac(1), &mut stream(seed)).unwrap();
            let (fz, peer) = d.target_histogram();
            assert_eq!(peer, 0);
            total += fz;
        }
        assert!(total > 0);
    }

    #[test]
    fn adoption_from_frozen_copies_history() {
        let m2 = builtin::m2();
        let x = CadlagPath::from_events(0.0, 1.0, 1usize, vec![(0.9, 0)]).unwrap();
        let d = simulate_conditional(&m2, 2, 1.0, &x, &InitialLaw::Dirac(1), &mut stream(12)).unwrap();
        if let Some(last) = d.selection_log().last() {
            let line = &d.free_lines()[0];
            for u in [0.0, last.time / 2.0, last.time] {
                assert_eq!(line.eval(u).unwrap(), x.eval(u).unwrap());
            }
        }
    }

    #[test]
    fn domain_mismatch_is_an_argument_error() {
        let m2 = builtin::m2();
        let x = CadlagPath::constant(0.0, 0.5, 0usize);
        let err = simulate_conditional(&m2, 3, 1.0, &x, &InitialLaw::Dirac(0), &mut stream(0)).unwrap_err();
        assert!(matches!(err, FkError::Argument(_)));
    }

    #[test]
    fn dual_weights() {
        let m2 = builtin::m2();
        assert_eq!(dual_weight(&CadlagPath::constant(0.0, 1.0, 1usize), &m2.without_potential()).unwrap(), 1.0);
        let w = dual_weight(&CadlagPath::constant(0.0, 1.0, 1usize), &m2).unwrap();
        assert!((w - (-1f64).exp()).abs() < 1e-15);
        let p = CadlagPath::from_events(0.0, 1.0, 0usize, vec![(0.4, 1)]).unwrap();
        assert!((dual_weight(&p, &m2).unwrap() - (-0.6f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn identity_exact_cases() {
        let cfg = [0usize, 1, 1, 0, 1];
        let v = |x: &usize| [0.0, 1.0][*x];
        assert_eq!(dual_generator_identity_check(v, |_| 3.7, &cfg).unwrap(), 0.0);
        assert_eq!(dual_generator_identity_check(|_| 0.0, |x: &usize| *x as f64, &cfg).unwrap(), 0.0);
        assert!(dual_generator_identity_check(v, |_| 1.0, &cfg[..2]).is_err());
    }
}
