//! The N-particle Moran-type system with full ancestral lines.
//!
//! Between selections every particle moves as the reference process. A
//! global Poisson clock of rate `N · V*` proposes selections: a uniformly
//! chosen particle `i` is accepted with probability `V_s(ξ^i_s) / V*` and
//! then adopts the ancestral line of a uniformly chosen particle `j`
//! (`j = i` is a silent no-op). Particles are advanced lazily, only when
//! the clock needs their state, which is exact by the Markov property.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::error::{FkError, Result};
use crate::models::{InitialLaw, Model};
use crate::paths::{integrate_potential, integrate_segments, CadlagPath, PathFunctional};

/// An accepted selection: `jumper` adopted the line of `target` at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionEvent {
    pub time: f64,
    pub jumper: usize,
    pub target: usize,
}

/// Final configuration of a mean-field run.
#[derive(Debug, Clone)]
pub struct GenealogySystem<S> {
    n_particles: usize,
    horizon: f64,
    lines: Vec<CadlagPath<S>>,
    trajectories: Vec<CadlagPath<S>>,
    integrated_mean_potential: f64,
    selection_log: Vec<SelectionEvent>,
}

/// One particle while the system is running: its ancestral line, the path
/// it actually followed (including selection jumps) and its potential integral.
#[derive(Debug, Clone)]
pub(crate) struct Walker<S> {
    pub line: CadlagPath<S>,
    pub trajectory: CadlagPath<S>,
    pub clock: f64,
    pub state: S,
    pub potential_integral: f64,
}

impl<S: Clone + PartialEq> Walker<S> {
    pub fn new(state: S, start: f64) -> Self {
        Self {
            line: CadlagPath::constant(start, start, state.clone()),
            trajectory: CadlagPath::constant(start, start, state.clone()),
            clock: start,
            state,
            potential_integral: 0.0,
        }
    }

    /// Free motion from the walker's clock up to `s`.
    pub fn advance<M, R>(&mut self, model: &M, s: f64, rng: &mut R, buf: &mut Vec<(f64, S)>) -> Result<()>
    where
        M: Model<State = S>,
        R: Rng + ?Sized,
    {
        if s <= self.clock {
            return Ok(());
        }
        buf.clear();
        model.extend_free_motion(&self.state, self.clock, s, rng, buf)?;
        let mut cursor = self.clock;
        let mut current = &self.state;
        let pieces = buf.iter().map(|(time, x)| {
            let seg = (cursor, *time, current);
            cursor = *time;
            current = x;
            seg
        });
        let mut acc = integrate_segments(pieces, model);
        acc += integrate_segments(std::iter::once((cursor, s, current)), model);
        self.potential_integral += acc;
        for (time, x) in buf.drain(..) {
            self.line.push_jump(time, x.clone());
            self.trajectory.push_jump(time, x.clone());
            self.state = x;
        }
        self.line.extend_to(s);
        self.trajectory.extend_to(s);
        self.clock = s;
        Ok(())
    }

    /// Takes over `line` at time `s` (the walker must already be at `s`).
    pub fn adopt(&mut self, line: CadlagPath<S>, state: S, s: f64) {
        debug_assert_eq!(self.clock, s);
        self.line = line;
        if state != self.state {
            self.trajectory.set_from(s, state.clone());
            self.state = state;
        }
    }
}

pub(crate) fn check_common_args(n: usize, t: f64, potential_sup: f64) -> Result<()> {
    if n < 2 {
        return Err(FkError::Argument(format!("number of particles must be at least 2, got {n}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(FkError::Argument(format!("horizon must be finite and nonnegative, got {t}")));
    }
    if !(potential_sup >= 0.0 && potential_sup.is_finite()) {
        return Err(FkError::Argument(format!("potential_sup must be finite, got {potential_sup}")));
    }
    Ok(())
}

/// Acceptance test of a thinned selection proposal.
pub(crate) fn accept_selection<R: Rng + ?Sized>(v: f64, vstar: f64, s: f64, rng: &mut R) -> Result<bool> {
    if !(v >= 0.0) || v > vstar * (1.0 + 1e-12) {
        return Err(FkError::ModelEvaluation(format!(
            "potential {v} at t={s} outside [0, {vstar}]"
        )));
    }
    Ok(rng.random::<f64>() * vstar < v)
}

/// Runs the mean-field system with `n` particles drawn i.i.d. from `init` on `[0, t]`.
pub fn simulate_mean_field<M, R>(
    model: &M,
    n: usize,
    t: f64,
    init: &InitialLaw<M::State>,
    rng: &mut R,
) -> Result<GenealogySystem<M::State>>
where
    M: Model,
    R: Rng + ?Sized,
{
    let vstar = model.potential_sup();
    check_common_args(n, t, vstar)?;
    let mut walkers = Vec::with_capacity(n);
    for _ in 0..n {
        walkers.push(Walker::new(model.sample_initial(init, rng)?, 0.0));
    }
    let mut buf = Vec::new();
    let mut log = Vec::new();
    if vstar > 0.0 {
        let clock = Exp::new(n as f64 * vstar).map_err(|e| FkError::Argument(e.to_string()))?;
        let mut s = 0.0;
        loop {
            s += clock.sample(rng);
            if s > t {
                break;
            }
            let i = rng.random_range(0..n);
            walkers[i].advance(model, s, rng, &mut buf)?;
            let v = model.potential(s, &walkers[i].state);
            if !accept_selection(v, vstar, s, rng)? {
                continue;
            }
            let j = rng.random_range(0..n);
            if j == i {
                continue;
            }
            walkers[j].advance(model, s, rng, &mut buf)?;
            let (line, state) = (walkers[j].line.clone(), walkers[j].state.clone());
            walkers[i].adopt(line, state, s);
            log.push(SelectionEvent { time: s, jumper: i, target: j });
        }
    }
    for w in &mut walkers {
        w.advance(model, t, rng, &mut buf)?;
    }
    let integrated_mean_potential =
        walkers.iter().map(|w| w.potential_integral).sum::<f64>() / n as f64;
    let (lines, trajectories) = walkers.into_iter().map(|w| (w.line, w.trajectory)).unzip();
    Ok(GenealogySystem {
        n_particles: n,
        horizon: t,
        lines,
        trajectories,
        integrated_mean_potential,
        selection_log: log,
    })
}

impl<S: Clone + PartialEq + 'static> GenealogySystem<S> {
    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Ancestral lines at the horizon.
    pub fn lines(&self) -> &[CadlagPath<S>] {
        &self.lines
    }

    /// The state trajectories `s ↦ ξ^i_s` actually followed by each particle.
    pub fn trajectories(&self) -> &[CadlagPath<S>] {
        &self.trajectories
    }

    /// `∫_0^t m(ξ_s)(V_s) ds`, accumulated during the run.
    pub fn integrated_mean_potential(&self) -> f64 {
        self.integrated_mean_potential
    }

    pub fn selection_log(&self) -> &[SelectionEvent] {
        &self.selection_log
    }

    /// `∫_0^t m(ξ_s)(V_s) ds` recomputed from the stored trajectories.
    pub fn recompute_mean_potential<M: Model<State = S>>(&self, model: &M) -> Result<f64> {
        let mut total = 0.0;
        for tr in &self.trajectories {
            total += integrate_potential(tr, model, 0.0, self.horizon)?;
        }
        Ok(total / self.n_particles as f64)
    }

    /// `m(ξ_t)(f) = N^{-1} Σ_i f(ξ^i_t)` over the ancestral lines.
    pub fn occupation_measure(&self, f: &PathFunctional<S>) -> f64 {
        self.lines.iter().map(|l| f.evaluate(l)).sum::<f64>() / self.n_particles as f64
    }

    /// `Z_t(ξ) = exp(-∫_0^t m(ξ_s)(V_s) ds)`.
    pub fn many_body_weight(&self) -> f64 {
        (-self.integrated_mean_potential).exp()
    }

    /// Uniform index among the lines.
    pub fn sample_ancestral_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.n_particles)
    }

    /// A random sample from `m(ξ_t)`.
    pub fn sample_ancestral_line<R: Rng + ?Sized>(&self, rng: &mut R) -> &CadlagPath<S> {
        &self.lines[self.sample_ancestral_index(rng)]
    }

    /// Checks the structural invariants of the system.
    pub fn validate(&self, potential_sup: f64) -> Result<()> {
        for p in self.lines.iter().chain(&self.trajectories) {
            p.validate()?;
            if p.start_time() != 0.0 || p.end_time() != self.horizon {
                return Err(FkError::Domain("line domain differs from [0, t]".into()));
            }
        }
        let m = self.integrated_mean_potential;
        if !(m >= 0.0 && m <= self.horizon * potential_sup * (1.0 + 1e-12) + 1e-12) {
            return Err(FkError::Numeric(format!("integrated mean potential {m} out of range")));
        }
        if self.selection_log.windows(2).any(|w| !(w[0].time < w[1].time)) {
            return Err(FkError::Numeric("selection times are not increasing".into()));
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
    fn rejects_single_particle() {
        let m2 = builtin::m2();
        let err = simulate_mean_field(&m2, 1, 1.0, &InitialLaw::Dirac(0), &mut stream(0)).unwrap_err();
        assert!(matches!(err, FkError::Argument(_)));
    }

    #[test]
    fn zero_potential_means_independent_free_motion() {
        let free = builtin::m2().without_potential();
        let sys = simulate_mean_field(&free, 6, 2.0, &InitialLaw::Uniform, &mut stream(4)).unwrap();
        assert!(sys.selection_log().is_empty());
        assert_eq!(sys.many_body_weight(), 1.0);
        assert_eq!(sys.lines(), sys.trajectories());
        sys.validate(0.0).unwrap();
    }

    #[test]
    fn pinned_particles_weight() {
        // No motion: with everything in state 1 the mean potential is 1.
        let pinned = crate::models::FiniteCtmcModel::homogeneous(
            "pinned",
            nalgebra::DMatrix::zeros(2, 2),
            vec![0.0, 1.0],
        )
        .unwrap();
        let sys = simulate_mean_field(&pinned, 4, 2.0, &InitialLaw::Dirac(1), &mut stream(1)).unwrap();
        assert!((sys.many_body_weight() - (-2f64).exp()).abs() < 1e-15);
        // Adoptions among identical states leave the trajectories untouched.
        assert!(sys.trajectories().iter().all(|p| p.jump_count() == 0));
    }

    #[test]
    fn accumulator_matches_reintegration() {
        let m2 = builtin::m2();
        for seed in 0..50 {
            let sys = simulate_mean_field(&m2, 7, 1.5, &InitialLaw::Uniform, &mut stream(seed)).unwrap();
            sys.validate(1.0).unwrap();
            let re = sys.recompute_mean_potential(&m2).unwrap();
            assert!((re - sys.integrated_mean_potential()).abs() <= 1e-10);
        }
    }

    #[test]
    fn lines_follow_the_selection_log() {
        let m2 = builtin::m2();
        let sys = simulate_mean_field(&m2, 5, 3.0, &InitialLaw::Dirac(1), &mut stream(77)).unwrap();
        assert!(!sys.selection_log().is_empty());
        // After the last selection of a particle, its line and trajectory share the future.
        for (i, line) in sys.lines().iter().enumerate() {
            let last = sys
                .selection_log()
                .iter()
                .rev()
                .find(|e| e.jumper == i)
                .map_or(0.0, |e| e.time);
            for u in [last, (last + 3.0) / 2.0, 3.0] {
                assert_eq!(line.eval(u).unwrap(), sys.trajectories()[i].eval(u).unwrap());
            }
        }
    }

    #[test]
    fn occupation_and_sampling() {
        let m2 = builtin::m2();
        let sys = simulate_mean_field(&m2, 2, 0.0, &InitialLaw::Categorical(vec![0.5, 0.5]), &mut stream(3)).unwrap();
        assert_eq!(sys.occupation_measure(&PathFunctional::constant(2.5)), 2.5);
        let mut rng = stream(10);
        let a = sys.sample_ancestral_index(&mut stream(10));
        assert_eq!(a, sys.sample_ancestral_index(&mut stream(10)));
        let hits = (0..100_000).filter(|_| sys.sample_ancestral_index(&mut rng) == 0).count() as f64 / 1e5;
        assert!((hits - 0.5).abs() <= 3.0 * (0.25f64 / 1e5).sqrt());
    }

    #[test]
    fn two_lines_with_states_zero_and_one_average() {
        let pinned = crate::models::FiniteCtmcModel::homogeneous(
            "pinned",
            nalgebra::DMatrix::zeros(2, 2),
            vec![0.0, 0.0],
        )
        .unwrap();
        let mut seed = 0;
        loop {
            let sys = simulate_mean_field(&pinned, 2, 1.0, &InitialLaw::Uniform, &mut stream(seed)).unwrap();
            let states: Vec<usize> = sys.lines().iter().map(|l| *l.terminal()).collect();
            if states[0] != states[1] {
                assert_eq!(sys.occupation_measure(&PathFunctional::terminal_indicator(1)), 0.5);
                break;
            }
            seed += 1;
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let m2 = builtin::m2();
        let a = simulate_mean_field(&m2, 10, 1.0, &InitialLaw::Dirac(0), &mut stream(5)).unwrap();
        let b = simulate_mean_field(&m2, 10, 1.0, &InitialLaw::Dirac(0), &mut stream(5)).unwrap();
        assert_eq!(a.lines(), b.lines());
        assert_eq!(a.selection_log(), b.selection_log());
        assert_eq!(a.integrated_mean_potential(), b.integrated_mean_potential());
    }

    #[test]
    fn torus_system_runs() {
        let torus = builtin::torus_default();
        let sys = simulate_mean_field(&torus, 4, 0.5, &InitialLaw::Uniform, &mut stream(8)).unwrap();
        sys.validate(2.0).unwrap();
        let w = sys.many_body_weight();
        assert!(w > 0.0 && w <= 1.0);
    }
}
