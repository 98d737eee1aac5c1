//! Monte Carlo properties of the particle systems against exact references.

mod common;

use fkpath_core::conditional::simulate_conditional;
use fkpath_core::estimators::{estimate_gamma, mean_field_replicas, run_replicas, ReplicaPlan};
use fkpath_core::gibbs::{gibbs_chain, mixing_diagnostics, GibbsSettings};
use fkpath_core::mean_field::simulate_mean_field;
use fkpath_core::models::{builtin, BetaSchedule};
use fkpath_core::oracle::Oracle;
use fkpath_core::rng::{replica_seed, stream};
use fkpath_core::stats::{chain_estimate, MonteCarloEstimate};
use fkpath_core::{CadlagPath, FiniteCtmcModel, InitialLaw, Model, PathFunctional};

fn plan(n: usize, t: f64, replicas: usize, seed: u64) -> ReplicaPlan {
    ReplicaPlan {
        n_particles: n,
        horizon: t,
        replicas,
        seed,
        threads: 0,
    }
}

fn is_one(x: &usize) -> f64 {
    f64::from(u8::from(*x == 1))
}

fn m2_eta1(t: f64) -> f64 {
    Oracle::new(&builtin::m2()).solve_gamma(&[1.0, 0.0], t).unwrap().eta[1]
}

fn terminal_law_matches(model: &FiniteCtmcModel, x0: usize, t: f64, seed: u64) {
    let n = 100_000;
    let mut counts = vec![0usize; model.size()];
    for k in 0..n {
        let path = model.sample_free_motion(&x0, 0.0, t, &mut stream(replica_seed(seed, k))).unwrap();
        counts[*path.terminal()] += 1;
    }
    let p = Oracle::new(model).markov_transition(0.0, t).unwrap();
    for y in 0..model.size() {
        let prob = p[(x0, y)];
        let se = (prob * (1.0 - prob) / n as f64).sqrt();
        let freq = counts[y] as f64 / n as f64;
        assert!((freq - prob).abs() <= 3.0 * se, "state {y}: {freq} vs {prob}");
    }
}

#[test]
fn thinning_is_exact_on_ring() {
    terminal_law_matches(&builtin::ring4(), 0, 0.7, 1);
}

#[test]
fn thinning_is_exact_for_time_varying_rates() {
    let jm = builtin::jarzynski_two_state(BetaSchedule::linear(0.0, 2.0)).unwrap();
    terminal_law_matches(jm.model(), 1, 1.0, 2);
}

#[test]
fn bias_matches_exact_count_chain() {
    let m2 = builtin::m2();
    for n in [2usize, 5] {
        let records = mean_field_replicas(
            &m2,
            &InitialLaw::Dirac(0),
            &[PathFunctional::terminal_indicator(1)],
            &plan(n, 1.0, 40_000, 100 + n as u64),
        )
        .unwrap();
        let xs: Vec<f64> = records.iter().map(|r| r.occupation[0]).collect();
        let e = MonteCarloEstimate::from_samples(&xs, 0).unwrap();
        let exact = common::mean_fraction(n, 1.0);
        assert!(e.within(exact, 3.0), "N={n}: {} vs {exact}", e.mean);
        assert!(exact - m2_eta1(1.0) > 0.0);
    }
}

#[test]
fn exact_bias_decays_like_one_over_n() {
    let eta = m2_eta1(1.0);
    let scaled: Vec<f64> = [5usize, 10, 20, 40]
        .iter()
        .map(|&n| (common::mean_fraction(n, 1.0) - eta) * n as f64)
        .collect();
    for w in scaled.windows(2) {
        assert!((w[0] / w[1] - 1.0).abs() < 0.05, "{scaled:?}");
    }
}

#[test]
fn propagation_of_chaos() {
    let eta = m2_eta1(1.0);
    let gaps: Vec<f64> = [2usize, 5, 10, 20, 40]
        .iter()
        .map(|&n| (common::pair_moment(n, 1.0) - eta * eta).abs())
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1] < w[0], "{gaps:?}");
    }
    let m2 = builtin::m2();
    let n = 5;
    let samples = run_replicas(55, 40_000, 0, |_, _, rng| {
        let sys = simulate_mean_field(&m2, n, 1.0, &InitialLaw::Dirac(0), rng)?;
        let tr = sys.trajectories();
        Ok(is_one(tr[0].terminal()) * is_one(tr[1].terminal()))
    })
    .unwrap();
    let e = MonteCarloEstimate::from_samples(&samples, 0).unwrap();
    let exact = common::pair_moment(n, 1.0);
    assert!(e.within(exact, 3.0), "{} vs {exact}", e.mean);
}

#[test]
fn lines_are_exchangeable() {
    let m2 = builtin::m2();
    let n = 4;
    let rows = run_replicas(8, 30_000, 0, |_, _, rng| {
        let sys = simulate_mean_field(&m2, n, 1.0, &InitialLaw::Uniform, rng)?;
        let occ = PathFunctional::occupation_time(1);
        Ok(sys.lines().iter().map(|l| occ.evaluate(l) + l.jump_count() as f64).collect::<Vec<f64>>())
    })
    .unwrap();
    for i in 1..n {
        let d: Vec<f64> = rows.iter().map(|r| r[i] - r[0]).collect();
        let e = MonteCarloEstimate::from_samples(&d, 0).unwrap();
        assert!(e.within(0.0, 3.0), "line {i}: {} ± {}", e.mean, e.std_error);
    }
}

#[test]
fn unbiased_on_ring_with_uniform_start() {
    let ring = builtin::ring4();
    let o = Oracle::new(&ring).solve_gamma(&[0.25; 4], 0.8).unwrap();
    for x in [0usize, 3] {
        let e = estimate_gamma(&ring, &InitialLaw::Uniform, &PathFunctional::terminal_indicator(x), &plan(6, 0.8, 20_000, 70 + x as u64))
            .unwrap();
        assert!(e.within(o.gamma[x], 3.0), "state {x}: {} vs {}", e.mean, o.gamma[x]);
    }
}

#[test]
fn standard_error_shrinks_like_inverse_sqrt() {
    let m2 = builtin::m2();
    let f = PathFunctional::terminal_indicator(1);
    let ses: Vec<f64> = [1_000usize, 4_000, 16_000, 64_000]
        .iter()
        .map(|&r| estimate_gamma(&m2, &InitialLaw::Dirac(0), &f, &plan(5, 1.0, r, 3)).unwrap().std_error)
        .collect();
    for w in ses.windows(2) {
        let ratio = w[0] / w[1];
        assert!((2.0 / 1.3..=2.0 * 1.3).contains(&ratio), "{ses:?}");
    }
}

#[test]
fn conditional_marginal_is_order_t_over_n() {
    let m2 = builtin::m2();
    let eta = m2_eta1(1.0);
    let frozen_paths = [
        CadlagPath::constant(0.0, 1.0, 0usize),
        CadlagPath::constant(0.0, 1.0, 1usize),
        CadlagPath::from_events(0.0, 1.0, 0usize, vec![(0.3, 1), (0.6, 0), (0.9, 1)]).unwrap(),
    ];
    for (p, x) in frozen_paths.iter().enumerate() {
        let mut devs = Vec::new();
        for n in [10usize, 20] {
            let v = run_replicas(200 + (p * 100 + n) as u64, 40_000, 0, |_, _, rng| {
                let d = simulate_conditional(&m2, n, 1.0, x, &InitialLaw::Dirac(0), rng)?;
                Ok((0..n).map(|k| is_one(d.line(k).terminal())).sum::<f64>() / n as f64)
            })
            .unwrap();
            let e = MonteCarloEstimate::from_samples(&v, 0).unwrap();
            let dev = e.mean - eta;
            assert!(dev.abs() <= 1.0 / n as f64 + 3.0 * e.std_error, "path {p}, N={n}: {dev}");
            devs.push(dev);
        }
        let ratio = devs[0] / devs[1];
        assert!((1.5..=2.7).contains(&ratio), "path {p}: {devs:?}");
    }
}

fn chain(n: usize, t: f64, iters: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let m2 = builtin::m2();
    let init = InitialLaw::Dirac(0);
    let mut rng = stream(seed);
    let x0 = simulate_mean_field(&m2, n, t, &init, &mut rng).unwrap().sample_ancestral_line(&mut rng).clone();
    let settings = GibbsSettings {
        n_particles: n,
        horizon: t,
        iters,
        burn_in: 500,
        keep_paths: false,
    };
    let fs = [PathFunctional::terminal_indicator(1), PathFunctional::occupation_time(1)];
    let trace = gibbs_chain(&m2, &settings, &x0, &fs, &init, seed + 1).unwrap();
    (trace.series(0), trace.series(1))
}

#[test]
fn gibbs_invariance_across_n_and_t() {
    let m2 = builtin::m2();
    let o = Oracle::new(&m2);
    for n in [5usize, 20] {
        for t in [0.5, 1.0] {
            let (term, occ) = chain(n, t, 4000, 300 + n as u64);
            let eta = m2_eta1(t);
            let smooth = o.smoothing_integral(&[1.0, 0.0], &|_, x| is_one(&x), t).unwrap();
            let a = chain_estimate(&term, 0).unwrap();
            let b = chain_estimate(&occ, 0).unwrap();
            assert!(a.within(eta, 3.0), "N={n} t={t}: {} vs {eta}", a.mean);
            assert!(b.within(smooth, 3.0), "N={n} t={t}: {} vs {smooth}", b.mean);
        }
    }
}

#[test]
fn mixing_improves_with_n() {
    let (small, _) = chain(5, 1.0, 20_000, 1);
    let (large, _) = chain(20, 1.0, 20_000, 2);
    let (a, b) = (mixing_diagnostics(&small), mixing_diagnostics(&large));
    assert!(b.lag1_autocorrelation < a.lag1_autocorrelation, "{a:?} vs {b:?}");
    assert!(b.integrated_autocorrelation_time < a.integrated_autocorrelation_time, "{a:?} vs {b:?}");
}

#[test]
fn oracle_semigroup_on_random_triples() {
    let ring = builtin::ring4();
    let o = Oracle::new(&ring);
    let mut rng = stream(4);
    for _ in 0..20 {
        use rand::Rng;
        let mut v = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
        v.sort_by(f64::total_cmp);
        let split = o.semigroup_matrix(v[0], v[1]).unwrap() * o.semigroup_matrix(v[1], v[2]).unwrap();
        assert!((o.semigroup_matrix(v[0], v[2]).unwrap() - split).amax() <= 1e-8);
    }
}
