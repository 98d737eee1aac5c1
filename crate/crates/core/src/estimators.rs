//! Replica fan-out and the estimators built on it: unbiased γ-estimates,
//! bias sweeps, the duality two-sample comparison and the annealed
//! free-energy experiment.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::conditional::{dual_weight, simulate_conditional, DualSelectionEvent, SelectionTarget};
use crate::error::{FkError, Result};
use crate::mean_field::simulate_mean_field;
use crate::models::{FiniteCtmcModel, InitialLaw, JarzynskiModel, Model};
use crate::oracle::{FreeEnergyCheck, Oracle};
use crate::paths::{CadlagPath, PathFunctional};
use crate::rng::{replica_seed, stream, substream_seed, Stream};
use crate::stats::{z_score, MonteCarloEstimate};

/// Runs `job(replica_id, seed, rng)` for every replica, in parallel, and
/// returns the results in replica order. `threads = 0` uses the global pool.
pub fn run_replicas<T, F>(master_seed: u64, count: usize, threads: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, u64, &mut Stream) -> Result<T> + Sync + Send,
{
    let work = || {
        (0..count)
            .into_par_iter()
            .map(|k| {
                let seed = replica_seed(master_seed, k as u64);
                job(k, seed, &mut stream(seed))
            })
            .collect::<Result<Vec<T>>>()
    };
    if threads == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| FkError::Argument(e.to_string()))?
            .install(work)
    }
}

/// Initial measure of a finite model as a probability vector.
pub fn initial_vector(law: &InitialLaw<usize>, size: usize) -> Result<Vec<f64>> {
    match law {
        InitialLaw::Dirac(x) if *x < size => {
            let mut v = vec![0.0; size];
            v[*x] = 1.0;
            Ok(v)
        }
        InitialLaw::Dirac(x) => Err(FkError::Domain(format!("initial state {x} out of range"))),
        InitialLaw::Uniform => Ok(vec![1.0 / size as f64; size]),
        InitialLaw::Categorical(w) => {
            InitialLaw::<usize>::check_weights(w, size)?;
            Ok(w.clone())
        }
    }
}

/// One mean-field replica: its seed, `Z_t(ξ)` and `m(ξ_t)(f_j)` per functional.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaRecord {
    pub replica_id: usize,
    pub seed: u64,
    pub weight: f64,
    pub occupation: Vec<f64>,
}

/// Common parameters of a replicated mean-field experiment.
#[derive(Debug, Clone, Copy)]
pub struct ReplicaPlan {
    pub n_particles: usize,
    pub horizon: f64,
    pub replicas: usize,
    pub seed: u64,
    pub threads: usize,
}

pub fn mean_field_replicas<M: Model>(
    model: &M,
    init: &InitialLaw<M::State>,
    functionals: &[PathFunctional<M::State>],
    plan: &ReplicaPlan,
) -> Result<Vec<ReplicaRecord>> {
    run_replicas(plan.seed, plan.replicas, plan.threads, |k, seed, rng| {
        let sys = simulate_mean_field(model, plan.n_particles, plan.horizon, init, rng)?;
        Ok(ReplicaRecord {
            replica_id: k,
            seed,
            weight: sys.many_body_weight(),
            occupation: functionals.iter().map(|f| sys.occupation_measure(f)).collect(),
        })
    })
}

/// `E[m(ξ_t)(f) Z_t(ξ)]` for every functional, which is unbiased for `γ_t(f)`.
pub fn gamma_estimates(records: &[ReplicaRecord], seed: u64) -> Result<Vec<MonteCarloEstimate>> {
    let k = records.first().map_or(0, |r| r.occupation.len());
    (0..k)
        .map(|j| {
            let xs: Vec<f64> = records.iter().map(|r| r.occupation[j] * r.weight).collect();
            MonteCarloEstimate::from_samples(&xs, seed)
        })
        .collect()
}

pub fn estimate_gamma<M: Model>(
    model: &M,
    init: &InitialLaw<M::State>,
    f: &PathFunctional<M::State>,
    plan: &ReplicaPlan,
) -> Result<MonteCarloEstimate> {
    let records = mean_field_replicas(model, init, std::slice::from_ref(f), plan)?;
    Ok(gamma_estimates(&records, plan.seed)?.remove(0))
}

/// One row of a bias sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasRow {
    pub n_particles: usize,
    /// Unweighted `E[m(ξ_t)(f)]`.
    pub mean: f64,
    pub oracle_eta: f64,
    pub bias: f64,
    pub std_error: f64,
    pub replicas: usize,
}

/// `E[m(ξ_t)(f)] - η_t(f)` for each `N` in `n_list`, `f` a terminal state function.
#[allow(clippy::too_many_arguments)]
pub fn bias_sweep(
    model: &FiniteCtmcModel,
    init: &InitialLaw<usize>,
    t: f64,
    f: &[f64],
    n_list: &[usize],
    replicas: &[usize],
    seed: u64,
    threads: usize,
) -> Result<Vec<BiasRow>> {
    if f.len() != model.size() || replicas.len() != n_list.len() {
        return Err(FkError::Argument("bias sweep arguments have mismatched lengths".into()));
    }
    let gamma0 = initial_vector(init, model.size())?;
    let eta = Oracle::new(model).solve_gamma(&gamma0, t)?.eta_of(f);
    let fv = f.to_vec();
    let functional = PathFunctional::terminal(move |x: &usize| fv[*x]);
    n_list
        .iter()
        .zip(replicas)
        .map(|(&n, &r)| {
            let plan = ReplicaPlan {
                n_particles: n,
                horizon: t,
                replicas: r,
                seed: substream_seed(seed, &format!("bias-{n}")),
                threads,
            };
            let records = mean_field_replicas(model, init, std::slice::from_ref(&functional), &plan)?;
            let xs: Vec<f64> = records.iter().map(|r| r.occupation[0]).collect();
            let est = MonteCarloEstimate::from_samples(&xs, plan.seed)?;
            Ok(BiasRow {
                n_particles: n,
                mean: est.mean,
                oracle_eta: eta,
                bias: est.mean - eta,
                std_error: est.std_error,
                replicas: r,
            })
        })
        .collect()
}

/// How the other particles' states at an intermediate time are recovered.
enum Population<'a, S> {
    /// All trajectories, one copy of the distinguished state removed.
    WithoutDistinguished(Vec<&'a CadlagPath<S>>),
    /// Exactly the other particles.
    Others(&'a [CadlagPath<S>]),
}

/// A system seen from one distinguished ancestral line: the sampled line of
/// a mean-field run, or the frozen line of a conditional run.
pub struct SystemView<'a, S> {
    pub distinguished: &'a CadlagPath<S>,
    pub other_lines: Vec<&'a CadlagPath<S>>,
    population: Population<'a, S>,
}

impl<'a, S: Clone + PartialEq + 'static> SystemView<'a, S> {
    /// States of the non-distinguished particles at time `s`, as a multiset.
    pub fn other_states_at(&self, s: f64) -> Vec<S> {
        match &self.population {
            Population::Others(trs) => trs.iter().map(|p| p.at(s).clone()).collect(),
            Population::WithoutDistinguished(trs) => {
                let mut all: Vec<S> = trs.iter().map(|p| p.at(s).clone()).collect();
                let own = self.distinguished.at(s);
                if let Some(pos) = all.iter().position(|x| x == own) {
                    all.swap_remove(pos);
                }
                all
            }
        }
    }
}

pub type DualityFunctional<S> = Arc<dyn Fn(&SystemView<'_, S>) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityRow {
    pub name: String,
    pub lhs: MonteCarloEstimate,
    pub rhs: MonteCarloEstimate,
    pub combined_se: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub n_particles: usize,
    pub horizon: f64,
    pub replicas: usize,
    pub rows: Vec<DualityRow>,
    /// Frozen-targeted and peer-targeted selections pooled over the RHS runs.
    pub target_histogram: (usize, usize),
    /// Per-replica weighted values, mean-field side.
    #[serde(skip)]
    pub lhs_samples: Vec<Vec<f64>>,
    /// Per-replica weighted values, frozen-line side.
    #[serde(skip)]
    pub rhs_samples: Vec<Vec<f64>>,
}

impl DualityReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max)
    }
}

fn checked(value: f64, index: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(FkError::Functional {
            index,
            message: format!("evaluated to {value}"),
        })
    }
}

/// Two-sample comparison of
/// `E[F(𝕏_t, ξ̂_t) exp(-∫ m(ξ_s)(V_s) ds)]` (mean-field side, averaged over
/// the choice of the distinguished line) with
/// `E[F(X̂_t, ζ̂_t) exp(-∫ V_s(X_s) ds)]` (frozen-line side).
pub fn duality_check<M: Model>(
    model: &M,
    init: &InitialLaw<M::State>,
    functionals: &[(String, DualityFunctional<M::State>)],
    plan: &ReplicaPlan,
) -> Result<DualityReport> {
    if plan.replicas < 100 {
        return Err(FkError::Argument(format!("duality check needs >= 100 replicas, got {}", plan.replicas)));
    }
    let n = plan.n_particles;
    let t = plan.horizon;
    let lhs_samples = run_replicas(substream_seed(plan.seed, "mean-field"), plan.replicas, plan.threads, |_, _, rng| {
        let sys = simulate_mean_field(model, n, t, init, rng)?;
        let w = sys.many_body_weight();
        let lines = sys.lines();
        let trajectories: Vec<&CadlagPath<M::State>> = sys.trajectories().iter().collect();
        let mut acc = vec![0.0; functionals.len()];
        for k in 0..n {
            let view = SystemView {
                distinguished: &lines[k],
                other_lines: lines.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, l)| l).collect(),
                population: Population::WithoutDistinguished(trajectories.clone()),
            };
            for (idx, (_, f)) in functionals.iter().enumerate() {
                acc[idx] += checked(f(&view), idx)?;
            }
        }
        Ok(acc.into_iter().map(|a| a / n as f64 * w).collect::<Vec<f64>>())
    })?;
    let rhs_samples = run_replicas(substream_seed(plan.seed, "frozen"), plan.replicas, plan.threads, |_, _, rng| {
        let x0 = model.sample_initial(init, rng)?;
        let frozen = model.sample_free_motion(&x0, 0.0, t, rng)?;
        let dual = simulate_conditional(model, n, t, &frozen, init, rng)?;
        let w = dual_weight(&frozen, model)?;
        let view = SystemView {
            distinguished: dual.frozen_line(),
            other_lines: dual.free_lines().iter().collect(),
            population: Population::Others(dual.free_trajectories()),
        };
        let values = functionals
            .iter()
            .enumerate()
            .map(|(idx, (_, f))| checked(f(&view), idx).map(|v| v * w))
            .collect::<Result<Vec<f64>>>()?;
        Ok((values, dual.target_histogram()))
    })?;
    let histogram = rhs_samples
        .iter()
        .fold((0, 0), |acc, (_, h)| (acc.0 + h.0, acc.1 + h.1));
    let rows = functionals
        .iter()
        .enumerate()
        .map(|(idx, (name, _))| {
            let l: Vec<f64> = lhs_samples.iter().map(|v| v[idx]).collect();
            let r: Vec<f64> = rhs_samples.iter().map(|(v, _)| v[idx]).collect();
            let lhs = MonteCarloEstimate::from_samples(&l, plan.seed)?;
            let rhs = MonteCarloEstimate::from_samples(&r, plan.seed)?;
            let combined_se = lhs.std_error.hypot(rhs.std_error);
            Ok(DualityRow {
                name: name.clone(),
                z: z_score(lhs.mean - rhs.mean, combined_se),
                lhs,
                rhs,
                combined_se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DualityReport {
        n_particles: n,
        horizon: t,
        replicas: plan.replicas,
        rows,
        target_histogram: histogram,
        lhs_samples,
        rhs_samples: rhs_samples.into_iter().map(|(v, _)| v).collect(),
    })
}

fn indicator(b: bool) -> f64 {
    f64::from(u8::from(b))
}

/// Twelve functionals of (distinguished line, other particles) on a finite
/// model with states `0` and `1` in use, all symmetric in the other particles.
pub fn standard_duality_battery(t: f64) -> Vec<(String, DualityFunctional<usize>)> {
    let half = t / 2.0;
    let mean_others = move |v: &SystemView<'_, usize>, s: f64| -> f64 {
        let xs = v.other_states_at(s);
        xs.iter().map(|x| indicator(*x == 1)).sum::<f64>() / xs.len() as f64
    };
    let battery: Vec<(&str, DualityFunctional<usize>)> = vec![
        ("one", Arc::new(|_| 1.0)),
        ("terminal_is_0", Arc::new(|v| indicator(*v.distinguished.terminal() == 0))),
        ("terminal_is_1", Arc::new(|v| indicator(*v.distinguished.terminal() == 1))),
        ("midpoint_is_1", Arc::new(move |v| indicator(*v.distinguished.at(half) == 1))),
        ("jump_count", Arc::new(|v| v.distinguished.jump_count() as f64)),
        (
            "time_in_1",
            Arc::new(|v| PathFunctional::occupation_time(1).evaluate(v.distinguished)),
        ),
        (
            "others_terminal_mean_1",
            Arc::new(move |v| mean_others(v, v.distinguished.end_time())),
        ),
        (
            "terminal_1_times_others_mean_1",
            Arc::new(move |v| {
                indicator(*v.distinguished.terminal() == 1) * mean_others(v, v.distinguished.end_time())
            }),
        ),
        (
            "all_others_terminal_0",
            Arc::new(|v| indicator(v.other_lines.iter().all(|l| *l.terminal() == 0))),
        ),
        ("others_midpoint_mean_1", Arc::new(move |v| mean_others(v, half))),
        (
            "others_line_jumps_mean",
            Arc::new(|v| {
                v.other_lines.iter().map(|l| l.jump_count() as f64).sum::<f64>() / v.other_lines.len() as f64
            }),
        ),
        (
            "midpoint_0_times_others_midpoint_mean_1",
            Arc::new(move |v| indicator(*v.distinguished.at(half) == 0) * mean_others(v, half)),
        ),
    ];
    battery.into_iter().map(|(n, f)| (n.to_string(), f)).collect()
}

/// Outcome of the annealed free-energy experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JarzynskiReport {
    pub estimate: MonteCarloEstimate,
    pub exact_ratio: f64,
    pub z_score: f64,
    pub oracle: FreeEnergyCheck,
    pub stationarity_residual: f64,
}

/// Tolerance on `π_β L_β = 0` for admissible base dynamics.
pub const STATIONARITY_TOL: f64 = 1e-10;

/// Particle estimate of `Z_{β_t} / Z_{β_0}` through `E[exp(-∫ m(ξ_s)(V_s) ds)]`
/// with particles started from `π_{β_0}`, against the exact ratio.
pub fn jarzynski_experiment(jm: &JarzynskiModel, plan: &ReplicaPlan) -> Result<JarzynskiReport> {
    let stationarity_residual = jm.check_stationarity(plan.horizon, STATIONARITY_TOL)?;
    let init = jm.initial_law();
    let gamma0 = initial_vector(&init, jm.model().size())?;
    let oracle = Oracle::new(jm.model()).free_energy_identity_check(&gamma0, plan.horizon)?;
    let records = mean_field_replicas(jm.model(), &init, &[], plan)?;
    let weights: Vec<f64> = records.iter().map(|r| r.weight).collect();
    let estimate = MonteCarloEstimate::from_samples(&weights, plan.seed)?;
    let exact_ratio = jm.free_energy_ratio(plan.horizon);
    Ok(JarzynskiReport {
        z_score: estimate.z_against(exact_ratio),
        estimate,
        exact_ratio,
        oracle,
        stationarity_residual,
    })
}

/// Pooled frozen-target fraction over `runs` conditional runs with frozen
/// paths drawn from the free motion.
pub fn frozen_target_fraction<M: Model>(
    model: &M,
    init: &InitialLaw<M::State>,
    plan: &ReplicaPlan,
) -> Result<(usize, usize)> {
    let logs: Vec<Vec<DualSelectionEvent>> = run_replicas(plan.seed, plan.replicas, plan.threads, |_, _, rng| {
        let x0 = model.sample_initial(init, rng)?;
        let frozen = model.sample_free_motion(&x0, 0.0, plan.horizon, rng)?;
        let dual = simulate_conditional(model, plan.n_particles, plan.horizon, &frozen, init, rng)?;
        Ok(dual.selection_log().to_vec())
    })?;
    let frozen = logs
        .iter()
        .flatten()
        .filter(|e| e.target == SelectionTarget::Frozen)
        .count();
    let total = logs.iter().map(Vec::len).sum();
    Ok((frozen, total))
}
