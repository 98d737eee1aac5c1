//! Exact finite-state Feynman-Kac flows.
//!
//! The unnormalized flow solves `∂_t γ_t = γ_t (L_t - diag V_t)` as a row
//! vector ODE, `η_t = γ_t / Z_t` with `Z_t = γ_t(1)`. For time-homogeneous
//! models every solve is cross-checked against the matrix exponential.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FkError, Result};
use crate::models::FiniteCtmcModel;
use crate::numerics::{expm, integrate_ode, OdeTolerance};

pub const DEFAULT_RTOL: f64 = 1e-10;

/// Agreement required between the ODE route and the matrix exponential,
/// relative to the largest entry (see [`relative_gap`]).
pub const EXPM_AGREEMENT: f64 = 1e-9;

/// `max_i |a_i - b_i| / max(max_i |b_i|, 1e-300)`.
pub fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let size = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / size
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub z: f64,
    pub t: f64,
    pub grid: Vec<f64>,
}

impl OracleSolution {
    /// `γ_t(f)`.
    pub fn gamma_of(&self, f: &[f64]) -> f64 {
        self.gamma.iter().zip(f).map(|(g, v)| g * v).sum()
    }

    /// `η_t(f)`.
    pub fn eta_of(&self, f: &[f64]) -> f64 {
        self.eta.iter().zip(f).map(|(g, v)| g * v).sum()
    }

    /// JSON record `{gamma, eta, z, t, model_hash}`.
    pub fn to_json(&self, model: &FiniteCtmcModel) -> serde_json::Value {
        serde_json::json!({
            "gamma": self.gamma,
            "eta": self.eta,
            "z": self.z,
            "t": self.t,
            "model_hash": model_fingerprint(model),
        })
    }
}

/// FNV-1a digest of the model name, size, `L_0`, `L_1`, `V_0` and `V_1`.
pub fn model_fingerprint(model: &FiniteCtmcModel) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(model.name().as_bytes());
    feed(&(model.size() as u64).to_le_bytes());
    for t in [0.0, 1.0] {
        for v in model.generator(t).iter() {
            feed(&v.to_bits().to_le_bytes());
        }
        for v in model.potential_vector(t).iter() {
            feed(&v.to_bits().to_le_bytes());
        }
    }
    format!("{h:016x}")
}

/// Result of comparing `Z_t` from the linear flow with `exp(-∫ η_s(V_s) ds)`
/// from the normalized flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeEnergyCheck {
    pub z_linear: f64,
    pub z_normalized: f64,
    pub residual: f64,
}

/// Exact solver bound to one finite model.
#[derive(Debug, Clone, Copy)]
pub struct Oracle<'a> {
    model: &'a FiniteCtmcModel,
    rtol: f64,
}

fn row_times_matrix(row: &[f64], a: &DMatrix<f64>, out: &mut [f64]) {
    let n = row.len();
    for (y, o) in out.iter_mut().enumerate().take(n) {
        *o = (0..n).map(|x| row[x] * a[(x, y)]).sum();
    }
}

impl<'a> Oracle<'a> {
    pub fn new(model: &'a FiniteCtmcModel) -> Self {
        Self { model, rtol: DEFAULT_RTOL }
    }

    pub fn with_rtol(model: &'a FiniteCtmcModel, rtol: f64) -> Self {
        Self { model, rtol }
    }

    pub fn model(&self) -> &FiniteCtmcModel {
        self.model
    }

    fn tol(&self) -> OdeTolerance {
        OdeTolerance::new(self.rtol)
    }

    fn check_gamma0(&self, gamma0: &[f64]) -> Result<()> {
        if gamma0.len() != self.model.size() {
            return Err(FkError::Argument(format!(
                "gamma0 has {} entries for {} states",
                gamma0.len(),
                self.model.size()
            )));
        }
        if gamma0.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(FkError::Argument("gamma0 must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Propagates a row vector on `[s, t]` under `row' = row · gen(u)`.
    fn propagate_row(
        &self,
        row: &[f64],
        s: f64,
        t: f64,
        generator: impl Fn(f64) -> DMatrix<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let fixed = self.model.is_time_homogeneous().then(|| generator(s));
        let sol = integrate_ode(
            |u, y, dy| match &fixed {
                Some(a) => row_times_matrix(y, a, dy),
                None => row_times_matrix(y, &generator(u), dy),
            },
            s,
            row,
            t,
            self.tol(),
        )?;
        Ok((sol.y, sol.grid))
    }

    /// Solves the unnormalized flow `γ_t` from `γ_0 = gamma0`.
    pub fn solve_gamma(&self, gamma0: &[f64], t: f64) -> Result<OracleSolution> {
        self.check_gamma0(gamma0)?;
        if !(t >= 0.0) {
            return Err(FkError::Argument(format!("horizon must be nonnegative, got {t}")));
        }
        let (gamma, grid) = self.propagate_row(gamma0, 0.0, t, |u| self.model.feynman_kac_generator(u))?;
        if self.model.is_time_homogeneous() {
            let exact = self.solve_gamma_expm(gamma0, t)?;
            let gap = relative_gap(&gamma, &exact);
            if gap > EXPM_AGREEMENT {
                return Err(FkError::Numeric(format!(
                    "ODE and matrix exponential disagree by {gap:e}"
                )));
            }
        }
        let z: f64 = gamma.iter().sum();
        if !(z > 0.0) {
            return Err(FkError::Numeric(format!("normalizing constant {z} is not positive")));
        }
        let eta = gamma.iter().map(|g| g / z).collect();
        Ok(OracleSolution { gamma, eta, z, t, grid })
    }

    /// `γ_0 e^{t (L - V)}`, time-homogeneous models only.
    pub fn solve_gamma_expm(&self, gamma0: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_gamma0(gamma0)?;
        if !self.model.is_time_homogeneous() {
            return Err(FkError::Argument("matrix exponential route needs a time-homogeneous model".into()));
        }
        let e = expm(&(self.model.feynman_kac_generator(0.0) * t));
        let row = DVector::from_column_slice(gamma0).transpose() * e;
        Ok(row.iter().copied().collect())
    }

    fn matrix_flow(&self, s: f64, t: f64, generator: impl Fn(f64) -> DMatrix<f64>) -> Result<DMatrix<f64>> {
        if !(s <= t) {
            return Err(FkError::Argument(format!("semigroup needs s <= t, got [{s}, {t}]")));
        }
        let n = self.model.size();
        let fixed = self.model.is_time_homogeneous().then(|| generator(s));
        let id = DMatrix::<f64>::identity(n, n);
        let y0: Vec<f64> = id.transpose().iter().copied().collect();
        let sol = integrate_ode(
            |u, y, dy| {
                let owned;
                let a = match &fixed {
                    Some(a) => a,
                    None => {
                        owned = generator(u);
                        &owned
                    }
                };
                for i in 0..n {
                    row_times_matrix(&y[i * n..(i + 1) * n], a, &mut dy[i * n..(i + 1) * n]);
                }
            },
            s,
            &y0,
            t,
            self.tol(),
        )?;
        Ok(DMatrix::from_row_slice(n, n, &sol.y))
    }

    /// `Q_{s,t}(x, y) = E_x[1{X_t = y} exp(-∫_s^t V_u(X_u) du)]`.
    pub fn semigroup_matrix(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        self.matrix_flow(s, t, |u| self.model.feynman_kac_generator(u))
    }

    /// `P_{s,t}`, the transition matrix of the potential-free chain.
    pub fn markov_transition(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        self.matrix_flow(s, t, |u| self.model.generator(u))
    }

    /// `Q_{s,t}(1)` as a vector indexed by the starting state.
    fn survival_to(&self, s: f64, t: f64) -> Result<Vec<f64>> {
        // h_s = Q_{s,t} 1 solves ∂_s h = -(L_s - V_s) h; in reversed time
        // u = t - s it is a forward column ODE.
        let n = self.model.size();
        let fixed = self.model.is_time_homogeneous().then(|| self.model.feynman_kac_generator(0.0));
        let sol = integrate_ode(
            |u, y, dy| {
                let owned;
                let a = match &fixed {
                    Some(a) => a,
                    None => {
                        owned = self.model.feynman_kac_generator(t - u);
                        &owned
                    }
                };
                for x in 0..n {
                    dy[x] = (0..n).map(|z| a[(x, z)] * y[z]).sum();
                }
            },
            0.0,
            &vec![1.0; n],
            t - s,
            self.tol(),
        )?;
        Ok(sol.y)
    }

    /// `E_{Q_t}[∫_0^t g(s, X_s) ds] = Z_t^{-1} ∫_0^t γ_s(g_s ⊙ Q_{s,t}(1)) ds`
    /// by composite Simpson on a uniform grid, doubled until the Richardson
    /// error estimate drops below `rtol`.
    pub fn smoothing_integral(&self, gamma0: &[f64], g: &dyn Fn(f64, usize) -> f64, t: f64) -> Result<f64> {
        self.check_gamma0(gamma0)?;
        if t == 0.0 {
            return Ok(0.0);
        }
        let n = self.model.size();
        let simpson = |m: usize| -> Result<f64> {
            let dt = t / m as f64;
            let mut gamma = gamma0.to_vec();
            let mut total = 0.0;
            for k in 0..=m {
                let s = k as f64 * dt;
                if k > 0 {
                    gamma = self
                        .propagate_row(&gamma, s - dt, s, |u| self.model.feynman_kac_generator(u))?
                        .0;
                }
                let h = self.survival_to(s, t)?;
                let phi: f64 = (0..n).map(|x| gamma[x] * g(s, x) * h[x]).sum();
                let w = if k == 0 || k == m {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                total += w * phi;
            }
            Ok(total * dt / 3.0)
        };
        let z = self.solve_gamma(gamma0, t)?.z;
        let mut m = 16;
        let mut coarse = simpson(m)?;
        loop {
            m *= 2;
            let fine = simpson(m)?;
            let err = (fine - coarse) / 15.0;
            if err.abs() <= self.rtol * fine.abs().max(z) {
                return Ok((fine + err) / z);
            }
            if m >= 4096 {
                return Err(FkError::Numeric(format!(
                    "smoothing quadrature did not converge (error estimate {err:e})"
                )));
            }
            coarse = fine;
        }
    }

    /// Same quantity as [`Self::smoothing_integral`] through the augmented
    /// linear system `∂_t J = J (L - V) + γ_t diag(g_t)`, `J_0 = 0`.
    pub fn smoothing_integral_ode(&self, gamma0: &[f64], g: &dyn Fn(f64, usize) -> f64, t: f64) -> Result<f64> {
        self.check_gamma0(gamma0)?;
        let n = self.model.size();
        let mut y0 = gamma0.to_vec();
        y0.extend(std::iter::repeat_n(0.0, n));
        let sol = integrate_ode(
            |u, y, dy| {
                let a = self.model.feynman_kac_generator(u);
                let (gamma, j) = y.split_at(n);
                let (dgamma, dj) = dy.split_at_mut(n);
                row_times_matrix(gamma, &a, dgamma);
                row_times_matrix(j, &a, dj);
                for x in 0..n {
                    dj[x] += gamma[x] * g(u, x);
                }
            },
            0.0,
            &y0,
            t,
            self.tol(),
        )?;
        let z: f64 = sol.y[..n].iter().sum();
        Ok(sol.y[n..].iter().sum::<f64>() / z)
    }

    /// `Z_t` from the linear flow against `exp(-∫_0^t η_s(V_s) ds)` from the
    /// normalized (nonlinear) flow `∂_t η = η (L - V) + η(V) η`.
    pub fn free_energy_identity_check(&self, gamma0: &[f64], t: f64) -> Result<FreeEnergyCheck> {
        let z_linear = self.solve_gamma(gamma0, t)?.z;
        let n = self.model.size();
        let z0: f64 = gamma0.iter().sum();
        let mut y0: Vec<f64> = gamma0.iter().map(|g| g / z0).collect();
        y0.push(z0.ln());
        let sol = integrate_ode(
            |u, y, dy| {
                let a = self.model.feynman_kac_generator(u);
                let v = self.model.potential_vector(u);
                let eta = &y[..n];
                let mean_v: f64 = eta.iter().zip(v.iter()).map(|(e, v)| e * v).sum();
                row_times_matrix(eta, &a, &mut dy[..n]);
                for x in 0..n {
                    dy[x] += mean_v * eta[x];
                }
                dy[n] = -mean_v;
            },
            0.0,
            &y0,
            t,
            self.tol(),
        )?;
        let z_normalized = sol.y[n].exp();
        Ok(FreeEnergyCheck {
            z_linear,
            z_normalized,
            residual: (z_linear - z_normalized).abs(),
        })
    }
}
