//! Small numerical kernels: adaptive Simpson quadrature, an embedded
//! Dormand-Prince 5(4) integrator and a scaling-and-squaring matrix
//! exponential.

use nalgebra::DMatrix;

use crate::error::{FkError, Result};

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Tolerances for [`integrate_ode`]. The error of component `i` is measured
/// against `atol * |y|_inf + rtol * |y_i|`, so `atol` is a floor relative to
/// the size of the whole state and decaying solutions keep their accuracy.
#[derive(Debug, Clone, Copy)]
pub struct OdeTolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl OdeTolerance {
    pub fn new(rtol: f64) -> Self {
        Self {
            rtol,
            atol: rtol * 1e-3,
        }
    }
}

/// Result of an ODE integration: the final state and the accepted step times.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub y: Vec<f64>,
    pub grid: Vec<f64>,
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = rhs(t, y)` from `t0` to `t1` with adaptive Dormand-Prince 5(4).
///
/// `rhs(t, y, dy)` writes the derivative into `dy`.
pub fn integrate_ode<F>(rhs: F, t0: f64, y0: &[f64], t1: f64, tol: OdeTolerance) -> Result<OdeSolution>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut grid = vec![t0];
    if t1 <= t0 {
        return Ok(OdeSolution { y, grid });
    }
    let span = t1 - t0;
    let mut t = t0;
    let mut h = (span * 0.01).min(0.05).max(span * 1e-6);
    let min_step = span * 1e-14;

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];

    rhs(t, &y, &mut k1);
    let mut steps = 0usize;
    while t < t1 {
        steps += 1;
        if steps > 10_000_000 {
            return Err(FkError::Numeric("ODE step budget exhausted".into()));
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for i in 0..n {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs(t + C2 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * h, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * h, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + h, &tmp, &mut k6);
        for i in 0..n {
            y_new[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        rhs(t + h, &y_new, &mut k7);

        let size = y.iter().chain(&y_new).fold(0.0f64, |m, v| m.max(v.abs()));
        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = (tol.atol * size + tol.rtol * y[i].abs().max(y_new[i].abs())).max(f64::MIN_POSITIVE);
            err = err.max((e / scale).abs());
        }
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            h *= 0.1;
            if h < min_step {
                return Err(FkError::Numeric(format!("non-finite ODE state at t={t}")));
            }
            continue;
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            grid.push(t);
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if h < min_step {
                return Err(FkError::Numeric(format!("step size underflow at t={t}")));
            }
        }
    }
    Ok(OdeSolution { y, grid })
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = one_norm(a);
    let mut squarings = 0u32;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
    }
    let scaled = a / 2f64.powi(squarings as i32);
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..40 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if one_norm(&term) <= 1e-18 * one_norm(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blow_up_is_reported() {
        let r = integrate_ode(|_, y, dy| dy[0] = y[0] * y[0], 0.0, &[1.0], 2.0, OdeTolerance::new(1e-8));
        assert!(matches!(r, Err(FkError::Numeric(_))));
    }

    #[test]
    fn decaying_solutions_keep_relative_accuracy() {
        let sol = integrate_ode(|_, y, dy| dy[0] = -y[0], 0.0, &[1.0], 60.0, OdeTolerance::new(1e-10)).unwrap();
        assert!((sol.y[0] / (-60.0f64).exp() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn simpson_polynomial_and_smooth() {
        let v = adaptive_simpson(&|x: f64| x * x * x, 0.0, 2.0, 1e-12);
        assert!((v - 4.0).abs() < 1e-12);
        let v = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-11);
        assert!((v - 2.0).abs() < 1e-10);
        assert_eq!(adaptive_simpson(&|_| 1.0, 1.0, 1.0, 1e-9), 0.0);
    }

    #[test]
    fn dopri_exponential_decay() {
        let sol = integrate_ode(
            |_, y, dy| dy[0] = -y[0],
            0.0,
            &[1.0],
            3.0,
            OdeTolerance::new(1e-11),
        )
        .unwrap();
        assert!((sol.y[0] - (-3f64).exp()).abs() < 1e-11);
        assert_eq!(*sol.grid.last().unwrap(), 3.0);
    }

    #[test]
    fn expm_rotation_and_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = expm(&(a * 2.0));
        assert!((e[(0, 0)] - 2f64.cos()).abs() < 1e-13);
        assert!((e[(1, 0)] - 2f64.sin()).abs() < 1e-13);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-7.0, 3.0]));
        let e = expm(&d);
        assert!((e[(0, 0)] / (-7f64).exp() - 1.0).abs() < 1e-13);
        assert!((e[(1, 1)] / 3f64.exp() - 1.0).abs() < 1e-13);
    }
}
