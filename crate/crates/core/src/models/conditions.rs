//! Numerical checks of the stability conditions on finite models.

use crate::error::{FkError, Result};
use crate::models::FiniteCtmcModel;
use crate::oracle::Oracle;

/// Largest `ρ` with `ρ μ(y) ≤ P_{t,t+h}(x, y) ≤ μ(y) / ρ` for all `x, y`,
/// where `μ` is the column average of `P_{t,t+h}`. Zero when the two-sided
/// bound fails for every `ρ > 0`.
pub fn check_h0_doeblin(model: &FiniteCtmcModel, t: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(FkError::Argument(format!("h must be positive, got {h}")));
    }
    let p = Oracle::new(model).markov_transition(t, t + h)?;
    let n = model.size();
    let mut rho: f64 = 1.0;
    for y in 0..n {
        let mu = p.column(y).sum() / n as f64;
        if mu <= 0.0 {
            return Ok(0.0);
        }
        for x in 0..n {
            let v = p[(x, y)];
            if v <= 0.0 {
                return Ok(0.0);
            }
            rho = rho.min(v / mu).min(mu / v);
        }
    }
    Ok(rho)
}

/// `max_{x,y} log(Q_{s,t}(1)(x) / Q_{s,t}(1)(y))`.
pub fn check_h2_q(oracle: &Oracle<'_>, s: f64, t: f64) -> Result<f64> {
    let q = oracle.semigroup_matrix(s, t)?;
    let mass: Vec<f64> = (0..q.nrows()).map(|x| q.row(x).sum()).collect();
    log_spread(&mass).map_err(|_| {
        FkError::DegenerateSemigroup(format!("Q_{{{s},{t}}}(1) vanishes at some state: {mass:?}"))
    })
}

/// `log(max / min)` of a positive vector.
pub(crate) fn log_spread(mass: &[f64]) -> Result<f64> {
    let lo = mass.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mass.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) {
        return Err(FkError::DegenerateSemigroup(format!("nonpositive entry in {mass:?}")));
    }
    Ok((hi / lo).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;
    use nalgebra::DMatrix;

    fn two_state_expm_row(t: f64) -> [[f64; 2]; 2] {
        // L = [[-1,1],[2,-2]] has eigenvalues 0 and -3.
        let e = (-3.0 * t).exp();
        [
            [(2.0 + e) / 3.0, (1.0 - e) / 3.0],
            [(2.0 - 2.0 * e) / 3.0, (1.0 + 2.0 * e) / 3.0],
        ]
    }

    #[test]
    fn doeblin_m2_matches_brute_force() {
        let m2 = builtin::m2();
        for h in [0.1, 0.5, 1.0] {
            assert!(check_h0_doeblin(&m2, 0.0, h).unwrap() > 0.0);
        }
        let p = two_state_expm_row(1.0);
        let mut brute: f64 = 1.0;
        for y in 0..2 {
            let mu = (p[0][y] + p[1][y]) / 2.0;
            for row in &p {
                brute = brute.min(row[y] / mu).min(mu / row[y]);
            }
        }
        let rho = check_h0_doeblin(&m2, 0.0, 1.0).unwrap();
        assert!((rho - brute).abs() < 1e-9, "{rho} vs {brute}");
        assert!(check_h0_doeblin(&m2, 0.0, 0.0).is_err());
    }

    #[test]
    fn doeblin_fails_for_absorbing_chain() {
        let frozen = crate::models::FiniteCtmcModel::homogeneous(
            "identity",
            DMatrix::zeros(2, 2),
            vec![0.0, 1.0],
        )
        .unwrap();
        assert_eq!(check_h0_doeblin(&frozen, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn h2_values() {
        let m2 = builtin::m2();
        let o = Oracle::new(&m2);
        assert_eq!(check_h2_q(&o, 0.5, 0.5).unwrap(), 0.0);
        let free = m2.without_potential();
        assert!(check_h2_q(&Oracle::new(&free), 0.0, 1.0).unwrap().abs() < 1e-10);

        let q = o.semigroup_matrix(0.0, 1.0).unwrap();
        let mass = [q.row(0).sum(), q.row(1).sum()];
        let mut brute = f64::NEG_INFINITY;
        for x in 0..2 {
            for y in 0..2 {
                brute = brute.max((mass[x] / mass[y]).ln());
            }
        }
        assert_eq!(check_h2_q(&o, 0.0, 1.0).unwrap(), brute);
    }

    #[test]
    fn h2_degenerate() {
        assert!(matches!(log_spread(&[0.3, 0.0]), Err(FkError::DegenerateSemigroup(_))));
        assert_eq!(log_spread(&[0.5, 0.5]).unwrap(), 0.0);
    }
}
