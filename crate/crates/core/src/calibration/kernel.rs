//! Beta and Dirichlet kernels, evaluated in log space.
//!
//! A key with confidence `f` and bandwidth `h` defines a density with
//! concentration `α_k = f_k / h + 1`; the kernel value at a query point is
//! that density evaluated there. Small bandwidths give concentrations in
//! the thousands, so the normalizing constant is only ever handled as a
//! log-gamma difference.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::tensor::SIMPLEX_TOL;

/// `a · ln(b)` with the convention `0 · ln 0 = 0`.
#[inline]
pub(crate) fn xlogy(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

/// Log normalizer and exponents `α_k - 1` of the kernel centred on `key`.
pub(crate) fn key_coefficients(key: &[f64], h: f64) -> (f64, Vec<f64>) {
    let exps: Vec<f64> = key.iter().map(|&f| f / h).collect();
    let total: f64 = exps.iter().map(|e| e + 1.0).sum();
    let log_norm = ln_gamma(total) - exps.iter().map(|e| ln_gamma(e + 1.0)).sum::<f64>();
    (log_norm, exps)
}

fn log_density(query: &[f64], key: &[f64], h: f64) -> f64 {
    let (log_norm, exps) = key_coefficients(key, h);
    log_norm + exps.iter().zip(query).map(|(&e, &q)| xlogy(e, q)).sum::<f64>()
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("bandwidth must be > 0, got {h}")))
    }
}

/// Log of [`beta_kernel`].
pub fn log_beta_kernel(fj: f64, fi: f64, h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    for (index, v) in [fj, fi].into_iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::NonFinite { index });
        }
    }
    Ok(log_density(&[fj, 1.0 - fj], &[fi, 1.0 - fi], h))
}

/// Beta(`fi/h + 1`, `(1 - fi)/h + 1`) density evaluated at `fj`.
pub fn beta_kernel(fj: f64, fi: f64, h: f64) -> Result<f64> {
    Ok(log_beta_kernel(fj, fi, h)?.exp())
}

fn check_simplex(v: &[f64]) -> Result<()> {
    if let Some(index) = v.iter().position(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::OutOfRange {
            index,
            value: v[index],
        });
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::SimplexViolation { pixel: 0, sum });
    }
    Ok(())
}

pub fn log_dirichlet_kernel(fj: &[f64], fi: &[f64], h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    if fj.len() != fi.len() || fj.len() < 2 {
        return Err(Error::ShapeMismatch {
            left: vec![fj.len()],
            right: vec![fi.len()],
        });
    }
    check_simplex(fj)?;
    check_simplex(fi)?;
    Ok(log_density(fj, fi, h))
}

/// Dirichlet density with `α_k = fi_k / h + 1`, evaluated at `fj`.
pub fn dirichlet_kernel(fj: &[f64], fi: &[f64], h: f64) -> Result<f64> {
    Ok(log_dirichlet_kernel(fj, fi, h)?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn ln_gamma_accuracy() {
        assert_abs_diff_eq!(ln_gamma(0.5), 0.5 * PI.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(1.5), (PI.sqrt() / 2.0).ln(), epsilon = 1e-13);
        let ln_fact_1000: f64 = (1..=1000).map(|k| f64::from(k).ln()).sum();
        let got = ln_gamma(1001.0);
        assert!(((got - ln_fact_1000) / ln_fact_1000).abs() < 1e-10);
    }

    #[test]
    fn beta_closed_form_at_centre() {
        // Beta(1.5, 1.5) at 0.5 = Γ(3) / Γ(1.5)² · 0.5 = 4 / π
        let k = beta_kernel(0.5, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(k, 4.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn beta_mode_is_key() {
        for h in [0.1, 0.01, 0.001] {
            let fi = 0.3;
            let a = fi / h + 1.0;
            let b = (1.0 - fi) / h + 1.0;
            assert_abs_diff_eq!((a - 1.0) / (a + b - 2.0), fi, epsilon = 1e-12);
            let at = beta_kernel(0.3, fi, h).unwrap();
            assert!(at > beta_kernel(0.29, fi, h).unwrap());
            assert!(at > beta_kernel(0.31, fi, h).unwrap());
        }
    }

    #[test]
    fn beta_edges() {
        // α = 1 at fi = 0, so the density at fj = 0 is finite and positive
        assert!(beta_kernel(0.0, 0.0, 0.1).unwrap() > 0.0);
        assert_eq!(beta_kernel(0.0, 0.5, 0.1).unwrap(), 0.0);
        assert!(beta_kernel(1.2, 0.5, 0.1).is_err());
        assert!(beta_kernel(0.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn dirichlet_two_classes_is_beta() {
        for &(fj, fi, h) in &[(0.2, 0.7, 0.05), (0.5, 0.5, 1.0), (0.9, 0.1, 0.001), (0.33, 0.31, 0.001)] {
            let d = log_dirichlet_kernel(&[fj, 1.0 - fj], &[fi, 1.0 - fi], h).unwrap();
            let b = log_beta_kernel(fj, fi, h).unwrap();
            assert_abs_diff_eq!(d, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn dirichlet_rejects_off_simplex() {
        assert!(matches!(
            dirichlet_kernel(&[0.5, 0.6], &[0.5, 0.5], 0.1),
            Err(Error::SimplexViolation { .. })
        ));
    }

    #[test]
    fn symmetric_dirichlet_is_permutation_invariant() {
        let u = [1.0 / 3.0; 3];
        let a = dirichlet_kernel(&[0.2, 0.3, 0.5], &u, 1.0).unwrap();
        let b = dirichlet_kernel(&[0.5, 0.2, 0.3], &u, 1.0).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}
