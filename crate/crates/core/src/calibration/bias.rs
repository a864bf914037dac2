//! Exact check that estimation bias is bounded by calibration error on a
//! finite joint distribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One support point: with probability `prob` the model outputs
/// `confidence` on an input whose true foreground probability is `bayes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub prob: f64,
    pub confidence: f64,
    pub bayes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    pub atoms: Vec<Atom>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    /// `|E[p*(y|x) - f(x)]|`
    pub bias: f64,
    /// `E[|E[y|f(x)] - f(x)|]`
    pub calib_error: f64,
    pub holds: bool,
}

const SUM_TOL: f64 = 1e-9;

pub fn verify_bias_bound(dist: &FiniteDistribution) -> Result<BiasReport> {
    if dist.atoms.is_empty() {
        return Err(Error::InvalidDistribution("no atoms".into()));
    }
    let mut total = 0.0;
    for (i, a) in dist.atoms.iter().enumerate() {
        let ok = a.prob >= 0.0 && (0.0..=1.0).contains(&a.confidence) && (0.0..=1.0).contains(&a.bayes);
        if !ok || !a.prob.is_finite() {
            return Err(Error::InvalidDistribution(format!("atom {i} out of range")));
        }
        total += a.prob;
    }
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
    }

    // group by the exact confidence value to get E[y | f]
    let mut groups: BTreeMap<u64, (f64, f64, f64)> = BTreeMap::new();
    let mut signed = 0.0;
    for a in &dist.atoms {
        signed += a.prob * (a.bayes - a.confidence);
        let g = groups.entry(a.confidence.to_bits()).or_insert((a.confidence, 0.0, 0.0));
        g.1 += a.prob;
        g.2 += a.prob * a.bayes;
    }
    let calib_error: f64 = groups
        .values()
        .filter(|(_, mass, _)| *mass > 0.0)
        .map(|&(f, mass, weighted)| mass * (weighted / mass - f).abs())
        .sum();
    let bias = signed.abs();
    Ok(BiasReport {
        bias,
        calib_error,
        holds: bias <= calib_error + 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn atom(prob: f64, confidence: f64, bayes: f64) -> Atom {
        Atom { prob, confidence, bayes }
    }

    #[test]
    fn calibrated_has_no_error() {
        let d = FiniteDistribution {
            atoms: vec![atom(0.3, 0.2, 0.1), atom(0.3, 0.2, 0.3), atom(0.4, 0.9, 0.9)],
        };
        let r = verify_bias_bound(&d).unwrap();
        assert_abs_diff_eq!(r.calib_error, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.bias, 0.0, epsilon = 1e-15);
        assert!(r.holds);
    }

    #[test]
    fn two_point() {
        let d = FiniteDistribution {
            atoms: vec![atom(0.5, 0.2, 0.4), atom(0.5, 0.8, 0.6)],
        };
        let r = verify_bias_bound(&d).unwrap();
        assert_abs_diff_eq!(r.calib_error, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.bias, 0.0, epsilon = 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn rejects_bad_mass() {
        let d = FiniteDistribution {
            atoms: vec![atom(0.5, 0.2, 0.4)],
        };
        assert!(matches!(verify_bias_bound(&d), Err(Error::InvalidDistribution(_))));
    }
}
