//! Kernel-density recalibration of predicted probabilities.
//!
//! A trained model's probability `f(x)` is replaced by a kernel-regression
//! estimate of `E[y | f(x)]` built from a small set of key points sampled
//! from the same batch. Binary outputs use a Beta kernel, multiclass ones a
//! Dirichlet kernel. [`verify_bias_bound`] checks on exact finite
//! distributions that the estimation bias never exceeds the calibration
//! error.

mod bias;
mod kde;
mod kernel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelField, ProbField};

pub use bias::{verify_bias_bound, Atom, BiasReport, FiniteDistribution};
pub use kde::{kde_calibrate, sample_key_points, KdeCalibrator, KdeStats, KeyPointSet};
pub use kernel::{beta_kernel, dirichlet_kernel, log_beta_kernel, log_dirichlet_kernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelScope {
    #[default]
    All,
    MisclassifiedAndBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeSpec {
    pub bandwidth: f64,
    pub n_key: usize,
    pub pixel_scope: PixelScope,
    pub boundary_radius: usize,
    pub seed: u64,
}

impl Default for KdeSpec {
    fn default() -> Self {
        Self {
            bandwidth: 1e-3,
            n_key: 1024,
            pixel_scope: PixelScope::All,
            boundary_radius: 1,
            seed: 42,
        }
    }
}

impl KdeSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "bandwidth must be > 0, got {}",
                self.bandwidth
            )));
        }
        // binary fields still carry two classes for stratification
        if self.n_key < classes.max(2) {
            return Err(Error::InvalidParams(format!(
                "n_key must be at least the number of classes, got {}",
                self.n_key
            )));
        }
        if self.boundary_radius == 0 {
            return Err(Error::InvalidParams("boundary_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Pixels worth recalibrating: those misclassified by `pred` plus those
/// within `boundary_radius` (Chebyshev) of a class change in `label`.
/// Returned indices are sorted.
pub fn select_scope_pixels(pred: &ProbField, label: &LabelField, spec: &KdeSpec) -> Result<Vec<usize>> {
    if pred.dims() != label.dims() {
        return Err(Error::ShapeMismatch {
            left: pred.dims().to_vec(),
            right: label.dims().to_vec(),
        });
    }
    let (h, w) = (pred.height(), pred.width());
    let pm = pred.class_map();
    let lm = label.class_map();
    let r = spec.boundary_radius as isize;
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let idx = i * w + j;
            if pm[idx] != lm[idx] || near_transition(&lm, h, w, i, j, r) {
                out.push(idx);
            }
        }
    }
    Ok(out)
}

fn near_transition(map: &[usize], h: usize, w: usize, i: usize, j: usize, r: isize) -> bool {
    let c = map[i * w + j];
    for di in -r..=r {
        for dj in -r..=r {
            let (ni, nj) = (i as isize + di, j as isize + dj);
            if ni < 0 || nj < 0 || ni >= h as isize || nj >= w as isize {
                continue;
            }
            if map[ni as usize * w + nj as usize] != c {
                return true;
            }
        }
    }
    false
}

/// Applies `spec` to a single prediction, sampling keys from the
/// prediction itself. Returns the calibrated field and kernel counts.
pub fn calibrate_field(pred: &ProbField, label: &LabelField, spec: &KdeSpec) -> Result<(ProbField, KdeStats)> {
    let keys = sample_key_points(std::slice::from_ref(pred), std::slice::from_ref(label), spec)?;
    let kde = KdeCalibrator::new(&keys, spec.bandwidth)?;
    match spec.pixel_scope {
        PixelScope::All => kde.calibrate_field(pred, None),
        PixelScope::MisclassifiedAndBoundary => {
            let scope = select_scope_pixels(pred, label, spec)?;
            kde.calibrate_field(pred, Some(&scope))
        }
    }
}
