//! Central finite-difference checks of analytic loss gradients.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{Loss, ReductionSpec};
use crate::tensor::TensorF;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖a − n‖₂`
    pub abs_error: f64,
}

impl GradCheck {
    /// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both vanish.
    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic_norm.max(self.numeric_norm);
        if scale == 0.0 {
            0.0
        } else {
            self.abs_error / scale
        }
    }

    /// Error relative to `max(floor, ‖a‖, ‖n‖)`; stays meaningful when the
    /// true gradient is zero or tiny.
    pub fn scaled_error(&self, floor: f64) -> f64 {
        self.abs_error / self.analytic_norm.max(self.numeric_norm).max(floor)
    }
}

/// Compares the analytic gradient of `loss` at a single `[C, H, W]`
/// prediction with central differences of step `step`. The inputs are
/// not range-checked, so probes may leave the simplex.
pub fn gradient_check(loss: &Loss, x: &TensorF, y: &TensorF, red: &ReductionSpec, step: f64) -> Result<GradCheck> {
    let analytic = loss.evaluate_tensors(&[x], &[y], red)?.grads.remove(0);
    let mut probe = x.data().to_vec();
    let mut numeric = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = eval(loss, x.dims(), &probe, y, red)?;
        probe[i] = orig - step;
        let down = eval(loss, x.dims(), &probe, y, red)?;
        probe[i] = orig;
        numeric.push((up - down) / (2.0 * step));
    }
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|a| a * a).sum::<f64>().sqrt();
    Ok(GradCheck {
        analytic_norm: norm(&mut analytic.data().iter().copied()),
        numeric_norm: norm(&mut numeric.iter().copied()),
        abs_error: norm(&mut analytic.data().iter().zip(&numeric).map(|(a, n)| a - n)),
    })
}

fn eval(loss: &Loss, dims: &[usize], data: &[f64], y: &TensorF, red: &ReductionSpec) -> Result<f64> {
    let x = TensorF::new(dims.to_vec(), data.to_vec())?;
    Ok(loss.evaluate_tensors(&[&x], &[y], red)?.value)
}
