//! Pixel-wise cross-entropy. Binary fields (`C == 1`) use the two-sided
//! binary form so that soft targets are matched from both ends.

/// Probabilities are clamped to `[CE_CLAMP, 1 - CE_CLAMP]` before the log.
pub const CE_CLAMP: f64 = 1e-7;

#[inline]
fn clamp(x: f64) -> f64 {
    x.clamp(CE_CLAMP, 1.0 - CE_CLAMP)
}

/// Summed (not averaged) cross-entropy of one `[C, H, W]` image, with the
/// matching gradient written into `grad` scaled by `scale`.
pub(crate) fn image_sum(
    x: &[f64],
    y: &[f64],
    classes: usize,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let mut total = 0.0;
    if classes == 1 {
        for i in 0..x.len() {
            let xi = clamp(x[i]);
            let yi = y[i];
            total -= yi * xi.ln() + (1.0 - yi) * (1.0 - xi).ln();
            grad[i] = scale * (-yi / xi + (1.0 - yi) / (1.0 - xi));
        }
    } else {
        for i in 0..x.len() {
            let xi = clamp(x[i]);
            let yi = y[i];
            if yi != 0.0 {
                total -= yi * xi.ln();
            }
            grad[i] = -scale * yi / xi;
        }
    }
    total
}
