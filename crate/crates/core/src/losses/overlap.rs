//! Region (overlap) losses expressed through four additive statistics of a
//! class: `sx = ‖x‖₁`, `sy = ‖y‖₁`, `d = ‖x − y‖₁` and `p = ⟨x, y⟩`.
//!
//! Every loss here is a function `v(sx, sy, d, p)`, so its gradient with
//! respect to `xᵢ` is `v_sx + v_d · sign(xᵢ − yᵢ) + v_p · yᵢ`. Because the
//! statistics are sums, pooling over several images only means adding them.

use super::TverskyParams;

/// The overlap losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Sdl,
    Sjl,
    Jml1,
    Jml2,
    Dml1,
    Dml2,
    Stl,
    Ctl,
    Cftl,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub sx: f64,
    pub sy: f64,
    pub d: f64,
    pub p: f64,
}

impl Stats {
    pub fn of(x: &[f64], y: &[f64]) -> Self {
        let mut s = Self::default();
        s.accumulate(x, y);
        s
    }

    pub fn accumulate(&mut self, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), y.len());
        for (&xi, &yi) in x.iter().zip(y) {
            self.sx += xi;
            self.sy += yi;
            self.d += (xi - yi).abs();
            self.p += xi * yi;
        }
    }

    pub fn total(&self) -> f64 {
        self.sx + self.sy
    }
}

/// Value of the loss plus its partial derivatives with respect to
/// `sx`, `d` and `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partials {
    pub value: f64,
    pub d_sx: f64,
    pub d_d: f64,
    pub d_p: f64,
}

impl Partials {
    fn flat(value: f64) -> Self {
        Self {
            value,
            d_sx: 0.0,
            d_d: 0.0,
            d_p: 0.0,
        }
    }

    /// Gradient element for a pixel with prediction `xi` and label `yi`.
    #[inline]
    pub fn grad(&self, xi: f64, yi: f64, sign_at_zero: f64) -> f64 {
        self.d_sx + self.d_d * sign(xi - yi, sign_at_zero) + self.d_p * yi
    }
}

#[inline]
pub fn sign(v: f64, at_zero: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        at_zero
    }
}

impl Region {
    /// Evaluates the loss from class statistics. Returns `None` when both
    /// the prediction and the label are empty (`sx + sy == 0`).
    pub fn eval(self, s: &Stats, t: &TverskyParams) -> Option<Partials> {
        let total = s.total();
        if total <= 0.0 {
            return None;
        }
        let Stats { sx, sy, d, p } = *s;
        let out = match self {
            Region::Sdl => Partials {
                value: 1.0 - 2.0 * p / total,
                d_sx: 2.0 * p / (total * total),
                d_d: 0.0,
                d_p: -2.0 / total,
            },
            Region::Sjl => {
                let union = total - p;
                Partials {
                    value: 1.0 - p / union,
                    d_sx: p / (union * union),
                    d_d: 0.0,
                    d_p: -total / (union * union),
                }
            }
            Region::Jml1 => {
                let w = total + d;
                Partials {
                    value: 2.0 * d / w,
                    d_sx: -2.0 * d / (w * w),
                    d_d: 2.0 * total / (w * w),
                    d_p: 0.0,
                }
            }
            Region::Jml2 => {
                let w = p + d;
                if w <= 0.0 {
                    return Some(Partials::flat(0.0));
                }
                Partials {
                    value: d / w,
                    d_sx: 0.0,
                    d_d: p / (w * w),
                    d_p: -d / (w * w),
                }
            }
            Region::Dml1 => Partials {
                value: d / total,
                d_sx: -d / (total * total),
                d_d: 1.0 / total,
                d_p: 0.0,
            },
            Region::Dml2 => {
                let w = 2.0 * p + d;
                if w <= 0.0 {
                    return Some(Partials::flat(0.0));
                }
                Partials {
                    value: d / w,
                    d_sx: 0.0,
                    d_d: 2.0 * p / (w * w),
                    d_p: -2.0 * d / (w * w),
                }
            }
            Region::Stl => {
                let (a, b) = (t.alpha, t.beta);
                let denom = a * sx + b * sy + (1.0 - a - b) * p;
                if denom <= 0.0 {
                    return Some(Partials::flat(1.0));
                }
                let q = denom * denom;
                Partials {
                    value: (a * sx + b * sy - (a + b) * p) / denom,
                    d_sx: a * p / q,
                    d_d: 0.0,
                    d_p: -(a * sx + b * sy) / q,
                }
            }
            Region::Ctl | Region::Cftl => {
                let ctl = ctl(s, t)?;
                if self == Region::Ctl {
                    ctl
                } else {
                    focal(ctl, t.gamma)
                }
            }
        };
        Some(Partials {
            value: out.value.clamp(0.0, 1.0),
            ..out
        })
    }

    pub fn uses_tversky(self) -> bool {
        matches!(self, Region::Stl | Region::Ctl | Region::Cftl)
    }
}

fn ctl(s: &Stats, t: &TverskyParams) -> Option<Partials> {
    let (a, b) = (t.alpha, t.beta);
    let Stats { sx, sy, d, .. } = *s;
    let n = sx + sy - d;
    let denom = 2.0 * a * sx + 2.0 * b * sy + (1.0 - a - b) * n;
    if denom <= 0.0 {
        return Some(Partials::flat(1.0));
    }
    let q = denom * denom;
    // denom - n written so that x == y gives an exact zero
    let numer = (a - b) * (sx - sy) + (a + b) * d;
    Some(Partials {
        value: numer / denom,
        d_sx: -(denom - n * (1.0 + a - b)) / q,
        d_d: (denom - n * (1.0 - a - b)) / q,
        d_p: 0.0,
    })
}

fn focal(base: Partials, gamma: f64) -> Partials {
    let v = base.value.max(0.0);
    let scale = if gamma == 1.0 {
        1.0
    } else if v > 0.0 {
        gamma * v.powf(gamma - 1.0)
    } else {
        0.0
    };
    Partials {
        value: v.powf(gamma),
        d_sx: base.d_sx * scale,
        d_d: base.d_d * scale,
        d_p: base.d_p * scale,
    }
}

/// Loss value on flat vectors, with `empty_value` for two empty inputs.
pub fn value(region: Region, t: &TverskyParams, x: &[f64], y: &[f64], empty_value: f64) -> f64 {
    region
        .eval(&Stats::of(x, y), t)
        .map_or(empty_value, |p| p.value)
}

/// Loss value and gradient with respect to `x` on flat vectors.
pub fn value_and_grad(
    region: Region,
    t: &TverskyParams,
    x: &[f64],
    y: &[f64],
    empty_value: f64,
    sign_at_zero: f64,
) -> (f64, Vec<f64>) {
    match region.eval(&Stats::of(x, y), t) {
        Some(part) => (
            part.value,
            x.iter()
                .zip(y)
                .map(|(&xi, &yi)| part.grad(xi, yi, sign_at_zero))
                .collect(),
        ),
        None => (empty_value, vec![0.0; x.len()]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const DEF: TverskyParams = TverskyParams {
        alpha: 0.5,
        beta: 0.5,
        gamma: 1.0,
    };

    fn v(r: Region, x: &[f64], y: &[f64]) -> f64 {
        value(r, &DEF, x, y, 0.0)
    }

    #[test]
    fn sdl_hand_values() {
        assert_eq!(v(Region::Sdl, &[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_abs_diff_eq!(v(Region::Sdl, &[0.8, 0.2], &[1.0, 0.0]), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(v(Region::Sdl, &[1.0], &[0.5]), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v(Region::Sdl, &[0.5], &[0.5]), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn sjl_hand_values() {
        assert_abs_diff_eq!(v(Region::Sjl, &[0.8, 0.2], &[1.0, 0.0]), 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v(Region::Sjl, &[1.0], &[0.5]), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v(Region::Sjl, &[0.5], &[0.5]), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(v(Region::Sjl, &[0.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn jml_hand_values() {
        for r in [Region::Jml1, Region::Jml2] {
            assert_eq!(v(r, &[0.3, 0.7], &[0.3, 0.7]), 0.0);
            assert_abs_diff_eq!(v(r, &[0.8, 0.2], &[1.0, 0.0]), 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(v(Region::Jml1, &[1.0], &[0.5]), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn dml_hand_values() {
        for r in [Region::Dml1, Region::Dml2] {
            assert_eq!(v(r, &[0.5], &[0.5]), 0.0);
            assert_abs_diff_eq!(v(r, &[1.0], &[0.5]), 1.0 / 3.0, epsilon = 1e-15);
            assert_eq!(v(r, &[0.0, 1.0], &[1.0, 0.0]), 1.0);
            assert_abs_diff_eq!(v(r, &[0.0, 1.0], &[1.0, 1.0]), 1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(v(r, &[1.0, 1.0], &[1.0, 0.0]), 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn tversky_hand_values() {
        let t = TverskyParams {
            alpha: 0.7,
            beta: 0.3,
            gamma: 1.0,
        };
        assert_abs_diff_eq!(
            value(Region::Stl, &t, &[0.8, 0.2], &[1.0, 0.0], 0.0),
            0.2,
            epsilon = 1e-15
        );
        for gamma in [0.5, 1.0, 2.0, 4.0] {
            let t = TverskyParams { gamma, ..t };
            assert_eq!(value(Region::Ctl, &t, &[0.8], &[0.8], 0.0), 0.0);
            assert_eq!(value(Region::Cftl, &t, &[0.8], &[0.8], 0.0), 0.0);
        }
    }

    #[test]
    fn empty_pair_uses_empty_value() {
        for r in [Region::Sdl, Region::Dml1, Region::Dml2, Region::Jml2, Region::Ctl] {
            assert_eq!(value(r, &DEF, &[0.0, 0.0], &[0.0, 0.0], 0.25), 0.25);
        }
    }

    #[test]
    fn dml1_gradient_vanishes_at_reflexivity() {
        let (val, g) = value_and_grad(Region::Dml1, &DEF, &[0.4, 0.6], &[0.4, 0.6], 0.0, 0.0);
        assert_eq!(val, 0.0);
        assert!(g.iter().all(|&gi| gi == 0.0));
    }
}
