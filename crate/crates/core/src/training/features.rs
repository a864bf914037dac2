//! Per-pixel input features: raw intensity and box means at several radii.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorF;

/// Mean over the `(2r + 1)²` window clipped to the image, via an integral
/// image.
pub fn box_mean(data: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let stride = w + 1;
    let mut integral = vec![0.0; (h + 1) * stride];
    for i in 0..h {
        let mut row = 0.0;
        for j in 0..w {
            row += data[i * w + j];
            integral[(i + 1) * stride + j + 1] = integral[i * stride + j + 1] + row;
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        let (i0, i1) = (i.saturating_sub(r), (i + r + 1).min(h));
        for j in 0..w {
            let (j0, j1) = (j.saturating_sub(r), (j + r + 1).min(w));
            let s = integral[i1 * stride + j1] - integral[i0 * stride + j1] - integral[i1 * stride + j0]
                + integral[i0 * stride + j0];
            out[i * w + j] = s / ((i1 - i0) * (j1 - j0)) as f64;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSet {
    pub intensity: bool,
    pub box_radii: Vec<usize>,
}

impl Default for FeatureSet {
    fn default() -> Self {
        Self {
            intensity: true,
            box_radii: vec![1, 2, 4],
        }
    }
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        usize::from(self.intensity) + self.box_radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn compute(&self, image: &TensorF) -> Result<Features> {
        let d = image.dims();
        if d.len() != 3 || d[0] != 1 {
            return Err(Error::BadDims(d.to_vec()));
        }
        let (h, w) = (d[1], d[2]);
        let src = image.data();
        let mut data = Vec::with_capacity(self.len() * h * w);
        if self.intensity {
            data.extend_from_slice(src);
        }
        for &r in &self.box_radii {
            data.extend(box_mean(src, h, w, r));
        }
        Ok(Features {
            height: h,
            width: w,
            count: self.len(),
            data,
        })
    }
}

/// Feature planes, `[count][H * W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub height: usize,
    pub width: usize,
    pub count: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, f: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[f * n..(f + 1) * n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_mean_matches_brute_force() {
        let (h, w) = (5, 7);
        let data: Vec<f64> = (0..h * w).map(|k| ((k * 37) % 11) as f64).collect();
        for r in 0..3 {
            let fast = box_mean(&data, h, w, r);
            for i in 0..h {
                for j in 0..w {
                    let mut s = 0.0;
                    let mut n = 0.0;
                    for a in i.saturating_sub(r)..(i + r + 1).min(h) {
                        for b in j.saturating_sub(r)..(j + r + 1).min(w) {
                            s += data[a * w + b];
                            n += 1.0;
                        }
                    }
                    assert!((fast[i * w + j] - s / n).abs() < 1e-12);
                }
            }
        }
    }
}
