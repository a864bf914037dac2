//! Synthetic multi-rater segmentation data.
//!
//! Each image holds one to three irregular blobs. The intensity image is a
//! blurred copy of the clean mask plus a smooth background and white noise.
//! Every rater sees the clean mask grown or shrunk by a random radius and
//! then flips boundary pixels at random.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::box_mean;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::{LabelField, RaterStack, TensorF};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RaterNoise {
    /// Inclusive range of the per-rater radius; negative values erode.
    pub dilate_erode_radius: [i32; 2],
    pub boundary_flip_prob: f64,
}

impl Default for RaterNoise {
    fn default() -> Self {
        Self {
            dilate_erode_radius: [-2, 2],
            boundary_flip_prob: 0.2,
        }
    }
}

impl RaterNoise {
    pub fn none() -> Self {
        Self {
            dilate_erode_radius: [0, 0],
            boundary_flip_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub k_raters: usize,
    pub rater_noise: RaterNoise,
    /// Standard deviation of the white noise added to the intensity image.
    pub image_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_images: 200,
            height: 64,
            width: 64,
            n_classes: 1,
            k_raters: 5,
            rater_noise: RaterNoise::default(),
            image_noise: 0.35,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadSpec(m.to_string()));
        if self.n_images == 0 {
            return bad("n_images must be positive");
        }
        if self.height < 8 || self.width < 8 {
            return bad("images must be at least 8x8");
        }
        if !matches!(self.n_classes, 1 | 2) {
            return bad("n_classes must be 1 or 2");
        }
        if self.k_raters == 0 {
            return bad("k_raters must be positive");
        }
        let [lo, hi] = self.rater_noise.dilate_erode_radius;
        if lo > hi {
            return bad("dilate_erode_radius range is empty");
        }
        if !(0.0..=1.0).contains(&self.rater_noise.boundary_flip_prob) {
            return bad("boundary_flip_prob must be in [0, 1]");
        }
        if !(self.image_noise >= 0.0 && self.image_noise.is_finite()) {
            return bad("image_noise must be >= 0");
        }
        Ok(())
    }
}

/// Images with their clean masks and rater annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[1, H, W]` intensity images.
    pub images: Vec<TensorF>,
    /// Noise-free masks, when known.
    pub clean: Option<Vec<LabelField>>,
    pub raters: Vec<RaterStack>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<TensorF>, raters: Vec<RaterStack>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if images.len() != raters.len() {
            return Err(Error::ShapeMismatch {
                left: vec![images.len()],
                right: vec![raters.len()],
            });
        }
        let classes = raters[0].dims()[0];
        for (img, r) in images.iter().zip(&raters) {
            let d = img.dims();
            if d.len() != 3 || d[0] != 1 || d[1..] != r.dims()[1..] || r.dims()[0] != classes {
                return Err(Error::ShapeMismatch {
                    left: d.to_vec(),
                    right: r.dims().to_vec(),
                });
            }
        }
        Ok(Self {
            images,
            clean: None,
            raters,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    wobble: [(f64, f64); 2],
}

impl Blob {
    fn sample(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let s = h.min(w) as f64;
        Self {
            cy: rng.random_range(0.25..0.75) * h as f64,
            cx: rng.random_range(0.25..0.75) * w as f64,
            ry: rng.random_range(0.09..0.2) * s,
            rx: rng.random_range(0.09..0.2) * s,
            angle: rng.random_range(0.0..std::f64::consts::PI),
            wobble: [
                (rng.random_range(0.0..0.15), rng.random_range(0.0..std::f64::consts::TAU)),
                (rng.random_range(0.0..0.1), rng.random_range(0.0..std::f64::consts::TAU)),
            ],
        }
    }

    fn contains(&self, i: usize, j: usize) -> bool {
        let (dy, dx) = (i as f64 + 0.5 - self.cy, j as f64 + 0.5 - self.cx);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let (u, v) = ((c * dx + s * dy) / self.rx, (-s * dx + c * dy) / self.ry);
        let theta = v.atan2(u);
        let [(a2, p2), (a3, p3)] = self.wobble;
        let edge = 1.0 + a2 * (2.0 * theta + p2).sin() + a3 * (3.0 * theta + p3).sin();
        (u * u + v * v).sqrt() <= edge
    }
}

/// Binary mask grown (`r > 0`) or shrunk (`r < 0`) by a disc of radius `|r|`.
pub(crate) fn morph(mask: &[bool], h: usize, w: usize, r: i32) -> Vec<bool> {
    if r == 0 {
        return mask.to_vec();
    }
    let grow = r > 0;
    let rr = r.unsigned_abs() as isize;
    let mut out = vec![false; mask.len()];
    for i in 0..h {
        for j in 0..w {
            // dilation: any set pixel within the disc; erosion: all set
            let mut hit = !grow;
            'disc: for di in -rr..=rr {
                for dj in -rr..=rr {
                    if di * di + dj * dj > rr * rr {
                        continue;
                    }
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    let v = ni >= 0 && nj >= 0 && (ni as usize) < h && (nj as usize) < w
                        && mask[ni as usize * w + nj as usize];
                    if grow && v {
                        hit = true;
                        break 'disc;
                    }
                    if !grow && !v {
                        hit = false;
                        break 'disc;
                    }
                }
            }
            out[i * w + j] = hit;
        }
    }
    out
}

/// Pixels with a 4-neighbour of the other value.
pub(crate) fn boundary(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for i in 0..h {
        for j in 0..w {
            let v = mask[i * w + j];
            let differs = (i > 0 && mask[(i - 1) * w + j] != v)
                || (i + 1 < h && mask[(i + 1) * w + j] != v)
                || (j > 0 && mask[i * w + j - 1] != v)
                || (j + 1 < w && mask[i * w + j + 1] != v);
            out[i * w + j] = differs;
        }
    }
    out
}

fn to_label(mask: &[bool], classes: usize, h: usize, w: usize) -> Result<LabelField> {
    let fg: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let data = if classes == 1 {
        fg
    } else {
        fg.iter().map(|v| 1.0 - v).chain(fg.iter().copied()).collect()
    };
    LabelField::hard(TensorF::new(vec![classes, h, w], data)?)
}

fn generate_one(spec: &SynthSpec, index: usize) -> Result<(TensorF, LabelField, RaterStack)> {
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let blobs: Vec<Blob> = (0..rng.random_range(1..=3))
        .map(|_| Blob::sample(&mut rng, h, w))
        .collect();
    let mask: Vec<bool> = (0..h * w)
        .map(|k| blobs.iter().any(|b| b.contains(k / w, k % w)))
        .collect();

    // smooth background: a random plane plus the blurred mask
    let (gy, gx) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let contrast = rng.random_range(0.35..0.55);
    let fg: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let blurred = box_mean(&fg, h, w, 1);
    let noise = Normal::new(0.0, spec.image_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::BadSpec(e.to_string()))?;
    let image: Vec<f64> = (0..h * w)
        .map(|k| {
            let (i, j) = ((k / w) as f64 / h as f64 - 0.5, (k % w) as f64 / w as f64 - 0.5);
            let n = if spec.image_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            0.3 + gy * i + gx * j + contrast * blurred[k] + n
        })
        .collect();

    let [lo, hi] = spec.rater_noise.dilate_erode_radius;
    let q = spec.rater_noise.boundary_flip_prob;
    let mut raters = Vec::with_capacity(spec.k_raters);
    for _ in 0..spec.k_raters {
        let r = rng.random_range(lo..=hi);
        let mut m = morph(&mask, h, w, r);
        if q > 0.0 {
            let edge = boundary(&m, h, w);
            for (v, e) in m.iter_mut().zip(edge) {
                if e && rng.random::<f64>() < q {
                    *v = !*v;
                }
            }
        }
        raters.push(to_label(&m, spec.n_classes, h, w)?);
    }
    Ok((
        TensorF::new(vec![1, h, w], image)?,
        to_label(&mask, spec.n_classes, h, w)?,
        RaterStack::new(raters)?,
    ))
}

/// Deterministic dataset for `spec`. Image `i` depends only on the seed and
/// `i`, so datasets of different sizes share their common prefix.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut images = Vec::with_capacity(spec.n_images);
    let mut clean = Vec::with_capacity(spec.n_images);
    let mut raters = Vec::with_capacity(spec.n_images);
    for i in 0..spec.n_images {
        let (img, c, r) = generate_one(spec, i)?;
        images.push(img);
        clean.push(c);
        raters.push(r);
    }
    Ok(Dataset {
        images,
        clean: Some(clean),
        raters,
        classes: spec.n_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn morph_grows_and_shrinks() {
        let (h, w) = (9, 9);
        let mut m = vec![false; 81];
        for i in 3..6 {
            for j in 3..6 {
                m[i * w + j] = true;
            }
        }
        let grown = morph(&m, h, w, 1);
        assert_eq!(grown.iter().filter(|&&v| v).count(), 9 + 12);
        let shrunk = morph(&m, h, w, -1);
        assert_eq!(shrunk.iter().filter(|&&v| v).count(), 1);
    }

    #[test]
    fn spec_validation() {
        let mut s = SynthSpec::default();
        assert!(s.validate().is_ok());
        s.n_classes = 3;
        assert!(matches!(s.validate(), Err(Error::BadSpec(_))));
    }
}
