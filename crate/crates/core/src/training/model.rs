//! Small reference models with hand-written backward passes.
//!
//! `PerPixelLogistic` maps each pixel's feature vector to logits with one
//! affine layer. `Conv2` applies a 3×3 convolution with ReLU followed by a
//! 1×1 convolution. Binary fields (`C == 1`) go through a sigmoid, two-class
//! fields through a softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{FeatureSet, Features};
use crate::error::{Error, Result};
use crate::tensor::{ProbField, TensorF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    PerPixelLogistic,
    Conv2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_set: FeatureSet,
    /// Hidden channels of `conv2`.
    pub channels: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::PerPixelLogistic,
            feature_set: FeatureSet::default(),
            channels: 8,
            classes: 1,
            seed: 42,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_set.is_empty() {
            return Err(Error::BadSpec("feature_set selects no features".into()));
        }
        if !matches!(self.classes, 1 | 2) {
            return Err(Error::BadSpec(format!("classes must be 1 or 2, got {}", self.classes)));
        }
        if self.kind == ModelKind::Conv2 && self.channels == 0 {
            return Err(Error::BadSpec("conv2 needs at least one channel".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        let f = self.feature_set.len();
        let out = self.classes;
        match self.kind {
            ModelKind::PerPixelLogistic => out * (f + 1),
            ModelKind::Conv2 => self.channels * (9 * f + 1) + out * (self.channels + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub prob: ProbField,
    /// Post-ReLU hidden planes of `conv2`, `[channels][H * W]`.
    hidden: Vec<f64>,
}

impl Model {
    /// Zero weights for the logistic model, seeded He-style weights for
    /// `conv2`.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut params = vec![0.0; spec.n_params()];
        if spec.kind == ModelKind::Conv2 {
            let f = spec.feature_set.len();
            let ch = spec.channels;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let w1 = Normal::new(0.0, (2.0 / (9 * f) as f64).sqrt()).expect("finite std");
            let w2 = Normal::new(0.0, (1.0 / ch as f64).sqrt()).expect("finite std");
            let n1 = ch * f * 9;
            for p in &mut params[..n1] {
                *p = w1.sample(&mut rng);
            }
            let o2 = n1 + ch;
            for p in &mut params[o2..o2 + spec.classes * ch] {
                *p = w2.sample(&mut rng);
            }
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.n_params() {
            return Err(Error::CheckpointMismatch(format!(
                "expected {} parameters, found {}",
                spec.n_params(),
                params.len()
            )));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn features(&self, image: &TensorF) -> Result<Features> {
        self.spec.feature_set.compute(image)
    }

    pub fn forward(&self, image: &TensorF) -> Result<ProbField> {
        Ok(self.forward_features(&self.features(image)?)?.prob)
    }

    pub fn forward_features(&self, x: &Features) -> Result<Forward> {
        if x.count != self.spec.feature_set.len() {
            return Err(Error::ShapeMismatch {
                left: vec![self.spec.feature_set.len()],
                right: vec![x.count],
            });
        }
        let (logits, hidden) = match self.spec.kind {
            ModelKind::PerPixelLogistic => (self.logistic_logits(x), Vec::new()),
            ModelKind::Conv2 => self.conv2_logits(x),
        };
        let prob = activate(logits, self.spec.classes, x.height, x.width)?;
        Ok(Forward { prob, hidden })
    }

    fn logistic_logits(&self, x: &Features) -> Vec<f64> {
        let (f, n, out) = (x.count, x.pixels(), self.spec.classes);
        let (w, b) = self.params.split_at(out * f);
        let mut z = Vec::with_capacity(out * n);
        for c in 0..out {
            let mut zc = vec![b[c]; n];
            for k in 0..f {
                let wk = w[c * f + k];
                for (z, v) in zc.iter_mut().zip(x.plane(k)) {
                    *z += wk * v;
                }
            }
            z.extend(zc);
        }
        z
    }

    fn conv2_logits(&self, x: &Features) -> (Vec<f64>, Vec<f64>) {
        let (f, n, out, ch) = (x.count, x.pixels(), self.spec.classes, self.spec.channels);
        let (h, w) = (x.height, x.width);
        let (w1, rest) = self.params.split_at(ch * f * 9);
        let (b1, rest) = rest.split_at(ch);
        let (w2, b2) = rest.split_at(out * ch);
        let mut hidden = vec![0.0; ch * n];
        for k in 0..ch {
            let acc = &mut hidden[k * n..(k + 1) * n];
            acc.fill(b1[k]);
            for m in 0..f {
                let plane = x.plane(m);
                for (o, (di, dj)) in OFFSETS.iter().enumerate() {
                    let wt = w1[(k * f + m) * 9 + o];
                    shifted_axpy(acc, plane, wt, *di, *dj, h, w);
                }
            }
            for v in acc.iter_mut() {
                *v = v.max(0.0);
            }
        }
        let mut z = Vec::with_capacity(out * n);
        for c in 0..out {
            let mut zc = vec![b2[c]; n];
            for k in 0..ch {
                let v = w2[c * ch + k];
                for (z, a) in zc.iter_mut().zip(&hidden[k * n..(k + 1) * n]) {
                    *z += v * a;
                }
            }
            z.extend(zc);
        }
        (z, hidden)
    }

    /// Parameter gradient given `∂L/∂prob` (the loss module's gradient).
    pub fn backward(&self, x: &Features, fwd: &Forward, grad: &TensorF) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.params.len()];
        self.backward_into(x, fwd, grad, &mut out)?;
        Ok(out)
    }

    /// Adds the parameter gradient into `acc`.
    pub fn backward_into(&self, x: &Features, fwd: &Forward, grad: &TensorF, acc: &mut [f64]) -> Result<()> {
        if grad.dims() != fwd.prob.dims() {
            return Err(Error::ShapeMismatch {
                left: fwd.prob.dims().to_vec(),
                right: grad.dims().to_vec(),
            });
        }
        if acc.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                left: vec![self.params.len()],
                right: vec![acc.len()],
            });
        }
        let dz = logit_grad(&fwd.prob, grad.data());
        let (f, n, out) = (x.count, x.pixels(), self.spec.classes);
        match self.spec.kind {
            ModelKind::PerPixelLogistic => {
                let (gw, gb) = acc.split_at_mut(out * f);
                for c in 0..out {
                    let dzc = &dz[c * n..(c + 1) * n];
                    gb[c] += dzc.iter().sum::<f64>();
                    for k in 0..f {
                        gw[c * f + k] += dot(dzc, x.plane(k));
                    }
                }
            }
            ModelKind::Conv2 => {
                let ch = self.spec.channels;
                let (h, w) = (x.height, x.width);
                let w2 = &self.params[ch * f * 9 + ch..ch * f * 9 + ch + out * ch];
                let (gw1, rest) = acc.split_at_mut(ch * f * 9);
                let (gb1, rest) = rest.split_at_mut(ch);
                let (gw2, gb2) = rest.split_at_mut(out * ch);
                let mut dh = vec![0.0; n];
                for k in 0..ch {
                    let hk = &fwd.hidden[k * n..(k + 1) * n];
                    dh.fill(0.0);
                    for c in 0..out {
                        let dzc = &dz[c * n..(c + 1) * n];
                        gw2[c * ch + k] += dot(dzc, hk);
                        let v = w2[c * ch + k];
                        for (d, g) in dh.iter_mut().zip(dzc) {
                            *d += v * g;
                        }
                    }
                    for (d, a) in dh.iter_mut().zip(hk) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    gb1[k] += dh.iter().sum::<f64>();
                    for m in 0..f {
                        let plane = x.plane(m);
                        for (o, (di, dj)) in OFFSETS.iter().enumerate() {
                            gw1[(k * f + m) * 9 + o] += shifted_dot(&dh, plane, *di, *dj, h, w);
                        }
                    }
                }
                for c in 0..out {
                    gb2[c] += dz[c * n..(c + 1) * n].iter().sum::<f64>();
                }
            }
        }
        Ok(())
    }
}

const OFFSETS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rows and columns `(lo, hi)` of the output that read inside the image
/// when shifted by `d`.
fn valid(d: isize, len: usize) -> (usize, usize) {
    if d < 0 {
        ((-d) as usize, len)
    } else {
        (0, len - d as usize)
    }
}

/// `acc[p] += wt * src[p + (di, dj)]` with zero padding.
fn shifted_axpy(acc: &mut [f64], src: &[f64], wt: f64, di: isize, dj: isize, h: usize, w: usize) {
    let (i0, i1) = valid(di, h);
    let (j0, j1) = valid(dj, w);
    for i in i0..i1 {
        let si = (i as isize + di) as usize;
        let dst = &mut acc[i * w + j0..i * w + j1];
        let s0 = (j0 as isize + dj) as usize;
        let src_row = &src[si * w + s0..si * w + s0 + (j1 - j0)];
        for (a, s) in dst.iter_mut().zip(src_row) {
            *a += wt * s;
        }
    }
}

/// `Σ_p g[p] * src[p + (di, dj)]` with zero padding.
fn shifted_dot(g: &[f64], src: &[f64], di: isize, dj: isize, h: usize, w: usize) -> f64 {
    let (i0, i1) = valid(di, h);
    let (j0, j1) = valid(dj, w);
    let mut s = 0.0;
    for i in i0..i1 {
        let si = (i as isize + di) as usize;
        let s0 = (j0 as isize + dj) as usize;
        s += dot(&g[i * w + j0..i * w + j1], &src[si * w + s0..si * w + s0 + (j1 - j0)]);
    }
    s
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn activate(z: Vec<f64>, classes: usize, h: usize, w: usize) -> Result<ProbField> {
    let n = h * w;
    let data = if classes == 1 {
        z.into_iter().map(sigmoid).collect()
    } else {
        let mut p = vec![0.0; classes * n];
        for px in 0..n {
            let m = (0..classes).map(|c| z[c * n + px]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..classes).map(|c| (z[c * n + px] - m).exp()).sum();
            for c in 0..classes {
                p[c * n + px] = (z[c * n + px] - m).exp() / s;
            }
        }
        p
    };
    ProbField::from_vec(classes, h, w, data)
}

/// `∂L/∂z` from `∂L/∂p` through the sigmoid or softmax.
fn logit_grad(prob: &ProbField, g: &[f64]) -> Vec<f64> {
    let (classes, n) = (prob.classes(), prob.pixels());
    let p = prob.data();
    if classes == 1 {
        return p.iter().zip(g).map(|(&p, &g)| g * p * (1.0 - p)).collect();
    }
    let mut dz = vec![0.0; classes * n];
    for px in 0..n {
        let inner: f64 = (0..classes).map(|c| g[c * n + px] * p[c * n + px]).sum();
        for c in 0..classes {
            dz[c * n + px] = p[c * n + px] * (g[c * n + px] - inner);
        }
    }
    dz
}
