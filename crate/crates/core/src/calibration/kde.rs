//! Kernel-regression estimate of `E[y | f(x)]` from a sample of key points.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernel::key_coefficients;
use super::KdeSpec;
use crate::error::{Error, Result};
use crate::tensor::{LabelField, ProbField, TensorF};

/// Sampled (confidence, label) pairs. Rows have `C` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyPointSet {
    pub confidences: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
    /// Flat pixel index into the batch (`image * H * W + pixel`).
    pub provenance: Vec<usize>,
}

impl KeyPointSet {
    pub fn len(&self) -> usize {
        self.confidences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.confidences.is_empty()
    }
}

/// Class-stratified sample of key points from a batch. Every class present
/// in the labels contributes up to `⌈n_key / n_unique⌉` points; when
/// `n_key` covers the whole batch every pixel is returned.
pub fn sample_key_points(preds: &[ProbField], labels: &[LabelField], spec: &KdeSpec) -> Result<KeyPointSet> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::EmptyBatch);
    }
    let classes = preds[0].classes();
    spec.validate(classes)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut offset = 0;
    for (p, l) in preds.iter().zip(labels) {
        if p.dims() != l.dims() || p.classes() != classes {
            return Err(Error::ShapeMismatch {
                left: p.dims().to_vec(),
                right: l.dims().to_vec(),
            });
        }
        for (i, c) in l.class_map().into_iter().enumerate() {
            by_class.entry(c).or_default().push(offset + i);
        }
        offset += p.pixels();
    }
    let total = offset;

    let mut chosen: Vec<usize> = if spec.n_key >= total {
        (0..total).collect()
    } else {
        let quota = spec.n_key.div_ceil(by_class.len());
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut picked = Vec::with_capacity(quota * by_class.len());
        for members in by_class.values() {
            let take = quota.min(members.len());
            picked.extend(
                rand::seq::index::sample(&mut rng, members.len(), take)
                    .into_iter()
                    .map(|i| members[i]),
            );
        }
        picked
    };
    chosen.sort_unstable();

    let pixels = preds[0].pixels();
    let mut keys = KeyPointSet {
        confidences: Vec::with_capacity(chosen.len()),
        labels: Vec::with_capacity(chosen.len()),
        provenance: chosen.clone(),
    };
    for flat in chosen {
        let (img, px) = (flat / pixels, flat % pixels);
        keys.confidences.push(preds[img].row(px));
        keys.labels.push(labels[img].row(px));
    }
    Ok(keys)
}

/// Kernel components of a probability row: `(p, 1 - p)` for binary rows.
fn components(row: &[f64]) -> Vec<f64> {
    if row.len() == 1 {
        vec![row[0], 1.0 - row[0]]
    } else {
        row.to_vec()
    }
}

/// Precomputed kernel coefficients for a frozen key-point set.
#[derive(Debug, Clone)]
pub struct KdeCalibrator {
    log_norms: Vec<f64>,
    /// `α_ik - 1`, row-major `[key][component]`.
    exps: Vec<f64>,
    labels: Vec<f64>,
    width: usize,
    classes: usize,
}

/// Outcome of calibrating many rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KdeStats {
    pub kernel_evals: u64,
    pub degenerate: u64,
}

impl KdeCalibrator {
    pub fn new(keys: &KeyPointSet, h: f64) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParams(format!("bandwidth must be > 0, got {h}")));
        }
        let classes = keys.confidences[0].len();
        let width = components(&keys.confidences[0]).len();
        let mut log_norms = Vec::with_capacity(keys.len());
        let mut exps = Vec::with_capacity(keys.len() * width);
        let mut labels = Vec::with_capacity(keys.len() * classes);
        for (conf, label) in keys.confidences.iter().zip(&keys.labels) {
            if conf.len() != classes || label.len() != classes {
                return Err(Error::ShapeMismatch {
                    left: vec![classes],
                    right: vec![conf.len(), label.len()],
                });
            }
            let (ln, e) = key_coefficients(&components(conf), h);
            log_norms.push(ln);
            exps.extend(e);
            labels.extend_from_slice(label);
        }
        Ok(Self {
            log_norms,
            exps,
            labels,
            width,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.log_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_norms.is_empty()
    }

    /// Kernel-weighted mean of the key labels, or
    /// [`Error::DegenerateWeights`] when every weight underflows.
    pub fn try_calibrate(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.classes {
            return Err(Error::ShapeMismatch {
                left: vec![self.classes],
                right: vec![row.len()],
            });
        }
        let logq: Vec<f64> = components(row).iter().map(|q| q.ln()).collect();
        let mut logw = Vec::with_capacity(self.len());
        let mut max = f64::NEG_INFINITY;
        for (k, &ln) in self.log_norms.iter().enumerate() {
            let e = &self.exps[k * self.width..(k + 1) * self.width];
            let mut lw = ln;
            for (&ek, &lq) in e.iter().zip(&logq) {
                if ek != 0.0 {
                    lw += ek * lq;
                }
            }
            if lw > max {
                max = lw;
            }
            logw.push(lw);
        }
        if max == f64::NEG_INFINITY || !max.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        let mut out = vec![0.0; self.classes];
        let mut total = 0.0;
        for (k, lw) in logw.into_iter().enumerate() {
            let w = (lw - max).exp();
            total += w;
            let y = &self.labels[k * self.classes..(k + 1) * self.classes];
            for (o, &yc) in out.iter_mut().zip(y) {
                *o += w * yc;
            }
        }
        for o in &mut out {
            *o = (*o / total).clamp(0.0, 1.0);
        }
        Ok(out)
    }

    /// Like [`Self::try_calibrate`] but returns the input unchanged (with a
    /// warning) when the weights degenerate.
    pub fn calibrate(&self, row: &[f64]) -> Vec<f64> {
        match self.try_calibrate(row) {
            Ok(out) => out,
            Err(_) => {
                log::warn!("KDE weights underflowed; keeping the uncalibrated probability");
                row.to_vec()
            }
        }
    }

    /// Calibrates the listed pixels of `pred` (all pixels when `pixels` is
    /// `None`) and leaves the rest untouched.
    pub fn calibrate_field(&self, pred: &ProbField, pixels: Option<&[usize]>) -> Result<(ProbField, KdeStats)> {
        let n = pred.pixels();
        let classes = pred.classes();
        let mut data = pred.data().to_vec();
        let mut stats = KdeStats::default();
        let mut apply = |px: usize| {
            let row = pred.row(px);
            let out = match self.try_calibrate(&row) {
                Ok(out) => out,
                Err(_) => {
                    stats.degenerate += 1;
                    row
                }
            };
            stats.kernel_evals += self.len() as u64;
            for (c, v) in out.into_iter().enumerate() {
                data[c * n + px] = v;
            }
        };
        match pixels {
            Some(list) => list.iter().for_each(|&p| apply(p)),
            None => (0..n).for_each(&mut apply),
        }
        if stats.degenerate > 0 {
            log::warn!("{} pixels kept uncalibrated after weight underflow", stats.degenerate);
        }
        if classes > 1 {
            renormalize(&mut data, classes, n);
        }
        Ok((ProbField::new(TensorF::new(pred.dims().to_vec(), data)?)?, stats))
    }
}

fn renormalize(data: &mut [f64], classes: usize, n: usize) {
    for p in 0..n {
        let s: f64 = (0..classes).map(|c| data[c * n + p]).sum();
        if s > 0.0 {
            for c in 0..classes {
                data[c * n + p] /= s;
            }
        }
    }
}

/// One-shot estimate for a single prediction row.
pub fn kde_calibrate(row: &[f64], keys: &KeyPointSet, h: f64) -> Result<Vec<f64>> {
    Ok(KdeCalibrator::new(keys, h)?.calibrate(row))
}
