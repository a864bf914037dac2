//! Segmentation losses with analytic gradients.
//!
//! Overlap losses: soft Dice (`sdl`), soft Jaccard (`sjl`), the Jaccard
//! metric losses (`jml1`, `jml2`), the Dice semimetric losses (`dml1`,
//! `dml2`), soft Tversky (`stl`), compatible Tversky (`ctl`) and its focal
//! form (`cftl`). `sdl`, `sjl` and `stl` are only meaningful with hard
//! labels; the JML/DML/CTL families accept soft labels and are minimized
//! at `x == y`. `ce` is pixel-wise cross-entropy and `compound` mixes
//! `ce` with `dml1`.
//!
//! Losses are computed per class on the flattened `H * W` vectors and then
//! reduced over classes and images according to a [`ReductionSpec`].

pub mod ce;
pub mod overlap;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelField, ProbField, TensorF};

pub use overlap::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    /// Average over classes with a nonempty prediction or label.
    #[default]
    MeanPresent,
    MeanAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    PerImageThenMean,
    /// Treat the whole batch as one large image.
    Pooled,
}

/// How per-class losses are aggregated over classes and images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionSpec {
    pub class_mode: ClassMode,
    pub batch_mode: BatchMode,
    /// Loss of a class whose prediction and label are both empty.
    pub empty_both_value: f64,
}

impl Default for ReductionSpec {
    fn default() -> Self {
        Self {
            class_mode: ClassMode::MeanPresent,
            batch_mode: BatchMode::PerImageThenMean,
            empty_both_value: 0.0,
        }
    }
}

impl ReductionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.empty_both_value) {
            return Err(Error::InvalidParams(format!(
                "empty_both_value {} outside [0, 1]",
                self.empty_both_value
            )));
        }
        Ok(())
    }
}

/// Tversky weights for false positives (`alpha`) and false negatives
/// (`beta`), plus the focal exponent used by CFTL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TverskyParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for TverskyParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            gamma: 1.0,
        }
    }
}

impl TverskyParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let t = Self { alpha, beta, gamma };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.gamma.is_finite()
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && self.alpha + self.beta > 0.0
            && self.gamma > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "tversky params need alpha, beta >= 0, alpha + beta > 0, gamma > 0; got {self:?}"
            )))
        }
    }
}

/// Loss value and gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPair {
    pub value: f64,
    pub grad: TensorF,
}

/// Loss value over a batch and one gradient per image.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradPair {
    pub value: f64,
    pub grads: Vec<TensorF>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Sdl,
    Sjl,
    Jml1,
    Jml2,
    Dml1,
    Dml2,
    Stl,
    Ctl,
    Cftl,
    Ce,
    Compound,
}

impl LossKind {
    pub const ALL: [LossKind; 11] = [
        LossKind::Sdl,
        LossKind::Sjl,
        LossKind::Jml1,
        LossKind::Jml2,
        LossKind::Dml1,
        LossKind::Dml2,
        LossKind::Stl,
        LossKind::Ctl,
        LossKind::Cftl,
        LossKind::Ce,
        LossKind::Compound,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Sdl => "sdl",
            LossKind::Sjl => "sjl",
            LossKind::Jml1 => "jml1",
            LossKind::Jml2 => "jml2",
            LossKind::Dml1 => "dml1",
            LossKind::Dml2 => "dml2",
            LossKind::Stl => "stl",
            LossKind::Ctl => "ctl",
            LossKind::Cftl => "cftl",
            LossKind::Ce => "ce",
            LossKind::Compound => "compound",
        }
    }

    pub fn region(self) -> Option<Region> {
        Some(match self {
            LossKind::Sdl => Region::Sdl,
            LossKind::Sjl => Region::Sjl,
            LossKind::Jml1 => Region::Jml1,
            LossKind::Jml2 => Region::Jml2,
            LossKind::Dml1 => Region::Dml1,
            LossKind::Dml2 => Region::Dml2,
            LossKind::Stl => Region::Stl,
            LossKind::Ctl => Region::Ctl,
            LossKind::Cftl => Region::Cftl,
            LossKind::Ce | LossKind::Compound => return None,
        })
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownLoss(s.to_string()))
    }
}

/// A configured loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Loss {
    pub kind: LossKind,
    pub tversky: TverskyParams,
    /// Compound weights; ignored by the other kinds.
    pub ce_weight: f64,
    pub dml_weight: f64,
    /// Lets `stl` run on soft labels. Off by default because the loss is
    /// not minimized at the label there.
    pub allow_soft_stl: bool,
    /// Subgradient of `|t|` at `t == 0`. Only the mutation test sets this
    /// to anything but zero.
    #[serde(skip)]
    pub sign_at_zero: f64,
}

impl Default for Loss {
    fn default() -> Self {
        Self::new(LossKind::Compound)
    }
}

impl Loss {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            tversky: TverskyParams::default(),
            ce_weight: 0.25,
            dml_weight: 0.75,
            allow_soft_stl: false,
            sign_at_zero: 0.0,
        }
    }

    pub fn with_tversky(mut self, t: TverskyParams) -> Self {
        self.tversky = t;
        self
    }

    pub fn with_weights(mut self, ce_weight: f64, dml_weight: f64) -> Self {
        self.ce_weight = ce_weight;
        self.dml_weight = dml_weight;
        self
    }

    pub fn allowing_soft_stl(mut self) -> Self {
        self.allow_soft_stl = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.tversky.validate()?;
        if self.kind == LossKind::Compound
            && !(self.ce_weight >= 0.0 && self.dml_weight >= 0.0)
        {
            return Err(Error::InvalidParams(format!(
                "compound weights must be >= 0, got ({}, {})",
                self.ce_weight, self.dml_weight
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &ProbField, y: &LabelField, red: &ReductionSpec) -> Result<GradPair> {
        let out = self.evaluate_batch(std::slice::from_ref(x), std::slice::from_ref(y), red)?;
        Ok(GradPair {
            value: out.value,
            grad: out.grads.into_iter().next().expect("one image"),
        })
    }

    pub fn evaluate_batch(
        &self,
        xs: &[ProbField],
        ys: &[LabelField],
        red: &ReductionSpec,
    ) -> Result<BatchGradPair> {
        if xs.len() != ys.len() {
            return Err(Error::ShapeMismatch {
                left: vec![xs.len()],
                right: vec![ys.len()],
            });
        }
        if self.kind == LossKind::Stl && !self.allow_soft_stl && ys.iter().any(|y| !y.is_hard_valued()) {
            return Err(Error::SoftLabelIncompatible);
        }
        let xt: Vec<&TensorF> = xs.iter().map(ProbField::tensor).collect();
        let yt: Vec<&TensorF> = ys.iter().map(LabelField::tensor).collect();
        self.evaluate_tensors(&xt, &yt, red)
    }

    /// Evaluates on raw `[C, H, W]` tensors without range or simplex
    /// validation. Finite-difference probes use this to step off the
    /// simplex.
    pub fn evaluate_tensors(
        &self,
        xs: &[&TensorF],
        ys: &[&TensorF],
        red: &ReductionSpec,
    ) -> Result<BatchGradPair> {
        self.validate()?;
        red.validate()?;
        if xs.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for (x, y) in xs.iter().zip(ys) {
            if x.dims() != y.dims() || x.dims().len() != 3 {
                return Err(Error::ShapeMismatch {
                    left: x.dims().to_vec(),
                    right: y.dims().to_vec(),
                });
            }
        }
        let (value, grads) = match self.kind {
            LossKind::Ce => ce_batch(xs, ys, red),
            LossKind::Compound => {
                let (vc, gc) = ce_batch(xs, ys, red);
                let (vd, gd) = region_batch(Region::Dml1, self, xs, ys, red);
                let grads = gc
                    .into_iter()
                    .zip(gd)
                    .map(|(a, b)| {
                        a.iter()
                            .zip(&b)
                            .map(|(ga, gb)| self.ce_weight * ga + self.dml_weight * gb)
                            .collect()
                    })
                    .collect();
                (self.ce_weight * vc + self.dml_weight * vd, grads)
            }
            kind => region_batch(kind.region().expect("overlap loss"), self, xs, ys, red),
        };
        let grads = grads
            .into_iter()
            .zip(xs)
            .map(|(g, x)| TensorF::new(x.dims().to_vec(), g))
            .collect::<Result<Vec<_>>>()?;
        Ok(BatchGradPair { value, grads })
    }
}

fn region_batch(
    region: Region,
    loss: &Loss,
    xs: &[&TensorF],
    ys: &[&TensorF],
    red: &ReductionSpec,
) -> (f64, Vec<Vec<f64>>) {
    let mut grads: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.0; x.len()]).collect();
    let classes = xs[0].dims()[0];
    let pixels_of = |t: &TensorF| t.dims()[1] * t.dims()[2];

    match red.batch_mode {
        BatchMode::PerImageThenMean => {
            let inv_b = 1.0 / xs.len() as f64;
            let mut total = 0.0;
            for (b, (x, y)) in xs.iter().zip(ys).enumerate() {
                let n = pixels_of(x);
                let per_class: Vec<Option<overlap::Partials>> = (0..x.dims()[0])
                    .map(|c| {
                        let r = c * n..(c + 1) * n;
                        let stats = overlap::Stats::of(&x.data()[r.clone()], &y.data()[r]);
                        region.eval(&stats, &loss.tversky)
                    })
                    .collect();
                let (value, weights) = reduce_classes(&per_class, red);
                total += value;
                for (c, part) in per_class.iter().enumerate() {
                    if let Some(part) = part {
                        let w = weights * inv_b;
                        let (xd, yd) = (x.data(), y.data());
                        for i in c * n..(c + 1) * n {
                            grads[b][i] = w * part.grad(xd[i], yd[i], loss.sign_at_zero);
                        }
                    }
                }
            }
            (total * inv_b, grads)
        }
        BatchMode::Pooled => {
            let per_class: Vec<Option<overlap::Partials>> = (0..classes)
                .map(|c| {
                    let mut stats = overlap::Stats::default();
                    for (x, y) in xs.iter().zip(ys) {
                        let n = pixels_of(x);
                        let r = c * n..(c + 1) * n;
                        stats.accumulate(&x.data()[r.clone()], &y.data()[r]);
                    }
                    region.eval(&stats, &loss.tversky)
                })
                .collect();
            let (value, w) = reduce_classes(&per_class, red);
            for (b, (x, y)) in xs.iter().zip(ys).enumerate() {
                let n = pixels_of(x);
                for (c, part) in per_class.iter().enumerate() {
                    if let Some(part) = part {
                        for i in c * n..(c + 1) * n {
                            grads[b][i] = w * part.grad(x.data()[i], y.data()[i], loss.sign_at_zero);
                        }
                    }
                }
            }
            (value, grads)
        }
    }
}

/// Reduces per-class results to one value and returns the weight applied to
/// every present class.
fn reduce_classes(per_class: &[Option<overlap::Partials>], red: &ReductionSpec) -> (f64, f64) {
    let present = per_class.iter().filter(|p| p.is_some()).count();
    let present_sum: f64 = per_class.iter().flatten().map(|p| p.value).sum();
    match red.class_mode {
        ClassMode::MeanPresent => {
            if present == 0 {
                (red.empty_both_value, 0.0)
            } else {
                (present_sum / present as f64, 1.0 / present as f64)
            }
        }
        ClassMode::MeanAll => {
            let c = per_class.len() as f64;
            let absent = (per_class.len() - present) as f64;
            ((present_sum + absent * red.empty_both_value) / c, 1.0 / c)
        }
    }
}

fn ce_batch(xs: &[&TensorF], ys: &[&TensorF], red: &ReductionSpec) -> (f64, Vec<Vec<f64>>) {
    let mut grads: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.0; x.len()]).collect();
    let pixels: Vec<usize> = xs.iter().map(|x| x.dims()[1] * x.dims()[2]).collect();
    let total_pixels: usize = pixels.iter().sum();
    let mut total = 0.0;
    for (b, (x, y)) in xs.iter().zip(ys).enumerate() {
        let scale = match red.batch_mode {
            BatchMode::PerImageThenMean => 1.0 / (xs.len() * pixels[b]) as f64,
            BatchMode::Pooled => 1.0 / total_pixels as f64,
        };
        let sum = ce::image_sum(x.data(), y.data(), x.dims()[0], scale, &mut grads[b]);
        total += sum * scale;
    }
    (total, grads)
}

pub fn sdl(x: &ProbField, y: &LabelField, red: &ReductionSpec) -> Result<GradPair> {
    Loss::new(LossKind::Sdl).evaluate(x, y, red)
}

pub fn sjl(x: &ProbField, y: &LabelField, red: &ReductionSpec) -> Result<GradPair> {
    Loss::new(LossKind::Sjl).evaluate(x, y, red)
}

pub fn jml1(x: &ProbField, y: &LabelField, red: &ReductionSpec) -> Result<GradPair> {
    Loss::new(LossKind::Jml1).evaluate(x, y, red)
}

pub fn jml2(x: &ProbField, y: &LabelField, red: &ReductionSpec) -> Result<GradPair> {
    Loss::new(LossKind::Jml2).evaluate(x, y, red)
}

pub fn dml1(x: &ProbField, y: &LabelField, red: &ReductionSpec) -> Result<GradPair> {
    Loss::new(LossKind::Dml1).evaluate(x, y, red)
}

pub fn dml2(x: &ProbField, y: &LabelField, red: &ReductionSpec) -> Result<GradPair> {
    Loss::new(LossKind::Dml2).evaluate(x, y, red)
}

/// Soft Tversky loss. Fails with [`Error::SoftLabelIncompatible`] on soft
/// labels unless `allow_soft` is set.
pub fn stl(
    x: &ProbField,
    y: &LabelField,
    params: TverskyParams,
    red: &ReductionSpec,
    allow_soft: bool,
) -> Result<GradPair> {
    let mut loss = Loss::new(LossKind::Stl).with_tversky(params);
    loss.allow_soft_stl = allow_soft;
    loss.evaluate(x, y, red)
}

pub fn ctl(x: &ProbField, y: &LabelField, params: TverskyParams, red: &ReductionSpec) -> Result<GradPair> {
    Loss::new(LossKind::Ctl).with_tversky(params).evaluate(x, y, red)
}

pub fn cftl(x: &ProbField, y: &LabelField, params: TverskyParams, red: &ReductionSpec) -> Result<GradPair> {
    Loss::new(LossKind::Cftl).with_tversky(params).evaluate(x, y, red)
}

pub fn ce(x: &ProbField, y: &LabelField, red: &ReductionSpec) -> Result<GradPair> {
    Loss::new(LossKind::Ce).evaluate(x, y, red)
}

/// `w_ce · ce + w_dml · dml1`.
pub fn compound(
    x: &ProbField,
    y: &LabelField,
    red: &ReductionSpec,
    w_ce: f64,
    w_dml: f64,
) -> Result<GradPair> {
    Loss::new(LossKind::Compound)
        .with_weights(w_ce, w_dml)
        .evaluate(x, y, red)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Hardness;
    use approx::assert_abs_diff_eq;

    fn p(data: &[f64], c: usize) -> ProbField {
        ProbField::from_vec(c, 1, data.len() / c, data.to_vec()).unwrap()
    }

    fn l(data: &[f64], c: usize) -> LabelField {
        LabelField::infer(TensorF::new(vec![c, 1, data.len() / c], data.to_vec()).unwrap()).unwrap()
    }

    fn red() -> ReductionSpec {
        ReductionSpec::default()
    }

    #[test]
    fn parse_identifiers() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        assert!(matches!("dice".parse::<LossKind>(), Err(Error::UnknownLoss(_))));
    }

    #[test]
    fn field_level_hand_values() {
        let x = p(&[0.8, 0.2], 1);
        let y = l(&[1.0, 0.0], 1);
        assert_abs_diff_eq!(sdl(&x, &y, &red()).unwrap().value, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(sjl(&x, &y, &red()).unwrap().value, 1.0 / 3.0, epsilon = 1e-15);
        let t = TverskyParams::new(0.7, 0.3, 1.0).unwrap();
        assert_abs_diff_eq!(stl(&x, &y, t, &red(), false).unwrap().value, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn stl_guards_soft_labels() {
        let x = p(&[0.5], 1);
        let y = l(&[0.5], 1);
        let t = TverskyParams::default();
        assert!(matches!(
            stl(&x, &y, t, &red(), false),
            Err(Error::SoftLabelIncompatible)
        ));
        assert!(stl(&x, &y, t, &red(), true).is_ok());
    }

    #[test]
    fn ce_hand_values() {
        let x = p(&[0.5, 0.5], 2);
        let y = l(&[1.0, 0.0], 2);
        assert_abs_diff_eq!(ce(&x, &y, &red()).unwrap().value, 2f64.ln(), epsilon = 1e-15);

        let x = p(&[1.0, 0.0], 2);
        let v = ce(&x, &y, &red()).unwrap().value;
        assert_abs_diff_eq!(v, -(1.0 - ce::CE_CLAMP).ln(), epsilon = 1e-15);
        assert!(v < 1e-6);
    }

    #[test]
    fn ce_soft_minimizer_is_the_label() {
        let y = l(&[0.5, 0.5], 2);
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..1000 {
            let q = i as f64 / 1000.0;
            let v = ce(&p(&[q, 1.0 - q], 2), &y, &red()).unwrap().value;
            if v < best.0 {
                best = (v, q);
            }
        }
        assert_abs_diff_eq!(best.1, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn compound_hand_values() {
        let x = p(&[0.5], 1);
        let y = l(&[1.0], 1);
        let v = compound(&x, &y, &red(), 0.25, 0.75).unwrap().value;
        assert_abs_diff_eq!(v, 0.25 * -(0.5f64.ln()) + 0.75 * (0.5 / 1.5), epsilon = 1e-15);

        let x = p(&[0.3, 0.9, 0.7, 0.1], 2);
        let y = l(&[0.0, 1.0, 1.0, 0.0], 2);
        let a = compound(&x, &y, &red(), 1.0, 0.0).unwrap();
        let b = ce(&x, &y, &red()).unwrap();
        assert_eq!(a, b);

        let hard = p(&[1.0, 0.0], 1);
        let yh = l(&[1.0, 0.0], 1);
        assert!(compound(&hard, &yh, &red(), 0.25, 0.75).unwrap().value < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let x = p(&[0.5, 0.5], 1);
        let y = l(&[1.0], 1);
        assert!(matches!(dml1(&x, &y, &red()), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn mean_present_skips_absent_class() {
        // class 0 empty in both maps, class 1 perfect
        let x = p(&[0.0, 0.0, 1.0, 1.0], 2);
        let y = LabelField::from_vec(2, 1, 2, vec![0.0, 0.0, 1.0, 1.0], Hardness::Hard).unwrap();
        assert_eq!(dml1(&x, &y, &red()).unwrap().value, 0.0);
        let all = ReductionSpec {
            class_mode: ClassMode::MeanAll,
            empty_both_value: 1.0,
            ..red()
        };
        assert_abs_diff_eq!(dml1(&x, &y, &all).unwrap().value, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn pooled_equals_single_concatenated_image() {
        let xa = p(&[0.2, 0.9], 1);
        let xb = p(&[0.6, 0.1, 0.4], 1);
        let ya = l(&[0.0, 1.0], 1);
        let yb = l(&[1.0, 0.0, 0.5], 1);
        let pooled = ReductionSpec {
            batch_mode: BatchMode::Pooled,
            ..red()
        };
        let loss = Loss::new(LossKind::Dml2);
        let batch = loss
            .evaluate_batch(&[xa, xb], &[ya, yb], &pooled)
            .unwrap();
        let whole = loss
            .evaluate(
                &p(&[0.2, 0.9, 0.6, 0.1, 0.4], 1),
                &l(&[0.0, 1.0, 1.0, 0.0, 0.5], 1),
                &red(),
            )
            .unwrap();
        assert_abs_diff_eq!(batch.value, whole.value, epsilon = 1e-15);
        let flat: Vec<f64> = batch.grads.iter().flat_map(|g| g.data().to_vec()).collect();
        for (a, b) in flat.iter().zip(whole.grad.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn per_image_mean_averages_images() {
        let xa = p(&[0.2, 0.9], 1);
        let xb = p(&[0.6, 0.1], 1);
        let ya = l(&[0.0, 1.0], 1);
        let yb = l(&[1.0, 0.0], 1);
        let loss = Loss::new(LossKind::Dml1);
        let batch = loss
            .evaluate_batch(&[xa.clone(), xb.clone()], &[ya.clone(), yb.clone()], &red())
            .unwrap();
        let a = loss.evaluate(&xa, &ya, &red()).unwrap();
        let b = loss.evaluate(&xb, &yb, &red()).unwrap();
        assert_abs_diff_eq!(batch.value, 0.5 * (a.value + b.value), epsilon = 1e-15);
        assert_abs_diff_eq!(batch.grads[1].data()[0], 0.5 * b.grad.data()[0], epsilon = 1e-15);
    }

    #[test]
    fn reduction_json_keys() {
        let r: ReductionSpec = serde_json::from_str(
            r#"{"class_mode":"mean_all","batch_mode":"pooled","empty_both_value":1.0}"#,
        )
        .unwrap();
        assert_eq!(r.class_mode, ClassMode::MeanAll);
        assert_eq!(r.batch_mode, BatchMode::Pooled);
        assert!(serde_json::from_str::<ReductionSpec>(r#"{"bogus":1}"#).is_err());
        let t: TverskyParams = serde_json::from_str(r#"{"alpha":0.7,"beta":0.3}"#).unwrap();
        assert_eq!(t.gamma, 1.0);
    }
}
