//! Value types shared by every module: a dense f64 tensor and the
//! validated probability and label fields built on top of it.
//!
//! Fields use a row-major `[C, H, W]` layout, so the values of class `c`
//! form the contiguous slice `data[c * H * W..(c + 1) * H * W]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum deviation of a per-pixel class sum from 1.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Dense row-major tensor of finite f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorF {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl TensorF {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::BadDims(dims));
        }
        let expected = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::DimOverflow)?;
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                dims,
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![value; n])
    }

    pub fn zeros_like(other: &TensorF) -> Self {
        Self {
            dims: other.dims.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Applies `f` to every element; the result must stay finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.dims.clone(), self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Interprets `dims` as `[C, H, W]` and returns `(C, H * W)`.
fn chw(dims: &[usize]) -> Result<(usize, usize)> {
    match dims {
        [c, h, w] => Ok((*c, h * w)),
        _ => Err(Error::BadDims(dims.to_vec())),
    }
}

fn check_range(t: &TensorF) -> Result<()> {
    for (index, &value) in t.data.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange { index, value });
        }
    }
    Ok(())
}

fn check_simplex(t: &TensorF) -> Result<()> {
    let (classes, pixels) = chw(&t.dims)?;
    if classes < 2 {
        return Ok(());
    }
    for pixel in 0..pixels {
        let sum: f64 = (0..classes).map(|c| t.data[c * pixels + pixel]).sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::SimplexViolation { pixel, sum });
        }
    }
    Ok(())
}

/// Checks the probability-field invariants: `[C, H, W]` dims, values in
/// `[0, 1]`, and per-pixel class sums of 1 when `C >= 2`.
pub fn validate_prob(t: &TensorF) -> Result<()> {
    chw(&t.dims)?;
    check_range(t)?;
    check_simplex(t)
}

/// Checks the label-field invariants; hard labels must be exactly 0 or 1.
pub fn validate_label(t: &TensorF, hardness: Hardness) -> Result<()> {
    chw(&t.dims)?;
    check_range(t)?;
    if hardness == Hardness::Hard {
        if let Some((index, &value)) = t
            .data
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 0.0 && v != 1.0)
        {
            return Err(Error::HardnessViolation { index, value });
        }
    }
    check_simplex(t)
}

/// Per-pixel class probabilities, `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    tensor: TensorF,
}

impl ProbField {
    pub fn new(tensor: TensorF) -> Result<Self> {
        validate_prob(&tensor)?;
        Ok(Self { tensor })
    }

    pub fn from_vec(classes: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(TensorF::new(vec![classes, height, width], data)?)
    }

    pub fn tensor(&self) -> &TensorF {
        &self.tensor
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn dims(&self) -> &[usize] {
        self.tensor.dims()
    }

    pub fn classes(&self) -> usize {
        self.tensor.dims[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.dims[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims[2]
    }

    pub fn pixels(&self) -> usize {
        self.tensor.dims[1] * self.tensor.dims[2]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.tensor.data[c * n..(c + 1) * n]
    }

    /// Probability of the foreground: channel 0 for binary fields, class 1
    /// otherwise.
    pub fn foreground(&self) -> &[f64] {
        self.channel(usize::from(self.classes() > 1))
    }

    /// Probability vector of one pixel.
    pub fn row(&self, pixel: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.classes())
            .map(|c| self.tensor.data[c * n + pixel])
            .collect()
    }

    pub fn into_tensor(self) -> TensorF {
        self.tensor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hardness {
    Hard,
    Soft,
}

/// Per-pixel targets, `[C, H, W]`, either hard (0/1) or soft.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField {
    tensor: TensorF,
    hardness: Hardness,
}

impl LabelField {
    pub fn new(tensor: TensorF, hardness: Hardness) -> Result<Self> {
        validate_label(&tensor, hardness)?;
        Ok(Self { tensor, hardness })
    }

    pub fn hard(tensor: TensorF) -> Result<Self> {
        Self::new(tensor, Hardness::Hard)
    }

    pub fn soft(tensor: TensorF) -> Result<Self> {
        Self::new(tensor, Hardness::Soft)
    }

    /// Builds a field and marks it hard when every value is 0 or 1.
    pub fn infer(tensor: TensorF) -> Result<Self> {
        let hardness = if tensor.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            Hardness::Hard
        } else {
            Hardness::Soft
        };
        Self::new(tensor, hardness)
    }

    pub fn from_vec(
        classes: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        hardness: Hardness,
    ) -> Result<Self> {
        Self::new(TensorF::new(vec![classes, height, width], data)?, hardness)
    }

    pub fn tensor(&self) -> &TensorF {
        &self.tensor
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn dims(&self) -> &[usize] {
        self.tensor.dims()
    }

    pub fn hardness(&self) -> Hardness {
        self.hardness
    }

    /// True when every value is exactly 0 or 1, whatever the flag says.
    pub fn is_hard_valued(&self) -> bool {
        self.hardness == Hardness::Hard || self.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn classes(&self) -> usize {
        self.tensor.dims[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.dims[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims[2]
    }

    pub fn pixels(&self) -> usize {
        self.tensor.dims[1] * self.tensor.dims[2]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.tensor.data[c * n..(c + 1) * n]
    }

    pub fn foreground(&self) -> &[f64] {
        self.channel(usize::from(self.classes() > 1))
    }

    pub fn row(&self, pixel: usize) -> Vec<f64> {
        let n = self.pixels();
        (0..self.classes())
            .map(|c| self.tensor.data[c * n + pixel])
            .collect()
    }

    /// Class index of every pixel. Binary fields map to {0 = background,
    /// 1 = foreground} by thresholding at 0.5; multiclass fields take the
    /// argmax (lowest index on ties).
    pub fn class_map(&self) -> Vec<usize> {
        class_map(self.tensor.data(), self.classes(), self.pixels())
    }

    pub fn into_tensor(self) -> TensorF {
        self.tensor
    }

    /// Reinterprets a hard label as a probability field.
    pub fn to_prob(&self) -> Result<ProbField> {
        ProbField::new(self.tensor.clone())
    }
}

pub(crate) fn class_map(data: &[f64], classes: usize, pixels: usize) -> Vec<usize> {
    if classes == 1 {
        return data[..pixels].iter().map(|&v| usize::from(v > 0.5)).collect();
    }
    (0..pixels)
        .map(|p| {
            let mut best = 0;
            for c in 1..classes {
                if data[c * pixels + p] > data[best * pixels + p] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

impl ProbField {
    /// Predicted class per pixel, same convention as [`LabelField::class_map`].
    pub fn class_map(&self) -> Vec<usize> {
        class_map(self.tensor.data(), self.classes(), self.pixels())
    }
}

/// K hard annotations of the same image.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterStack {
    raters: Vec<LabelField>,
}

impl RaterStack {
    pub fn new(raters: Vec<LabelField>) -> Result<Self> {
        let first = raters.first().ok_or(Error::EmptyStack)?;
        for r in &raters {
            if r.dims() != first.dims() {
                return Err(Error::ShapeMismatch {
                    left: first.dims().to_vec(),
                    right: r.dims().to_vec(),
                });
            }
            if r.hardness() != Hardness::Hard {
                return Err(Error::InvalidParams("rater annotations must be hard".into()));
            }
        }
        Ok(Self { raters })
    }

    pub fn raters(&self) -> &[LabelField] {
        &self.raters
    }

    pub fn len(&self) -> usize {
        self.raters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raters.is_empty()
    }

    pub fn dims(&self) -> &[usize] {
        self.raters[0].dims()
    }
}
