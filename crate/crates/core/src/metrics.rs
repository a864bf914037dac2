//! Evaluation metrics: set-based Dice, IoU/Dice conversion, binarized
//! Dice (BDice) averaged over thresholds, and binned expected calibration
//! error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, ReductionSpec};
use crate::tensor::{LabelField, ProbField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BDiceSpec {
    pub thresholds: Vec<f64>,
    /// Dice at a level where neither map has foreground.
    pub empty_both_dice: f64,
}

impl Default for BDiceSpec {
    fn default() -> Self {
        Self {
            thresholds: (1..10).map(|i| f64::from(i) / 10.0).collect(),
            empty_both_dice: 1.0,
        }
    }
}

impl BDiceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidParams("no BDice thresholds".into()));
        }
        let inside = self.thresholds.iter().all(|&t| t > 0.0 && t < 1.0);
        let increasing = self.thresholds.windows(2).all(|w| w[0] < w[1]);
        if !(inside && increasing) {
            return Err(Error::InvalidParams(format!(
                "thresholds must be strictly increasing in (0, 1): {:?}",
                self.thresholds
            )));
        }
        Ok(())
    }
}

/// Dice from intersection and set sizes; `empty` when both sets are empty.
pub fn dice_from_counts(intersection: usize, size_a: usize, size_b: usize, empty: f64) -> f64 {
    if size_a + size_b == 0 {
        empty
    } else {
        2.0 * intersection as f64 / (size_a + size_b) as f64
    }
}

fn check_hard(field: &LabelField) -> Result<()> {
    match field
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| v != 0.0 && v != 1.0)
    {
        Some((index, &value)) => Err(Error::SoftInput { index, value }),
        None => Ok(()),
    }
}

fn check_dims(a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            left: a.to_vec(),
            right: b.to_vec(),
        })
    }
}

/// Set-based Dice of channel `class` of two hard masks, by integer counting.
/// Both-empty gives 1.
pub fn hard_dice(a: &LabelField, b: &LabelField, class: usize) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    check_hard(a)?;
    check_hard(b)?;
    if class >= a.classes() {
        return Err(Error::InvalidParams(format!(
            "class {class} out of range for {} channels",
            a.classes()
        )));
    }
    let (ca, cb) = (a.channel(class), b.channel(class));
    Ok(mask_dice(
        ca.iter().map(|&v| v == 1.0),
        cb.iter().map(|&v| v == 1.0),
        1.0,
    ))
}

/// Dice of two boolean masks given as iterators.
pub fn mask_dice(
    a: impl Iterator<Item = bool>,
    b: impl Iterator<Item = bool>,
    empty: f64,
) -> f64 {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (x, y) in a.zip(b) {
        na += usize::from(x);
        nb += usize::from(y);
        inter += usize::from(x && y);
    }
    dice_from_counts(inter, na, nb, empty)
}

/// Mean hard Dice over the foreground channels: channel 0 for binary
/// fields, channels `1..C` otherwise.
pub fn foreground_dice(a: &LabelField, b: &LabelField) -> Result<f64> {
    let channels = foreground_channels(a.classes());
    let mut total = 0.0;
    for &c in &channels {
        total += hard_dice(a, b, c)?;
    }
    Ok(total / channels.len() as f64)
}

pub(crate) fn foreground_channels(classes: usize) -> Vec<usize> {
    if classes == 1 {
        vec![0]
    } else {
        (1..classes).collect()
    }
}

pub fn dice_from_iou(iou: f64) -> Result<f64> {
    unit(iou)?;
    Ok(2.0 * iou / (1.0 + iou))
}

pub fn iou_from_dice(dice: f64) -> Result<f64> {
    unit(dice)?;
    Ok(dice / (2.0 - dice))
}

fn unit(v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfRange { index: 0, value: v })
    }
}

/// Binarized Dice of one channel: both maps are thresholded with `> t` at
/// every level and the per-level Dice scores are averaged.
pub fn bdice_channel(x: &[f64], y: &[f64], spec: &BDiceSpec) -> Result<f64> {
    spec.validate()?;
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            left: vec![x.len()],
            right: vec![y.len()],
        });
    }
    let total: f64 = spec
        .thresholds
        .iter()
        .map(|&t| {
            mask_dice(
                x.iter().map(|&v| v > t),
                y.iter().map(|&v| v > t),
                spec.empty_both_dice,
            )
        })
        .sum();
    Ok(total / spec.thresholds.len() as f64)
}

/// BDice per foreground channel, averaged.
pub fn bdice(x: &ProbField, y: &LabelField, spec: &BDiceSpec) -> Result<f64> {
    let per = bdice_per_class(x, y, spec)?;
    let channels = foreground_channels(x.classes());
    Ok(channels.iter().map(|&c| per[c]).sum::<f64>() / channels.len() as f64)
}

pub fn bdice_per_class(x: &ProbField, y: &LabelField, spec: &BDiceSpec) -> Result<Vec<f64>> {
    check_dims(x.dims(), y.dims())?;
    (0..x.classes())
        .map(|c| bdice_channel(x.channel(c), y.channel(c), spec))
        .collect()
}

/// `1 - sdl` against a hard label.
pub fn soft_dice_score(x: &ProbField, y: &LabelField, red: &ReductionSpec) -> Result<f64> {
    check_hard(y)?;
    Ok(1.0 - losses::sdl(x, y, red)?.value)
}

/// Dice of the prediction binarized at `> 0.5` (argmax for multiclass)
/// against a hard label, averaged over foreground channels.
pub fn thresholded_dice(x: &ProbField, y: &LabelField) -> Result<f64> {
    check_dims(x.dims(), y.dims())?;
    check_hard(y)?;
    let pred = x.class_map();
    let truth = y.class_map();
    let classes = x.classes();
    let channels = foreground_channels(classes);
    let fg = |m: usize, c: usize| if classes == 1 { m == 1 } else { m == c };
    let total: f64 = channels
        .iter()
        .map(|&c| {
            mask_dice(
                pred.iter().map(|&m| fg(m, c)),
                truth.iter().map(|&m| fg(m, c)),
                1.0,
            )
        })
        .sum();
    Ok(total / channels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    #[default]
    EqualWidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EceScope {
    #[default]
    ForegroundProb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EceSpec {
    pub n_bins: usize,
    pub binning: Binning,
    pub scope: EceScope,
}

impl Default for EceSpec {
    fn default() -> Self {
        Self {
            n_bins: 15,
            binning: Binning::EqualWidth,
            scope: EceScope::ForegroundProb,
        }
    }
}

/// Bin counts for ECE. Accumulators built on disjoint shards merge exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EceAccumulator {
    counts: Vec<u64>,
    conf_sum: Vec<f64>,
    label_sum: Vec<f64>,
}

impl EceAccumulator {
    pub fn new(spec: &EceSpec) -> Result<Self> {
        if spec.n_bins == 0 {
            return Err(Error::InvalidParams("n_bins must be positive".into()));
        }
        Ok(Self {
            counts: vec![0; spec.n_bins],
            conf_sum: vec![0.0; spec.n_bins],
            label_sum: vec![0.0; spec.n_bins],
        })
    }

    fn bin(&self, conf: f64) -> usize {
        let n = self.counts.len();
        ((conf * n as f64) as usize).min(n - 1)
    }

    /// Adds one (confidence, label) record. Labels must be 0 or 1.
    pub fn push(&mut self, conf: f64, label: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&conf) {
            return Err(Error::OutOfRange { index: 0, value: conf });
        }
        if label != 0.0 && label != 1.0 {
            return Err(Error::SoftInput { index: 0, value: label });
        }
        let b = self.bin(conf);
        self.counts[b] += 1;
        self.conf_sum[b] += conf;
        self.label_sum[b] += label;
        Ok(())
    }

    pub fn extend(&mut self, conf: &[f64], labels: &[f64]) -> Result<()> {
        if conf.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                left: vec![conf.len()],
                right: vec![labels.len()],
            });
        }
        for (&c, &l) in conf.iter().zip(labels) {
            self.push(c, l)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EceAccumulator) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(Error::InvalidParams("bin counts differ".into()));
        }
        for b in 0..self.counts.len() {
            self.counts[b] += other.counts[b];
            self.conf_sum[b] += other.conf_sum[b];
            self.label_sum[b] += other.label_sum[b];
        }
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Result<f64> {
        let n = self.len();
        if n == 0 {
            return Err(Error::EmptyRecords);
        }
        let mut ece = 0.0;
        for b in 0..self.counts.len() {
            let nb = self.counts[b];
            if nb == 0 {
                continue;
            }
            let nbf = nb as f64;
            let gap = (self.label_sum[b] / nbf - self.conf_sum[b] / nbf).abs();
            ece += nbf / n as f64 * gap;
        }
        Ok(ece)
    }
}

/// Flattened (confidence, label) pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibRecord {
    pub confidences: Vec<f64>,
    pub labels: Vec<f64>,
}

impl CalibRecord {
    /// Foreground probability against a hard label's foreground.
    pub fn from_fields(x: &ProbField, y: &LabelField) -> Result<Self> {
        check_dims(x.dims(), y.dims())?;
        check_hard(y)?;
        Ok(Self {
            confidences: x.foreground().to_vec(),
            labels: y.foreground().to_vec(),
        })
    }
}

pub fn ece(records: &CalibRecord, spec: &EceSpec) -> Result<f64> {
    let mut acc = EceAccumulator::new(spec)?;
    acc.extend(&records.confidences, &records.labels)?;
    acc.value()
}
