//! Training targets from multi-rater annotations: majority vote, a random
//! rater, uniform and Dice-weighted averages, and label smoothing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, foreground_channels};
use crate::rng::derive_seed;
use crate::tensor::{Hardness, LabelField, RaterStack, TensorF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Majority,
    RandomRater,
    UniformAvg,
    WeightedAvg,
    LabelSmoothing,
}

/// Resolution of tied votes. For binary fields both rules pick background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Lowest class index among the tied classes.
    LowestClass,
    /// Class 0 whenever the vote is tied.
    #[default]
    Background,
}

/// Where rater weights for `weighted_avg` are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScope {
    #[default]
    PerImage,
    PerDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoftLabelSpec {
    pub strategy: Strategy,
    /// Smoothing strength; only read by `label_smoothing`.
    pub epsilon: f64,
    /// Only read by `random_rater`.
    pub seed: u64,
    pub tie_break: TieBreak,
    pub weights: WeightScope,
}

impl Default for SoftLabelSpec {
    fn default() -> Self {
        Self {
            strategy: Strategy::Majority,
            epsilon: 0.1,
            seed: 42,
            tie_break: TieBreak::Background,
            weights: WeightScope::PerImage,
        }
    }
}

impl SoftLabelSpec {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }
}

pub fn majority_vote(stack: &RaterStack, tie_break: TieBreak) -> Result<LabelField> {
    let dims = stack.dims().to_vec();
    let (classes, pixels) = (dims[0], dims[1] * dims[2]);
    let k = stack.len();
    let mut out = vec![0.0; classes * pixels];
    if classes == 1 {
        for (p, o) in out.iter_mut().enumerate() {
            let votes = stack.raters().iter().filter(|r| r.data()[p] == 1.0).count();
            // ties (2 * votes == k) fall to background under both rules
            if 2 * votes > k {
                *o = 1.0;
            }
        }
    } else {
        let mut counts = vec![0usize; classes];
        for p in 0..pixels {
            counts.iter_mut().for_each(|c| *c = 0);
            for r in stack.raters() {
                for (c, count) in counts.iter_mut().enumerate() {
                    if r.data()[c * pixels + p] == 1.0 {
                        *count += 1;
                    }
                }
            }
            let top = *counts.iter().max().expect("classes >= 2");
            let tied = counts.iter().filter(|&&c| c == top).count();
            let winner = if tied > 1 && tie_break == TieBreak::Background {
                0
            } else {
                counts.iter().position(|&c| c == top).expect("max exists")
            };
            out[winner * pixels + p] = 1.0;
        }
    }
    LabelField::new(TensorF::new(dims, out)?, Hardness::Hard)
}

/// One whole rater chosen by `⌊U · K⌋` with `U` drawn from `seed`.
pub fn random_rater(stack: &RaterStack, seed: u64) -> Result<LabelField> {
    Ok(stack.raters()[random_rater_index(stack.len(), seed)].clone())
}

pub fn random_rater_index(k: usize, seed: u64) -> usize {
    let u: f64 = ChaCha8Rng::seed_from_u64(seed).random();
    ((u * k as f64) as usize).min(k - 1)
}

fn weighted_sum(stack: &RaterStack, weights: &[f64]) -> Result<LabelField> {
    let dims = stack.dims().to_vec();
    let n: usize = dims.iter().product();
    let mut out = vec![0.0; n];
    for (r, &w) in stack.raters().iter().zip(weights) {
        for (o, &v) in out.iter_mut().zip(r.data()) {
            *o += w * v;
        }
    }
    for o in &mut out {
        *o = o.clamp(0.0, 1.0);
    }
    LabelField::new(TensorF::new(dims, out)?, Hardness::Soft)
}

pub fn uniform_average(stack: &RaterStack) -> Result<LabelField> {
    let k = stack.len() as f64;
    let dims = stack.dims().to_vec();
    let n: usize = dims.iter().product();
    let mut counts = vec![0.0; n];
    for r in stack.raters() {
        for (c, &v) in counts.iter_mut().zip(r.data()) {
            *c += v;
        }
    }
    LabelField::new(
        TensorF::new(dims, counts.into_iter().map(|c| c / k).collect())?,
        Hardness::Soft,
    )
}

/// Dice of each rater against the stack's majority vote.
pub fn rater_weights(stack: &RaterStack, tie_break: TieBreak) -> Result<Vec<f64>> {
    let majority = majority_vote(stack, tie_break)?;
    stack
        .raters()
        .iter()
        .map(|r| metrics::foreground_dice(r, &majority))
        .collect()
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    } else {
        log::warn!("all rater weights are zero, falling back to uniform weights");
        let k = w.len() as f64;
        w.iter_mut().for_each(|v| *v = 1.0 / k);
    }
    w
}

/// Raters weighted by their Dice against the majority vote of this image,
/// weights normalized to sum to 1. Falls back to uniform weights (with a
/// warning) when every rater scores 0.
pub fn weighted_average(stack: &RaterStack, tie_break: TieBreak) -> Result<LabelField> {
    let w = normalize(rater_weights(stack, tie_break)?);
    weighted_sum(stack, &w)
}

/// Like [`weighted_average`] but with one weight per rater estimated from
/// intersection and size counts pooled over all images.
pub fn weighted_average_dataset(stacks: &[RaterStack], tie_break: TieBreak) -> Result<Vec<LabelField>> {
    let first = stacks.first().ok_or(Error::EmptyStack)?;
    let k = first.len();
    let channels = foreground_channels(first.dims()[0]);
    // [rater][channel] -> (intersection, rater size, majority size)
    let mut counts = vec![vec![(0usize, 0usize, 0usize); channels.len()]; k];
    for stack in stacks {
        if stack.len() != k {
            return Err(Error::InvalidParams(format!(
                "rater counts differ across images: {k} vs {}",
                stack.len()
            )));
        }
        let majority = majority_vote(stack, tie_break)?;
        for (r, rater) in stack.raters().iter().enumerate() {
            for (slot, &c) in channels.iter().enumerate() {
                let (a, m) = (rater.channel(c), majority.channel(c));
                let entry = &mut counts[r][slot];
                for (&av, &mv) in a.iter().zip(m) {
                    entry.0 += usize::from(av == 1.0 && mv == 1.0);
                    entry.1 += usize::from(av == 1.0);
                    entry.2 += usize::from(mv == 1.0);
                }
            }
        }
    }
    let weights = normalize(
        counts
            .iter()
            .map(|per| {
                per.iter()
                    .map(|&(i, a, b)| metrics::dice_from_counts(i, a, b, 1.0))
                    .sum::<f64>()
                    / per.len() as f64
            })
            .collect(),
    );
    stacks.iter().map(|s| weighted_sum(s, &weights)).collect()
}

/// `(1 - ε) y + ε / C`, with `C = 2` for binary fields.
pub fn label_smoothing(y: &LabelField, epsilon: f64) -> Result<LabelField> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::BadEpsilon(epsilon));
    }
    let classes = y.classes().max(2) as f64;
    let out = y.tensor().map(|v| (1.0 - epsilon) * v + epsilon / classes)?;
    LabelField::new(out, Hardness::Soft)
}

/// Target for one image. `index` decorrelates the random rater choice
/// across images. Per-dataset weights need [`make_targets`].
pub fn make_target(spec: &SoftLabelSpec, stack: &RaterStack, index: usize) -> Result<LabelField> {
    match spec.strategy {
        Strategy::Majority => majority_vote(stack, spec.tie_break),
        Strategy::RandomRater => random_rater(stack, derive_seed(spec.seed, index as u64)),
        Strategy::UniformAvg => uniform_average(stack),
        Strategy::WeightedAvg => weighted_average(stack, spec.tie_break),
        Strategy::LabelSmoothing => label_smoothing(&majority_vote(stack, spec.tie_break)?, spec.epsilon),
    }
}

/// Targets for a whole dataset.
pub fn make_targets(spec: &SoftLabelSpec, stacks: &[RaterStack]) -> Result<Vec<LabelField>> {
    if spec.strategy == Strategy::WeightedAvg && spec.weights == WeightScope::PerDataset {
        return weighted_average_dataset(stacks, spec.tie_break);
    }
    stacks
        .iter()
        .enumerate()
        .map(|(i, s)| make_target(spec, s, i))
        .collect()
}
