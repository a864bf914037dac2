//! Seeded k-fold cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Model, ModelSpec};
use super::synth::Dataset;
use super::trainer::{train, EvalParts, TrainSpec};
use crate::error::{Error, Result};
use crate::softlabels::TieBreak;

/// Shuffles `0..n` with `seed` and deals it into `k` folds whose sizes
/// differ by at most one. Each fold is sorted.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::TooFewImages { images: n, folds: k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds: Vec<Vec<usize>> = (0..k).map(|f| idx[f * n / k..(f + 1) * n / k].to_vec()).collect();
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub index: usize,
    pub fold: usize,
    pub dice: f64,
    pub bdice: f64,
}

/// Metrics over the union of all validation folds: per-image means for
/// Dice and BDice, pooled ECE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub dice: f64,
    pub soft_dice: f64,
    pub bdice: f64,
    pub ece: f64,
    pub per_image: Vec<ImageScore>,
}

/// Runs `fit(fold, train, val)` for every fold and scores the returned
/// model on that fold's validation images.
pub fn crossval_with<F>(dataset: &Dataset, k: usize, seed: u64, tie_break: TieBreak, mut fit: F) -> Result<CrossvalReport>
where
    F: FnMut(usize, &[usize], &[usize]) -> Result<Model>,
{
    let folds = fold_assignment(dataset.len(), k, seed)?;
    let mut all = EvalParts::new()?;
    let mut per_image = Vec::with_capacity(dataset.len());
    for (f, val) in folds.iter().enumerate() {
        let train_idx: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let model = fit(f, &train_idx, val)?;
        let mut parts = EvalParts::new()?;
        for &i in val {
            parts.push(&model.forward(&dataset.images[i])?, &dataset.raters[i], tie_break)?;
        }
        for (j, &i) in val.iter().enumerate() {
            per_image.push(ImageScore {
                index: i,
                fold: f,
                dice: parts.dice[j],
                bdice: parts.bdice[j],
            });
        }
        all.merge(&parts)?;
    }
    per_image.sort_by_key(|s| s.index);
    let m = all.finish()?;
    Ok(CrossvalReport {
        dice: m.dice,
        soft_dice: m.soft_dice,
        bdice: m.bdice,
        ece: m.ece,
        per_image,
    })
}

/// Plain cross-validated training. Folds are drawn from `train_spec.seed`.
pub fn crossval(dataset: &Dataset, k: usize, model_spec: &ModelSpec, train_spec: &TrainSpec) -> Result<CrossvalReport> {
    crossval_with(
        dataset,
        k,
        train_spec.seed,
        train_spec.label_source.tie_break,
        |_, tr, _| Ok(train(dataset, tr, &[], model_spec, train_spec)?.model),
    )
}
