//! Mini-batch training and distillation loops.

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::Features;
use super::model::{Model, ModelSpec};
use super::optim::Sgd;
use super::synth::Dataset;
use crate::calibration::{sample_key_points, select_scope_pixels, KdeCalibrator, KdeSpec, PixelScope};
use crate::error::{Error, Result};
use crate::losses::{Loss, LossKind, ReductionSpec};
use crate::metrics::{bdice, soft_dice_score, thresholded_dice, BDiceSpec, CalibRecord, EceAccumulator, EceSpec};
use crate::rng::derive_seed;
use crate::softlabels::{majority_vote, make_targets, uniform_average, SoftLabelSpec, TieBreak};
use crate::tensor::{LabelField, ProbField, RaterStack, TensorF};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub poly_power: f64,
    pub loss: Loss,
    pub reduction: ReductionSpec,
    pub label_source: SoftLabelSpec,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 30,
            batch_size: 8,
            poly_power: 0.9,
            loss: Loss::default(),
            reduction: ReductionSpec::default(),
            label_source: SoftLabelSpec::default(),
            seed: 42,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(m));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be >= 0, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.poly_power >= 0.0) {
            return bad(format!("poly_power must be >= 0, got {}", self.poly_power));
        }
        self.loss.validate()?;
        self.reduction.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdTerms {
    Ce,
    Dml,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdSpec {
    pub teacher_checkpoint: Option<PathBuf>,
    pub use_kde: bool,
    pub kde: KdeSpec,
    pub kd_weight: f64,
    pub kd_terms: KdTerms,
}

impl Default for KdSpec {
    fn default() -> Self {
        Self {
            teacher_checkpoint: None,
            use_kde: false,
            kde: KdeSpec {
                n_key: 256,
                pixel_scope: PixelScope::MisclassifiedAndBoundary,
                ..KdeSpec::default()
            },
            kd_weight: 1.0,
            kd_terms: KdTerms::Both,
        }
    }
}

impl KdSpec {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.kd_weight >= 0.0 && self.kd_weight.is_finite()) {
            return Err(Error::BadSpec(format!("kd_weight must be >= 0, got {}", self.kd_weight)));
        }
        if self.use_kde {
            self.kde.validate(classes)?;
        }
        Ok(())
    }
}

/// Source of soft targets for distillation.
pub trait Teacher {
    fn predict(&self, dataset: &Dataset, index: usize) -> Result<ProbField>;
}

impl Teacher for Model {
    fn predict(&self, dataset: &Dataset, index: usize) -> Result<ProbField> {
        self.forward(&dataset.images[index])
    }
}

/// A teacher that returns fixed predictions, indexed like the dataset.
#[derive(Debug, Clone)]
pub struct OracleTeacher {
    pub preds: Vec<ProbField>,
}

impl Teacher for OracleTeacher {
    fn predict(&self, _dataset: &Dataset, index: usize) -> Result<ProbField> {
        self.preds.get(index).cloned().ok_or(Error::EmptyDataset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSplit {
    Train,
    Val,
}

/// One line of the metric trace. Training rows only carry the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub split: TraceSplit,
    pub dice: Option<f64>,
    pub bdice: Option<f64>,
    pub ece: Option<f64>,
    pub loss: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "epoch,split,dice,bdice,ece,loss")?;
    let cell = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    for r in rows {
        let split = match r.split {
            TraceSplit::Train => "train",
            TraceSplit::Val => "val",
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch,
            split,
            cell(r.dice),
            cell(r.bdice),
            cell(r.ece),
            r.loss
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<TraceRow>,
}

/// Validation metrics: Dice and ECE against the majority vote, BDice
/// against the uniform rater average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub dice: f64,
    /// Mean `1 - sdl` of the raw probabilities against the majority vote.
    pub soft_dice: f64,
    pub bdice: f64,
    pub ece: f64,
    pub per_image_dice: Vec<f64>,
    pub per_image_bdice: Vec<f64>,
}

/// Per-image scores plus a pooled ECE accumulator, so results from
/// several folds can be merged before averaging.
#[derive(Debug, Clone)]
pub struct EvalParts {
    pub dice: Vec<f64>,
    pub soft_dice: Vec<f64>,
    pub bdice: Vec<f64>,
    pub ece: EceAccumulator,
}

impl EvalParts {
    pub fn new() -> Result<Self> {
        Ok(Self {
            dice: Vec::new(),
            soft_dice: Vec::new(),
            bdice: Vec::new(),
            ece: EceAccumulator::new(&EceSpec::default())?,
        })
    }

    pub fn push(&mut self, pred: &ProbField, stack: &RaterStack, tie_break: TieBreak) -> Result<()> {
        let maj = majority_vote(stack, tie_break)?;
        let avg = uniform_average(stack)?;
        self.dice.push(thresholded_dice(pred, &maj)?);
        self.soft_dice.push(soft_dice_score(pred, &maj, &ReductionSpec::default())?);
        self.bdice.push(bdice(pred, &avg, &BDiceSpec::default())?);
        let rec = CalibRecord::from_fields(pred, &maj)?;
        self.ece.extend(&rec.confidences, &rec.labels)
    }

    pub fn merge(&mut self, other: &EvalParts) -> Result<()> {
        self.dice.extend_from_slice(&other.dice);
        self.soft_dice.extend_from_slice(&other.soft_dice);
        self.bdice.extend_from_slice(&other.bdice);
        self.ece.merge(&other.ece)
    }

    pub fn finish(self) -> Result<EvalMetrics> {
        if self.dice.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(EvalMetrics {
            dice: mean(&self.dice),
            soft_dice: mean(&self.soft_dice),
            bdice: mean(&self.bdice),
            ece: self.ece.value()?,
            per_image_dice: self.dice,
            per_image_bdice: self.bdice,
        })
    }
}

pub fn evaluate_predictions(preds: &[ProbField], stacks: &[&RaterStack], tie_break: TieBreak) -> Result<EvalMetrics> {
    let mut parts = EvalParts::new()?;
    for (p, s) in preds.iter().zip(stacks) {
        parts.push(p, s, tie_break)?;
    }
    parts.finish()
}

pub fn evaluate_model(model: &Model, dataset: &Dataset, indices: &[usize], tie_break: TieBreak) -> Result<EvalMetrics> {
    let preds = indices
        .iter()
        .map(|&i| model.forward(&dataset.images[i]))
        .collect::<Result<Vec<_>>>()?;
    let stacks: Vec<&RaterStack> = indices.iter().map(|&i| &dataset.raters[i]).collect();
    evaluate_predictions(&preds, &stacks, tie_break)
}

/// Trains a fresh model on `train_idx`, recording validation metrics on
/// `val_idx` after every epoch (skipped when `val_idx` is empty).
pub fn train(
    dataset: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    model_spec: &ModelSpec,
    train_spec: &TrainSpec,
) -> Result<TrainOutcome> {
    run(dataset, train_idx, val_idx, model_spec, train_spec, None)
}

/// Like [`train`] with an extra `λ · term(student, teacher)` on every batch.
pub fn distill(
    dataset: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    teacher: &dyn Teacher,
    student_spec: &ModelSpec,
    train_spec: &TrainSpec,
    kd: &KdSpec,
) -> Result<TrainOutcome> {
    run(dataset, train_idx, val_idx, student_spec, train_spec, Some((teacher, kd)))
}

struct KdState<'a> {
    spec: &'a KdSpec,
    preds: Vec<ProbField>,
    /// Fixed teacher signal when no recalibration is applied.
    signal: Option<Vec<LabelField>>,
    gt: Vec<LabelField>,
    terms: Vec<Loss>,
}

impl KdState<'_> {
    fn batch_signal(&self, batch: &[usize], iteration: usize) -> Result<Vec<LabelField>> {
        if let Some(fixed) = &self.signal {
            return Ok(batch.iter().map(|&b| fixed[b].clone()).collect());
        }
        let preds: Vec<ProbField> = batch.iter().map(|&b| self.preds[b].clone()).collect();
        let gt: Vec<LabelField> = batch.iter().map(|&b| self.gt[b].clone()).collect();
        let kde_spec = KdeSpec {
            seed: derive_seed(self.spec.kde.seed, iteration as u64),
            ..self.spec.kde.clone()
        };
        let keys = sample_key_points(&preds, &gt, &kde_spec)?;
        let kde = KdeCalibrator::new(&keys, kde_spec.bandwidth)?;
        preds
            .iter()
            .zip(&gt)
            .map(|(p, g)| {
                let (cal, _) = match kde_spec.pixel_scope {
                    PixelScope::All => kde.calibrate_field(p, None)?,
                    PixelScope::MisclassifiedAndBoundary => {
                        kde.calibrate_field(p, Some(&select_scope_pixels(p, g, &kde_spec)?))?
                    }
                };
                LabelField::soft(cal.into_tensor())
            })
            .collect()
    }
}

fn run(
    dataset: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    model_spec: &ModelSpec,
    spec: &TrainSpec,
    kd: Option<(&dyn Teacher, &KdSpec)>,
) -> Result<TrainOutcome> {
    if train_idx.is_empty() || dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    spec.validate()?;
    if model_spec.classes != dataset.classes {
        return Err(Error::BadSpec(format!(
            "model has {} classes, data has {}",
            model_spec.classes, dataset.classes
        )));
    }
    let mut model = Model::new(model_spec.clone())?;
    let tie = spec.label_source.tie_break;
    let stacks: Vec<RaterStack> = train_idx.iter().map(|&i| dataset.raters[i].clone()).collect();
    let targets = make_targets(&spec.label_source, &stacks)?;
    let feats = train_idx
        .iter()
        .map(|&i| model.features(&dataset.images[i]))
        .collect::<Result<Vec<Features>>>()?;

    let kd_state = match kd {
        Some((teacher, kd_spec)) if kd_spec.kd_weight > 0.0 => {
            kd_spec.validate(dataset.classes)?;
            let preds = train_idx
                .iter()
                .map(|&i| teacher.predict(dataset, i))
                .collect::<Result<Vec<_>>>()?;
            let gt = stacks.iter().map(|s| majority_vote(s, tie)).collect::<Result<Vec<_>>>()?;
            let signal = if kd_spec.use_kde {
                None
            } else {
                Some(
                    preds
                        .iter()
                        .map(|p| LabelField::soft(p.tensor().clone()))
                        .collect::<Result<Vec<_>>>()?,
                )
            };
            let terms = match kd_spec.kd_terms {
                KdTerms::Ce => vec![Loss::new(LossKind::Ce)],
                KdTerms::Dml => vec![Loss::new(LossKind::Dml1)],
                KdTerms::Both => vec![Loss::new(LossKind::Ce), Loss::new(LossKind::Dml1)],
            };
            Some(KdState {
                spec: kd_spec,
                preds,
                signal,
                gt,
                terms,
            })
        }
        _ => None,
    };

    let n = train_idx.len();
    let per_epoch = n.div_ceil(spec.batch_size);
    let mut opt = Sgd::new(
        spec.lr0,
        spec.momentum,
        spec.weight_decay,
        spec.poly_power,
        spec.epochs * per_epoch,
        model.params().len(),
    );
    let mut trace = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; model.params().len()];
    for epoch in 0..spec.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, epoch as u64)));
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(spec.batch_size).enumerate() {
            let fwds = batch
                .iter()
                .map(|&b| model.forward_features(&feats[b]))
                .collect::<Result<Vec<_>>>()?;
            let xs: Vec<ProbField> = fwds.iter().map(|f| f.prob.clone()).collect();
            let ys: Vec<LabelField> = batch.iter().map(|&b| targets[b].clone()).collect();
            let mut out = spec.loss.evaluate_batch(&xs, &ys, &spec.reduction)?;
            if let Some(state) = &kd_state {
                let signal = state.batch_signal(batch, opt.iteration())?;
                let lambda = state.spec.kd_weight;
                for term in &state.terms {
                    let extra = term.evaluate_batch(&xs, &signal, &spec.reduction)?;
                    out.value += lambda * extra.value;
                    for (g, e) in out.grads.iter_mut().zip(extra.grads) {
                        *g = add_scaled(g, &e, lambda)?;
                    }
                }
            }
            if !out.value.is_finite() {
                return Err(Error::DivergedLoss { epoch, step });
            }
            loss_sum += out.value;
            grad.fill(0.0);
            for ((&b, fwd), g) in batch.iter().zip(&fwds).zip(&out.grads) {
                model.backward_into(&feats[b], fwd, g, &mut grad)?;
            }
            opt.step(model.params_mut(), &grad);
            if model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::DivergedLoss { epoch, step });
            }
        }
        trace.push(TraceRow {
            epoch,
            split: TraceSplit::Train,
            dice: None,
            bdice: None,
            ece: None,
            loss: loss_sum / per_epoch as f64,
        });
        if !val_idx.is_empty() {
            trace.push(validation_row(&model, dataset, val_idx, spec, epoch)?);
        }
        log::debug!("epoch {epoch}: train loss {:.5}", loss_sum / per_epoch as f64);
    }
    Ok(TrainOutcome { model, trace })
}

fn add_scaled(a: &TensorF, b: &TensorF, s: f64) -> Result<TensorF> {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + s * y).collect();
    TensorF::new(a.dims().to_vec(), data)
}

fn validation_row(model: &Model, dataset: &Dataset, val_idx: &[usize], spec: &TrainSpec, epoch: usize) -> Result<TraceRow> {
    let preds = val_idx
        .iter()
        .map(|&i| model.forward(&dataset.images[i]))
        .collect::<Result<Vec<_>>>()?;
    let stacks: Vec<RaterStack> = val_idx.iter().map(|&i| dataset.raters[i].clone()).collect();
    let refs: Vec<&RaterStack> = stacks.iter().collect();
    let m = evaluate_predictions(&preds, &refs, spec.label_source.tie_break)?;
    let targets = make_targets(&spec.label_source, &stacks)?;
    let loss = spec.loss.evaluate_batch(&preds, &targets, &spec.reduction)?.value;
    Ok(TraceRow {
        epoch,
        split: TraceSplit::Val,
        dice: Some(m.dice),
        bdice: Some(m.bdice),
        ece: Some(m.ece),
        loss,
    })
}
