use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dicesm::calibration::{
    sample_key_points, select_scope_pixels, KdeCalibrator, KdeSpec, KdeStats, PixelScope,
};
use dicesm::io::{read_tensor, reproject_simplex, write_tensor};
use dicesm::metrics::{
    bdice, bdice_per_class, mask_dice, thresholded_dice, BDiceSpec, CalibRecord, EceAccumulator, EceSpec,
};
use dicesm::properties::check_properties;
use dicesm::softlabels::{make_targets, SoftLabelSpec, Strategy};
use dicesm::training::{
    crossval, distill, evaluate_model, fold_assignment, load_checkpoint, save_checkpoint, train,
    write_trace_csv, Dataset, KdSpec, ModelSpec, RaterNoise, SynthSpec, TrainOutcome, TrainSpec,
};
use dicesm::{
    Error, LabelField, Loss, LossKind, ProbField, RaterStack, ReductionSpec, Result, TensorF, TverskyParams,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{stack, unstack, write_dataset, DataSource};
use crate::{
    CalibrateArgs, Command, ConfigArgs, EvalArgs, EvalLossArgs, GenDataArgs, MetricArg, PropertyArgs, ScopeArg,
    SoftLabelArgs,
};

pub enum Outcome {
    Success,
    /// The command ran but its result is a failure (e.g. a violated property).
    Failed,
}

pub fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::EvalLoss(a) => eval_loss(a),
        Command::Eval(a) => eval(a),
        Command::MakeSoftLabels(a) => make_soft_labels(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Train(a) => train_cmd(a),
        Command::Distill(a) => distill_cmd(a),
        Command::CheckProperties(a) => properties(a),
        Command::GenData(a) => gen_data(a),
    }
}

fn emit(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_images(path: &Path) -> Result<Vec<TensorF>> {
    unstack(read_tensor(path)?)?
        .into_iter()
        .map(reproject_simplex)
        .collect()
}

fn load_probs(path: &Path) -> Result<Vec<ProbField>> {
    load_images(path)?.into_iter().map(ProbField::new).collect()
}

fn load_labels(path: &Path) -> Result<Vec<LabelField>> {
    load_images(path)?.into_iter().map(LabelField::infer).collect()
}

fn same_count(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            left: vec![a],
            right: vec![b],
        })
    }
}

fn eval_loss(a: EvalLossArgs) -> Result<Outcome> {
    let kind: LossKind = a.loss.parse()?;
    let mut loss = Loss::new(kind)
        .with_tversky(TverskyParams::new(a.alpha, a.beta, a.gamma)?)
        .with_weights(a.ce_weight, a.dml_weight);
    if a.allow_soft_stl {
        loss = loss.allowing_soft_stl();
    }
    loss.validate()?;
    let red = ReductionSpec {
        class_mode: a.class_mode.into(),
        batch_mode: a.batch_mode.into(),
        empty_both_value: a.empty_both_value,
    };
    red.validate()?;

    if let Some(path) = &a.curve {
        let gammas = if a.gammas.is_empty() { vec![a.gamma] } else { a.gammas.clone() };
        let argmin = write_curve(path, &loss, &red, a.curve_y, &gammas, a.curve_points)?;
        emit(&json!({
            "loss": kind.as_str(),
            "curve": path,
            "y": a.curve_y,
            "gammas": gammas,
            "points": a.curve_points,
            "argmin": argmin,
        }))?;
        return Ok(Outcome::Success);
    }

    let (pred, label) = (a.pred.expect("clap requires --pred"), a.label.expect("clap requires --label"));
    let xs = load_probs(&pred)?;
    let ys = load_labels(&label)?;
    same_count(xs.len(), ys.len())?;
    let out = loss.evaluate_batch(&xs, &ys, &red)?;
    if let Some(g) = &a.grad_out {
        write_tensor(g, &stack(out.grads)?)?;
    }
    emit(&json!({ "loss": kind.as_str(), "value": out.value, "images": xs.len() }))?;
    Ok(Outcome::Success)
}

/// Samples `loss(x, y)` for one pixel on an even grid over `[0, 1]` and
/// returns the grid minimizer for each γ.
fn write_curve(
    path: &Path,
    loss: &Loss,
    red: &ReductionSpec,
    y: f64,
    gammas: &[f64],
    points: usize,
) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidParams("--curve-points must be at least 2".into()));
    }
    let label = LabelField::infer(TensorF::new(vec![1, 1, 1], vec![y])?)?;
    let losses = gammas
        .iter()
        .map(|&g| {
            let mut l = loss.clone();
            l.tversky = TverskyParams::new(l.tversky.alpha, l.tversky.beta, g)?;
            Ok(l)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("x");
    for g in gammas {
        write!(csv, ",gamma={g}").expect("write to String");
    }
    csv.push('\n');
    let mut best = vec![(f64::INFINITY, 0.0); gammas.len()];
    for i in 0..points {
        let x = i as f64 / (points - 1) as f64;
        let pred = ProbField::new(TensorF::new(vec![1, 1, 1], vec![x])?)?;
        write!(csv, "{x}").expect("write to String");
        for (l, b) in losses.iter().zip(&mut best) {
            let v = l.evaluate(&pred, &label, red)?.value;
            if v < b.0 {
                *b = (v, x);
            }
            write!(csv, ",{v}").expect("write to String");
        }
        csv.push('\n');
    }
    fs::write(path, csv)?;
    Ok(best.into_iter().map(|(_, x)| x).collect())
}

fn eval(a: EvalArgs) -> Result<Outcome> {
    let xs = load_probs(&a.pred)?;
    let ys = load_labels(&a.label)?;
    same_count(xs.len(), ys.len())?;
    let n = xs.len() as f64;
    let (name, value, per_class) = match a.metric {
        MetricArg::Dice => {
            let mut value = 0.0;
            let mut per = vec![0.0; xs[0].classes()];
            for (x, y) in xs.iter().zip(&ys) {
                value += thresholded_dice(x, y)? / n;
                for (c, p) in class_dice(x, y).into_iter().zip(&mut per) {
                    *p += c / n;
                }
            }
            ("dice", value, per)
        }
        MetricArg::Bdice => {
            let spec = BDiceSpec {
                thresholds: a.thresholds.clone(),
                ..BDiceSpec::default()
            };
            let mut value = 0.0;
            let mut per = vec![0.0; xs[0].classes()];
            for (x, y) in xs.iter().zip(&ys) {
                value += bdice(x, y, &spec)? / n;
                for (c, p) in bdice_per_class(x, y, &spec)?.into_iter().zip(&mut per) {
                    *p += c / n;
                }
            }
            ("bdice", value, per)
        }
        MetricArg::Ece => {
            let mut acc = EceAccumulator::new(&EceSpec {
                n_bins: a.bins,
                ..EceSpec::default()
            })?;
            for (x, y) in xs.iter().zip(&ys) {
                let rec = CalibRecord::from_fields(x, y)?;
                acc.extend(&rec.confidences, &rec.labels)?;
            }
            let v = acc.value()?;
            ("ece", v, vec![v])
        }
    };
    emit(&json!({ "metric": name, "value": value, "per_class": per_class, "images": xs.len() }))?;
    Ok(Outcome::Success)
}

/// Dice of the binarized prediction per channel (channel 0 of a binary
/// field is the foreground).
fn class_dice(x: &ProbField, y: &LabelField) -> Vec<f64> {
    let (pm, lm) = (x.class_map(), y.class_map());
    let classes = x.classes();
    let fg = |m: usize, c: usize| if classes == 1 { m == 1 } else { m == c };
    (0..classes)
        .map(|c| {
            mask_dice(
                pm.iter().map(|&m| fg(m, c)),
                lm.iter().map(|&m| fg(m, c)),
                1.0,
            )
        })
        .collect()
}

fn make_soft_labels(a: SoftLabelArgs) -> Result<Outcome> {
    let per_rater = a
        .raters
        .iter()
        .map(|p| load_images(p))
        .collect::<Result<Vec<_>>>()?;
    let n = per_rater[0].len();
    for r in &per_rater {
        same_count(n, r.len())?;
    }
    let stacks = (0..n)
        .map(|i| {
            RaterStack::new(
                per_rater
                    .iter()
                    .map(|r| LabelField::hard(r[i].clone()))
                    .collect::<Result<_>>()?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = SoftLabelSpec {
        strategy: Strategy::from(a.strategy),
        epsilon: a.epsilon,
        seed: a.seed.seed,
        tie_break: a.tie_break.into(),
        weights: a.weights.into(),
    };
    let targets = make_targets(&spec, &stacks)?;
    let hard = targets.iter().all(LabelField::is_hard_valued);
    write_tensor(&a.out, &stack(targets.into_iter().map(LabelField::into_tensor).collect())?)?;
    emit(&json!({
        "strategy": spec.strategy,
        "out": a.out,
        "images": n,
        "raters": a.raters.len(),
        "hard": hard,
    }))?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct CalibrationRun {
    bandwidth: f64,
    ece_before: f64,
    ece_after: f64,
    pixels: usize,
    recalibrated: usize,
    kernel_evals: u64,
    degenerate: u64,
}

fn calibrate(a: CalibrateArgs) -> Result<Outcome> {
    let preds = load_probs(&a.pred)?;
    let labels = load_labels(&a.label)?;
    same_count(preds.len(), labels.len())?;
    let base = KdeSpec {
        bandwidth: a.bandwidth,
        n_key: a.n_key,
        pixel_scope: match a.scope {
            ScopeArg::All => PixelScope::All,
            ScopeArg::Boundary => PixelScope::MisclassifiedAndBoundary,
        },
        boundary_radius: a.boundary_radius,
        seed: a.seed.seed,
    };
    let ece_spec = EceSpec {
        n_bins: a.bins,
        ..EceSpec::default()
    };
    let bandwidths = a.sweep.clone().unwrap_or_else(|| vec![a.bandwidth]);
    let mut runs = Vec::with_capacity(bandwidths.len());
    let mut last = Vec::new();
    for &h in &bandwidths {
        let spec = KdeSpec {
            bandwidth: h,
            ..base.clone()
        };
        let (out, run) = calibrate_all(&preds, &labels, &spec, &ece_spec)?;
        runs.push(run);
        last = out;
    }
    if a.sweep.is_none() {
        let path = a.out.as_ref().expect("clap requires --out without --sweep");
        write_tensor(path, &stack(last.into_iter().map(ProbField::into_tensor).collect())?)?;
        let run = runs.pop().expect("one bandwidth");
        emit(&json!({ "out": path, "scope": a.scope_name(), "n_key": a.n_key, "seed": a.seed.seed, "result": run }))?;
    } else {
        emit(&json!({ "scope": a.scope_name(), "n_key": a.n_key, "seed": a.seed.seed, "sweep": runs }))?;
    }
    Ok(Outcome::Success)
}

impl CalibrateArgs {
    fn scope_name(&self) -> &'static str {
        match self.scope {
            ScopeArg::All => "all",
            ScopeArg::Boundary => "boundary",
        }
    }
}

fn calibrate_all(
    preds: &[ProbField],
    labels: &[LabelField],
    spec: &KdeSpec,
    ece_spec: &EceSpec,
) -> Result<(Vec<ProbField>, CalibrationRun)> {
    spec.validate(preds[0].classes())?;
    let keys = sample_key_points(preds, labels, spec)?;
    let kde = KdeCalibrator::new(&keys, spec.bandwidth)?;
    let mut before = EceAccumulator::new(ece_spec)?;
    let mut after = EceAccumulator::new(ece_spec)?;
    let mut stats = KdeStats::default();
    let (mut pixels, mut recalibrated) = (0, 0);
    let mut out = Vec::with_capacity(preds.len());
    for (p, y) in preds.iter().zip(labels) {
        let scope = match spec.pixel_scope {
            PixelScope::All => None,
            PixelScope::MisclassifiedAndBoundary => Some(select_scope_pixels(p, y, spec)?),
        };
        let (cal, s) = kde.calibrate_field(p, scope.as_deref())?;
        stats.kernel_evals += s.kernel_evals;
        stats.degenerate += s.degenerate;
        pixels += p.pixels();
        recalibrated += scope.map_or(p.pixels(), |s| s.len());
        let rec = CalibRecord::from_fields(p, y)?;
        before.extend(&rec.confidences, &rec.labels)?;
        let rec = CalibRecord::from_fields(&cal, y)?;
        after.extend(&rec.confidences, &rec.labels)?;
        out.push(cal);
    }
    if stats.degenerate > 0 {
        log::warn!("{} pixels kept their raw probability (kernel weights underflowed)", stats.degenerate);
    }
    Ok((
        out,
        CalibrationRun {
            bandwidth: spec.bandwidth,
            ece_before: before.value()?,
            ece_after: after.value()?,
            pixels,
            recalibrated,
            kernel_evals: stats.kernel_evals,
            degenerate: stats.degenerate,
        },
    ))
}

/// Which images train and which validate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Holdout {
    /// Number of seeded folds the images are split into.
    pub folds: usize,
    /// Fold held out for validation.
    pub fold: usize,
    pub seed: u64,
}

impl Default for Holdout {
    fn default() -> Self {
        Self {
            folds: 5,
            fold: 0,
            seed: 42,
        }
    }
}

impl Holdout {
    fn split(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let folds = fold_assignment(n, self.folds, self.seed)?;
        let val = folds
            .get(self.fold)
            .cloned()
            .ok_or_else(|| Error::BadSpec(format!("fold {} out of range for {} folds", self.fold, self.folds)))?;
        let mut train: Vec<usize> = folds
            .into_iter()
            .enumerate()
            .filter(|&(f, _)| f != self.fold)
            .flat_map(|(_, v)| v)
            .collect();
        train.sort_unstable();
        Ok((train, val))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    data: DataSource,
    #[serde(default)]
    model: ModelSpec,
    #[serde(default)]
    train: TrainSpec,
    #[serde(default)]
    holdout: Holdout,
    /// Run k-fold cross-validation with `holdout.folds` folds instead of
    /// a single split; no checkpoint is written.
    #[serde(default)]
    crossval: bool,
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistillConfig {
    data: DataSource,
    #[serde(default)]
    student: ModelSpec,
    #[serde(default)]
    train: TrainSpec,
    kd: KdSpec,
    #[serde(default)]
    holdout: Holdout,
    out_dir: PathBuf,
}

fn read_config<T: for<'de> Deserialize<'de>>(a: &ConfigArgs) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(&a.config)?)?)
}

fn train_cmd(a: ConfigArgs) -> Result<Outcome> {
    let cfg: TrainConfig = read_config(&a)?;
    let data = cfg.data.load()?;
    fs::create_dir_all(&cfg.out_dir)?;
    if cfg.crossval {
        let report = crossval(&data, cfg.holdout.folds, &cfg.model, &cfg.train)?;
        let path = cfg.out_dir.join("crossval.json");
        fs::write(&path, serde_json::to_string_pretty(&report)?)?;
        emit(&json!({
            "folds": cfg.holdout.folds,
            "report": path,
            "dice": report.dice,
            "soft_dice": report.soft_dice,
            "bdice": report.bdice,
            "ece": report.ece,
        }))?;
        return Ok(Outcome::Success);
    }
    let (train_idx, val_idx) = cfg.holdout.split(data.len())?;
    let outcome = train(&data, &train_idx, &val_idx, &cfg.model, &cfg.train)?;
    finish_run(&cfg.out_dir, &data, &val_idx, &outcome, &cfg.train)
}

fn distill_cmd(a: ConfigArgs) -> Result<Outcome> {
    let cfg: DistillConfig = read_config(&a)?;
    let path = cfg
        .kd
        .teacher_checkpoint
        .as_ref()
        .ok_or_else(|| Error::BadSpec("kd.teacher_checkpoint is required".into()))?;
    let teacher = load_checkpoint(path, None)?;
    let data = cfg.data.load()?;
    if teacher.spec().classes != data.classes {
        return Err(Error::CheckpointMismatch(format!(
            "teacher predicts {} classes, data has {}",
            teacher.spec().classes,
            data.classes
        )));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let (train_idx, val_idx) = cfg.holdout.split(data.len())?;
    let outcome = distill(&data, &train_idx, &val_idx, &teacher, &cfg.student, &cfg.train, &cfg.kd)?;
    finish_run(&cfg.out_dir, &data, &val_idx, &outcome, &cfg.train)
}

fn finish_run(
    out_dir: &Path,
    data: &Dataset,
    val_idx: &[usize],
    outcome: &TrainOutcome,
    spec: &TrainSpec,
) -> Result<Outcome> {
    let ckpt = out_dir.join("model.sdt");
    save_checkpoint(&outcome.model, &ckpt)?;
    let trace = out_dir.join("trace.csv");
    let mut w = BufWriter::new(File::create(&trace)?);
    write_trace_csv(&outcome.trace, &mut w)?;
    w.flush()?;
    let m = evaluate_model(&outcome.model, data, val_idx, spec.label_source.tie_break)?;
    emit(&json!({
        "checkpoint": ckpt,
        "trace": trace,
        "train_images": data.len() - val_idx.len(),
        "val_images": val_idx.len(),
        "val": { "dice": m.dice, "soft_dice": m.soft_dice, "bdice": m.bdice, "ece": m.ece },
    }))?;
    Ok(Outcome::Success)
}

fn properties(a: PropertyArgs) -> Result<Outcome> {
    if a.trials == 0 {
        return Err(Error::InvalidParams("--trials must be at least 1".into()));
    }
    let report = check_properties(a.trials, a.seed.seed, a.mutate.into())?;
    for p in report.properties.iter().filter(|p| !p.ok()) {
        log::warn!("{} failed {} of {} trials", p.name, p.trials - p.passed, p.trials);
    }
    emit(&report)?;
    Ok(if report.all_passed {
        Outcome::Success
    } else {
        Outcome::Failed
    })
}

fn gen_data(a: GenDataArgs) -> Result<Outcome> {
    let spec = match &a.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => SynthSpec {
            n_images: a.n_images,
            height: a.height,
            width: a.width,
            n_classes: a.classes,
            k_raters: a.raters,
            rater_noise: RaterNoise {
                dilate_erode_radius: [a.radius_min, a.radius_max],
                boundary_flip_prob: a.flip_prob,
            },
            image_noise: a.image_noise,
            seed: a.seed.seed,
        },
    };
    let data = dicesm::training::generate_synthetic(&spec)?;
    let manifest = write_dataset(&a.out, &data, Some(&spec))?;
    emit(&json!({ "out": a.out, "manifest": manifest }))?;
    Ok(Outcome::Success)
}
