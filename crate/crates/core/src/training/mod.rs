//! Desk-scale training harness: synthetic multi-rater data, tiny
//! hand-differentiated models, SGD with a poly schedule, k-fold
//! cross-validation and teacher-student distillation.

mod checkpoint;
mod crossval;
mod features;
mod model;
mod optim;
mod synth;
mod trainer;

pub use checkpoint::{load_checkpoint, manifest_path, save_checkpoint, Manifest};
pub use crossval::{crossval, crossval_with, fold_assignment, CrossvalReport, ImageScore};
pub use features::{box_mean, FeatureSet, Features};
pub use model::{Forward, Model, ModelKind, ModelSpec};
pub use optim::{poly_lr, Sgd};
pub use synth::{generate_synthetic, Dataset, RaterNoise, SynthSpec};
pub use trainer::{
    distill, evaluate_model, evaluate_predictions, train, write_trace_csv, EvalMetrics, EvalParts, KdSpec,
    KdTerms, OracleTeacher, Teacher, TrainOutcome, TrainSpec, TraceRow, TraceSplit,
};
