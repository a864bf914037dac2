//! Overlap losses for semantic segmentation that stay well behaved on soft
//! labels, together with the metrics, soft-label builders, kernel
//! recalibration and a small training harness used to exercise them.

pub mod calibration;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod properties;
pub mod rng;
pub mod softlabels;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use losses::{GradPair, Loss, LossKind, ReductionSpec, TverskyParams};
pub use tensor::{Hardness, LabelField, ProbField, RaterStack, TensorF};
