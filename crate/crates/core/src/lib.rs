//! Detection of defining features in labeled tabular data and in black-box
//! model predictions.
//!
//! A *defining feature* is an input feature from which the target label was
//! mechanically constructed (e.g. a clinical score computed by thresholding a
//! lab value that is also present in the inputs). Models trained on such data
//! reconstruct the label definition instead of learning predictive patterns.
//!
//! The crate fits penalized cubic-spline additive models and applies a
//! two-step procedure: an exhaustive candidate-subset search ranked by data
//! fit and model complexity, followed by a nullification check on the
//! remaining candidates.

pub mod blackbox;
pub mod dataset;
pub mod detect;
pub mod gam;
pub mod plot;
pub mod spline;
pub mod synth;

mod error;

pub use dataset::{CandidateSet, ColumnKind, Dataset, ScalingParams};
pub use detect::{DetectionConfig, DetectionReport, RankedModel, Verdict};
pub use error::Error;
pub use gam::{FitMetrics, FittedGam, FeatureShape};
pub use synth::{GenConfig, LabelingRule, ThresholdTable};

pub type Result<T> = std::result::Result<T, Error>;
