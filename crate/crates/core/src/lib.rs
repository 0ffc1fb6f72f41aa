//! Prototype matching for few-shot segmentation at the feature-map level.
//!
//! The crate is split in three layers:
//!
//! - [`tensor`]: dense feature maps, masks and prototypes together with the
//!   handful of kernels the method needs (masked average pooling, cosine
//!   maps, two-way softmax, matrix multiply).
//! - [`pipeline`]: support-prototype matching, self-support foreground and
//!   adaptive background prototypes, blending, final matching and the
//!   optional refinement pass.
//! - [`loss`]: the matching and self-matching BCE losses, their weighted
//!   total, and the analytic gradient of the matching loss with respect to
//!   the query features.
//!
//! Everything here is a pure function of its inputs. Storage is `f32`;
//! every reduction accumulates in `f64`.

pub mod error;
pub mod loss;
pub mod pipeline;
pub mod tensor;

pub use error::{Result, SspError};
pub use pipeline::{
    Diagnostics, EmptyMaskFallback, MatchResult, MatchVariant, Prediction, PrototypeSet, Selection,
    SelectionStats, Shot, SspConfig, StageScores,
};
pub use tensor::{
    AffinityMatrix, FeatureMap, Mask, MaskKind, Matrix, Prototype, PrototypeField, Role, ScoreMap,
};
