//! Episodes, tensor files and evaluation protocols around `ssp-core`.
//!
//! - [`episode`]: the labelled support/query bundle.
//! - [`sspt`] and [`manifest`]: on-disk tensors and episode lists.
//! - [`synth`]: a seeded generator of synthetic episodes.
//! - [`metrics`]: IoU and MAE.
//! - [`analysis`]: pixel similarity statistics, partial-prototype matching
//!   and bounding-box weak labels.
//! - [`eval`]: batch evaluation, ablations and threshold sweeps.
//! - [`gradcheck`]: finite-difference verification of the loss gradient.

pub mod analysis;
pub mod episode;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod manifest;
pub mod metrics;
pub mod sspt;
pub mod synth;

pub use episode::Episode;
pub use error::{FormatError, HarnessError, Result};
pub use eval::{evaluate, Ablation, EpisodeBatchReport};
pub use synth::SyntheticSpec;
