//! Support and self-support prototype matching.
//!
//! One call of [`match_episode`] runs, in order:
//!
//! 1. support prototypes by masked average pooling, averaged over shots;
//! 2. the initial prediction `m1` from cosine matching against the query;
//! 3. thresholding of `m1` into confident foreground / background estimates;
//! 4. the self-support foreground prototype (pooled) and the adaptive
//!    background prototype field (affinity-weighted aggregation);
//! 5. blending with the support prototypes and the final match `m2`;
//! 6. optionally, a refinement pass seeded by `m2` producing `m3` and the
//!    `beta`-weighted `m_final`.

mod config;
mod matching;

pub use config::{EmptyMaskFallback, SspConfig};
pub use matching::{
    adaptive_bg_prototype, affinity, baseline_match, blend_prototypes, final_match, match_episode,
    refine, self_support_bg, self_support_fg, support_prototypes, threshold_select, BaselineMatch,
    Refinement,
};

use serde::Serialize;

use crate::error::{Result, SspError};
use crate::tensor::{FeatureMap, Mask, MaskKind, Prototype, PrototypeField, ScoreMap};

/// A labelled support image at feature resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Shot {
    pub features: FeatureMap,
    pub mask: Mask,
}

impl Shot {
    pub fn new(features: FeatureMap, mask: Mask) -> Result<Self> {
        features.check_mask(&mask, "shot")?;
        Ok(Self { features, mask })
    }
}

/// Paired foreground / background probability maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub fg: Mask,
    pub bg: Mask,
}

impl Prediction {
    /// `wa * a + wb * b`, channel by channel.
    pub fn weighted_sum(a: &Prediction, wa: f64, b: &Prediction, wb: f64) -> Result<Prediction> {
        let mix = |x: &Mask, y: &Mask| -> Result<Mask> {
            if (x.height(), x.width()) != (y.height(), y.width()) {
                return Err(SspError::dims(
                    "weighted_sum",
                    format!("{}x{}", x.height(), x.width()),
                    format!("{}x{}", y.height(), y.width()),
                ));
            }
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .map(|(&u, &v)| (wa * f64::from(u) + wb * f64::from(v)).clamp(0.0, 1.0) as f32)
                .collect();
            Mask::new(x.height(), x.width(), MaskKind::Probability, data)
        };
        Ok(Prediction {
            fg: mix(&a.fg, &b.fg)?,
            bg: mix(&a.bg, &b.bg)?,
        })
    }

    /// Largest deviation of `fg + bg` from 1 over all pixels.
    pub fn max_sum_error(&self) -> f64 {
        self.fg
            .data()
            .iter()
            .zip(self.bg.data())
            .map(|(&f, &b)| (f64::from(f) + f64::from(b) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Raw cosine distance maps that fed one softmax stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageScores {
    pub fg: ScoreMap,
    pub bg: ScoreMap,
}

/// All prototypes produced while matching one query.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub fg_support: Prototype,
    pub bg_support: Prototype,
    pub fg_self: Option<Prototype>,
    pub bg_self: Option<PrototypeField>,
    pub fg_refined: Option<Prototype>,
    pub bg_refined: Option<PrototypeField>,
}

impl PrototypeSet {
    pub fn from_support(fg_support: Prototype, bg_support: Prototype) -> Self {
        Self {
            fg_support,
            bg_support,
            fg_self: None,
            bg_self: None,
            fg_refined: None,
            bg_refined: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.fg_support.channels()
    }
}

/// Where a self-support prototype came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// The thresholded estimate was nonempty.
    Threshold,
    /// The estimate was empty; the top-k most confident pixels were used.
    TopK,
    /// The estimate was empty and the prototype was dropped.
    Absent,
}

/// Pixel counts and fallback flags for one self-support pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SelectionStats {
    pub fg_selected: usize,
    pub bg_selected: usize,
    pub fg_source: Selection,
    pub bg_source: Selection,
}

impl SelectionStats {
    pub fn fallback_used(&self) -> bool {
        self.fg_source != Selection::Threshold || self.bg_source != Selection::Threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Diagnostics {
    pub first_pass: Option<SelectionStats>,
    pub refinement: Option<SelectionStats>,
}

/// Which parts of the method to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchVariant {
    /// Support prototypes only; `m_final == m1`.
    Baseline,
    /// Self-support matching. With `adaptive_bg == false` the query
    /// background prototype is a single pooled vector instead of a field.
    SelfSupport { adaptive_bg: bool },
}

impl MatchVariant {
    pub const FULL: MatchVariant = MatchVariant::SelfSupport { adaptive_bg: true };
}

/// Everything one query match produces.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub m1: Prediction,
    pub m2: Option<Prediction>,
    pub m3: Option<Prediction>,
    pub m_final: Prediction,
    pub d1: StageScores,
    pub d2: Option<StageScores>,
    pub d3: Option<StageScores>,
    pub prototypes: PrototypeSet,
    /// Blended prototypes used for `m2`.
    pub fg_star: Option<Prototype>,
    pub bg_star: Option<PrototypeField>,
    pub diagnostics: Diagnostics,
}

#[cfg(test)]
mod tests;
