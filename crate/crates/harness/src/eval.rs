//! Batch evaluation, ablations and threshold sweeps.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssp_core::loss::{loss_matching, loss_self, loss_total, support_self_loss};
use ssp_core::pipeline::match_episode;
use ssp_core::{Diagnostics, MatchResult, MatchVariant, PrototypeField, SspConfig, SspError};

use crate::episode::Episode;
use crate::error::{HarnessError, Result};
use crate::metrics::{MeanScores, Scores};

/// Which parts of the method an evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Self-support matching with the adaptive background field, plus the
    /// training losses reported as metrics.
    Full,
    /// Support prototypes only.
    NoSsm,
    /// Self-support matching without loss reporting.
    NoSslMetrics,
    /// Self-support matching with one pooled query background prototype.
    NoAsbp,
}

impl Ablation {
    /// Rows of the ablation table, weakest first.
    pub const TABLE: [Ablation; 4] = [
        Ablation::NoSsm,
        Ablation::NoAsbp,
        Ablation::NoSslMetrics,
        Ablation::Full,
    ];

    pub fn variant(self) -> MatchVariant {
        match self {
            Ablation::NoSsm => MatchVariant::Baseline,
            Ablation::NoAsbp => MatchVariant::SelfSupport { adaptive_bg: false },
            Ablation::Full | Ablation::NoSslMetrics => MatchVariant::FULL,
        }
    }

    pub fn reports_losses(self) -> bool {
        self == Ablation::Full
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSsm => "no_ssm",
            Ablation::NoSslMetrics => "no_ssl_metrics",
            Ablation::NoAsbp => "no_asbp",
        }
    }

    /// Label of the ablation table row this setting fills.
    pub fn row_label(self) -> &'static str {
        match self {
            Ablation::NoSsm => "baseline",
            Ablation::NoAsbp => "ssm",
            Ablation::NoSslMetrics => "ssm+asbp",
            Ablation::Full => "full",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            Ablation::Full,
            Ablation::NoSsm,
            Ablation::NoSslMetrics,
            Ablation::NoAsbp,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| format!("unknown ablation `{s}` (full, no_ssm, no_ssl_metrics, no_asbp)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageMetrics {
    pub m1: Scores,
    pub m2: Option<Scores>,
    pub m_final: Scores,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossMetrics {
    pub matching: f64,
    pub query_self: f64,
    /// Mean over supports that have background; `None` if none does.
    pub support_self: Option<f64>,
    /// Weighted total; a missing support term counts as zero.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode_id: u64,
    pub class_id: u32,
    pub iou: f64,
    pub mae_all: f64,
    pub mae_tp: Option<f64>,
    pub stages: StageMetrics,
    pub diagnostics: Diagnostics,
    pub losses: Option<LossMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub m1: MeanScores,
    pub m2: Option<MeanScores>,
    pub m_final: MeanScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeBatchReport {
    pub ablation: Ablation,
    pub seed: u64,
    pub config: SspConfig,
    pub episode_count: usize,
    pub miou: f64,
    pub mae_all: f64,
    pub mae_tp: Option<f64>,
    pub tp_episodes: usize,
    pub stages: StageSummary,
    pub mean_losses: Option<LossMetrics>,
    /// Episodes where a thresholded estimate came back empty.
    pub fallback_episodes: usize,
    /// Sorted by `episode_id`.
    pub episodes: Vec<EpisodeRecord>,
}

fn losses(ep: &Episode, r: &MatchResult, cfg: &SspConfig) -> Result<LossMetrics> {
    let t = cfg.temperature;
    let (h, w) = (ep.query.height(), ep.query.width());
    let fg_star = r.fg_star.as_ref().expect("self-support result has fg_star");
    let bg_star = r.bg_star.as_ref().expect("self-support result has bg_star");
    let matching = loss_matching(fg_star, bg_star, &ep.query, &ep.query_gt, t)?;

    let ps = &r.prototypes;
    let fg_q = ps.fg_self.as_ref().unwrap_or(&ps.fg_support);
    let bg_q = match &ps.bg_self {
        Some(field) => field.clone(),
        None => PrototypeField::broadcast(&ps.bg_support, h, w)?,
    };
    let query_self = loss_self(fg_q, &bg_q, &ep.query, &ep.query_gt, t)?;

    let per_shot = ep
        .supports
        .iter()
        .map(|s| support_self_loss(s, t))
        .collect::<Result<Vec<_>, SspError>>()?;
    let present: Vec<f64> = per_shot.into_iter().flatten().collect();
    let support_self =
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    Ok(LossMetrics {
        matching,
        query_self,
        support_self,
        total: loss_total(matching, query_self, support_self.unwrap_or(0.0), cfg),
    })
}

/// Runs the matcher on one episode and scores every stage.
pub fn evaluate_episode(
    ep: &Episode,
    cfg: &SspConfig,
    ablation: Ablation,
) -> Result<EpisodeRecord> {
    let r = match_episode(&ep.supports, &ep.query, cfg, ablation.variant())?;
    let gt = &ep.query_gt;
    let m_final = Scores::of(&r.m_final.fg, gt);
    let stages = StageMetrics {
        m1: Scores::of(&r.m1.fg, gt),
        m2: r.m2.as_ref().map(|m| Scores::of(&m.fg, gt)),
        m_final,
    };
    let losses = if ablation.reports_losses() {
        Some(losses(ep, &r, cfg)?)
    } else {
        None
    };
    Ok(EpisodeRecord {
        episode_id: ep.episode_id,
        class_id: ep.class_id,
        iou: m_final.iou,
        mae_all: m_final.mae_all,
        mae_tp: m_final.mae_tp,
        stages,
        diagnostics: r.diagnostics,
        losses,
    })
}

fn mean_losses(records: &[EpisodeRecord]) -> Option<LossMetrics> {
    let all: Vec<&LossMetrics> = records.iter().filter_map(|r| r.losses.as_ref()).collect();
    if all.is_empty() {
        return None;
    }
    let n = all.len() as f64;
    let avg = |f: fn(&LossMetrics) -> f64| all.iter().map(|l| f(l)).sum::<f64>() / n;
    let ss: Vec<f64> = all.iter().filter_map(|l| l.support_self).collect();
    Some(LossMetrics {
        matching: avg(|l| l.matching),
        query_self: avg(|l| l.query_self),
        support_self: (!ss.is_empty()).then(|| ss.iter().sum::<f64>() / ss.len() as f64),
        total: avg(|l| l.total),
    })
}

/// Evaluates every episode (in parallel on the current rayon pool) and
/// aggregates. The report does not depend on the thread count.
pub fn evaluate(
    episodes: &[Episode],
    cfg: &SspConfig,
    ablation: Ablation,
    seed: u64,
) -> Result<EpisodeBatchReport> {
    cfg.validate()?;
    if episodes.is_empty() {
        return Err(HarnessError::InvalidSpec("no episodes to evaluate".into()));
    }
    let mut records = episodes
        .par_iter()
        .map(|ep| {
            evaluate_episode(ep, cfg, ablation).map_err(|e| match e {
                HarnessError::Pipeline(err) => HarnessError::InvalidEpisode {
                    episode_id: ep.episode_id,
                    message: err.to_string(),
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.episode_id);

    let finals: Vec<Scores> = records.iter().map(|r| r.stages.m_final).collect();
    let overall = MeanScores::of(&finals).expect("nonempty");
    let m1 = MeanScores::of(records.iter().map(|r| &r.stages.m1)).expect("nonempty");
    let m2s: Vec<Scores> = records.iter().filter_map(|r| r.stages.m2).collect();
    let fallback_episodes = records
        .iter()
        .filter(|r| {
            [r.diagnostics.first_pass, r.diagnostics.refinement]
                .iter()
                .flatten()
                .any(|s| s.fallback_used())
        })
        .count();
    Ok(EpisodeBatchReport {
        ablation,
        seed,
        config: cfg.clone(),
        episode_count: records.len(),
        miou: overall.miou,
        mae_all: overall.mae_all,
        mae_tp: overall.mae_tp,
        tp_episodes: overall.tp_episodes,
        stages: StageSummary {
            m1,
            m2: MeanScores::of(&m2s),
            m_final: overall,
        },
        mean_losses: mean_losses(&records),
        fallback_episodes,
        episodes: records,
    })
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub row: &'static str,
    pub ablation: Ablation,
    pub miou: f64,
    pub mae_all: f64,
    pub mae_tp: Option<f64>,
    pub mean_losses: Option<LossMetrics>,
}

/// Evaluates the four table rows: baseline, ssm, ssm+asbp, full. The last
/// two produce identical masks; the full row adds loss metrics.
pub fn ablation_table(
    episodes: &[Episode],
    cfg: &SspConfig,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    Ablation::TABLE
        .iter()
        .map(|&a| {
            let r = evaluate(episodes, cfg, a, seed)?;
            Ok(AblationRow {
                row: a.row_label(),
                ablation: a,
                miou: r.miou,
                mae_all: r.mae_all,
                mae_tp: r.mae_tp,
                mean_losses: r.mean_losses,
            })
        })
        .collect()
}

/// Range of thresholds reported to work well on real data.
pub const REFERENCE_PLATEAU: ((f64, f64), (f64, f64)) = ((0.7, 0.9), (0.5, 0.7));

pub fn in_reference_plateau(tau_fg: f64, tau_bg: f64) -> bool {
    let ((f0, f1), (b0, b1)) = REFERENCE_PLATEAU;
    let within = |v: f64, lo: f64, hi: f64| v >= lo - 1e-9 && v <= hi + 1e-9;
    within(tau_fg, f0, f1) && within(tau_bg, b0, b1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub tau_fg: f64,
    pub tau_bg: f64,
    pub miou: f64,
    pub in_reference_plateau: bool,
}

/// Full-method mIoU on every `(tau_fg, tau_bg)` pair, rows in grid order.
pub fn sweep_thresholds(
    episodes: &[Episode],
    cfg: &SspConfig,
    taus_fg: &[f64],
    taus_bg: &[f64],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if taus_fg.is_empty() || taus_bg.is_empty() {
        return Err(HarnessError::InvalidSpec("empty threshold grid".into()));
    }
    let mut rows = Vec::with_capacity(taus_fg.len() * taus_bg.len());
    for &tau_fg in taus_fg {
        for &tau_bg in taus_bg {
            let point = SspConfig {
                tau_fg,
                tau_bg,
                ..cfg.clone()
            };
            let r = evaluate(episodes, &point, Ablation::NoSslMetrics, seed)?;
            rows.push(SweepRow {
                tau_fg,
                tau_bg,
                miou: r.miou,
                in_reference_plateau: in_reference_plateau(tau_fg, tau_bg),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{suite, SyntheticSpec};

    fn small_suite() -> Vec<Episode> {
        let spec = SyntheticSpec {
            height: 10,
            width: 10,
            channels: 8,
            ..SyntheticSpec::default()
        };
        suite(&spec, 6, 1).unwrap()
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::TABLE {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("bogus".parse::<Ablation>().is_err());
        let rows: Vec<_> = Ablation::TABLE.iter().map(|a| a.row_label()).collect();
        assert_eq!(rows, ["baseline", "ssm", "ssm+asbp", "full"]);
    }

    #[test]
    fn miou_is_mean_of_episode_iou() {
        let eps = small_suite();
        let r = evaluate(&eps, &SspConfig::default(), Ablation::Full, 0).unwrap();
        let mean = r.episodes.iter().map(|e| e.iou).sum::<f64>() / eps.len() as f64;
        assert!((r.miou - mean).abs() <= 1e-9);
        assert!(r
            .episodes
            .windows(2)
            .all(|w| w[0].episode_id < w[1].episode_id));
        assert!(r.mean_losses.is_some());
        for e in &r.episodes {
            assert!((0.0..=1.0).contains(&e.iou) && (0.0..=1.0).contains(&e.mae_all));
        }
    }

    #[test]
    fn order_of_input_does_not_matter() {
        let eps = small_suite();
        let mut rev = eps.clone();
        rev.reverse();
        let cfg = SspConfig::default();
        let a = evaluate(&eps, &cfg, Ablation::NoAsbp, 1).unwrap();
        let b = evaluate(&rev, &cfg, Ablation::NoAsbp, 1).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn baseline_rows_have_no_second_stage() {
        let r = evaluate(&small_suite(), &SspConfig::default(), Ablation::NoSsm, 0).unwrap();
        assert!(r.stages.m2.is_none() && r.mean_losses.is_none());
        assert_eq!(r.stages.m1, r.stages.m_final);
    }

    #[test]
    fn plateau_annotation() {
        assert!(in_reference_plateau(0.7, 0.6));
        assert!(in_reference_plateau(0.9, 0.5));
        assert!(!in_reference_plateau(0.6, 0.6));
        assert!(!in_reference_plateau(0.8, 0.8));
    }

    #[test]
    fn single_point_sweep_equals_evaluation() {
        let eps = small_suite();
        let cfg = SspConfig::default();
        let rows = sweep_thresholds(&eps, &cfg, &[0.8], &[0.5], 0).unwrap();
        let point = SspConfig {
            tau_fg: 0.8,
            tau_bg: 0.5,
            ..cfg
        };
        let r = evaluate(&eps, &point, Ablation::Full, 0).unwrap();
        assert_eq!(rows[0].miou, r.miou);
        assert!(sweep_thresholds(&eps, &point, &[], &[0.5], 0).is_err());
    }
}
