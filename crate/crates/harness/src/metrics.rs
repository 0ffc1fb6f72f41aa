//! Per-episode segmentation metrics on the foreground probability channel.

use serde::Serialize;
use ssp_core::Mask;

/// Foreground probabilities strictly above this count as predicted object.
pub const BINARIZE_AT: f32 = 0.5;

fn predicted(p: f32) -> bool {
    p > BINARIZE_AT
}

fn truth(g: f32) -> bool {
    g >= 0.5
}

/// Intersection over union of the binarized prediction and the ground
/// truth. Both empty counts as a perfect match.
pub fn iou(pred_fg: &Mask, gt: &Mask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred_fg.data().iter().zip(gt.data()) {
        let (p, g) = (predicted(p), truth(g));
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean absolute error between the soft prediction and the ground truth.
pub fn mae_all(pred_fg: &Mask, gt: &Mask) -> f64 {
    let total: f64 = pred_fg
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (f64::from(p) - f64::from(g)).abs())
        .sum();
    total / pred_fg.pixels() as f64
}

/// Mean absolute error over true-positive pixels (object in the ground
/// truth and predicted as object). `None` if there are none.
pub fn mae_tp(pred_fg: &Mask, gt: &Mask) -> Option<f64> {
    let (sum, n) = pred_fg
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(&p, &g)| predicted(p) && truth(g))
        .fold((0.0, 0usize), |(s, n), (&p, &g)| {
            (s + (f64::from(p) - f64::from(g)).abs(), n + 1)
        });
    (n > 0).then(|| sum / n as f64)
}

/// IoU and MAE of one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub iou: f64,
    pub mae_all: f64,
    pub mae_tp: Option<f64>,
}

impl Scores {
    pub fn of(pred_fg: &Mask, gt: &Mask) -> Self {
        Self {
            iou: iou(pred_fg, gt),
            mae_all: mae_all(pred_fg, gt),
            mae_tp: mae_tp(pred_fg, gt),
        }
    }
}

/// Means over a set of [`Scores`]; `mae_tp` averages only the episodes
/// that have a true-positive region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanScores {
    pub miou: f64,
    pub mae_all: f64,
    pub mae_tp: Option<f64>,
    pub tp_episodes: usize,
}

impl MeanScores {
    pub fn of<'a>(scores: impl IntoIterator<Item = &'a Scores>) -> Option<Self> {
        let (mut n, mut iou, mut mae, mut tp, mut tp_n) = (0usize, 0.0, 0.0, 0.0, 0usize);
        for s in scores {
            n += 1;
            iou += s.iou;
            mae += s.mae_all;
            if let Some(v) = s.mae_tp {
                tp += v;
                tp_n += 1;
            }
        }
        (n > 0).then(|| Self {
            miou: iou / n as f64,
            mae_all: mae / n as f64,
            mae_tp: (tp_n > 0).then(|| tp / tp_n as f64),
            tp_episodes: tp_n,
        })
    }
}
