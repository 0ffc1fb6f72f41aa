//! Feature statistics and prototype-quality experiments.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ssp_core::tensor::{cosine_map, cosine_pair, pairwise_softmax, pool_pixels};
use ssp_core::{FeatureMap, Mask, Prototype, Role, SspError};

use crate::episode::Episode;
use crate::error::{HarnessError, Result};
use crate::metrics;

/// Upper bound on sampled pixel pairs per statistic and episode.
pub const MAX_PAIRS: usize = 10_000;

fn episode_rng(seed: u64, episode_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode_id);
    rng
}

/// Mean pixel-pair cosine similarities of one episode or a whole suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairCosines {
    /// Support object pixel vs query object pixel.
    pub fg_cross: Option<f64>,
    /// Two distinct query object pixels.
    pub fg_intra: Option<f64>,
    /// Support background pixel vs query background pixel.
    pub bg_cross: Option<f64>,
    /// Two distinct query background pixels.
    pub bg_intra: Option<f64>,
}

/// Mean with a percentile bootstrap confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub mean: PairCosines,
    /// `fg_intra - fg_cross` over episodes where both exist.
    pub fg_margin: Option<Interval>,
    /// `bg_intra - bg_cross` over episodes where both exist.
    pub bg_margin: Option<Interval>,
    pub per_episode: Vec<(u64, PairCosines)>,
    pub pairs_per_episode: usize,
    pub seed: u64,
}

fn mean_cosine(
    rng: &mut ChaCha8Rng,
    pairs: usize,
    a: &[(&FeatureMap, usize)],
    b: &[(&FeatureMap, usize)],
    distinct: bool,
) -> Option<f64> {
    if a.is_empty() || b.is_empty() || (distinct && a.len() < 2) {
        return None;
    }
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..a.len());
        let mut j = rng.random_range(0..b.len());
        while distinct && j == i {
            j = rng.random_range(0..b.len());
        }
        let ((fa, pa), (fb, pb)) = (a[i], b[j]);
        let c = fa.channels();
        total += cosine_pair((0..c).map(|k| fa.at(k, pa)), (0..c).map(|k| fb.at(k, pb)));
    }
    Some(total / pairs as f64)
}

fn episode_cosines(ep: &Episode, pairs: usize, seed: u64) -> PairCosines {
    let mut rng = episode_rng(seed, ep.episode_id);
    let pixels = |f, m: &Mask| -> Vec<(&FeatureMap, usize)> {
        m.active_pixels().into_iter().map(|p| (f, p)).collect()
    };
    let support_fg: Vec<_> = ep
        .supports
        .iter()
        .flat_map(|s| pixels(&s.features, &s.mask))
        .collect();
    let support_bg: Vec<_> = ep
        .supports
        .iter()
        .flat_map(|s| pixels(&s.features, &s.mask.inverted()))
        .collect();
    let query_fg = pixels(&ep.query, &ep.query_gt);
    let query_bg = pixels(&ep.query, &ep.query_gt.inverted());
    PairCosines {
        fg_cross: mean_cosine(&mut rng, pairs, &support_fg, &query_fg, false),
        fg_intra: mean_cosine(&mut rng, pairs, &query_fg, &query_fg, true),
        bg_cross: mean_cosine(&mut rng, pairs, &support_bg, &query_bg, false),
        bg_intra: mean_cosine(&mut rng, pairs, &query_bg, &query_bg, true),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Percentile bootstrap of the mean: `resamples` draws with replacement,
/// interval at `(1 - level) / 2` and `(1 + level) / 2`.
pub fn bootstrap_mean(values: &[f64], resamples: usize, level: f64, seed: u64) -> Option<Interval> {
    let m = mean(values)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((means.len() - 1) as f64 * q).round() as usize];
    Some(Interval {
        mean: m,
        lower: at((1.0 - level) / 2.0),
        upper: at((1.0 + level) / 2.0),
        samples: n,
    })
}

/// Cross-image versus within-image cosine similarity of object and
/// background pixels.
///
/// Each statistic of each episode averages `pairs` pixel pairs drawn
/// uniformly with replacement (intra pairs never pair a pixel with itself),
/// using a random stream keyed by `seed` and the episode id. Suite means
/// average the per-episode means. Margins carry a 95% bootstrap interval
/// over episodes with 1000 resamples.
pub fn similarity_stats(episodes: &[Episode], pairs: usize, seed: u64) -> SimilarityReport {
    let pairs = pairs.clamp(1, MAX_PAIRS);
    let mut per_episode: Vec<(u64, PairCosines)> = episodes
        .iter()
        .map(|e| (e.episode_id, episode_cosines(e, pairs, seed)))
        .collect();
    per_episode.sort_by_key(|e| e.0);
    let collect = |f: fn(&PairCosines) -> Option<f64>| -> Vec<f64> {
        per_episode.iter().filter_map(|(_, c)| f(c)).collect()
    };
    let margins = |intra: fn(&PairCosines) -> Option<f64>,
                   cross: fn(&PairCosines) -> Option<f64>| {
        per_episode
            .iter()
            .filter_map(|(_, c)| Some(intra(c)? - cross(c)?))
            .collect::<Vec<_>>()
    };
    let fg_margins = margins(|c| c.fg_intra, |c| c.fg_cross);
    let bg_margins = margins(|c| c.bg_intra, |c| c.bg_cross);
    SimilarityReport {
        mean: PairCosines {
            fg_cross: mean(&collect(|c| c.fg_cross)),
            fg_intra: mean(&collect(|c| c.fg_intra)),
            bg_cross: mean(&collect(|c| c.bg_cross)),
            bg_intra: mean(&collect(|c| c.bg_intra)),
        },
        fg_margin: bootstrap_mean(&fg_margins, 1000, 0.95, seed),
        bg_margin: bootstrap_mean(&bg_margins, 1000, 0.95, seed.wrapping_add(1)),
        per_episode,
        pairs_per_episode: pairs,
        seed,
    }
}

/// Which image the partial prototypes are pooled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeSource {
    /// The labelled supports.
    Support,
    /// The query itself, using its ground truth.
    #[serde(rename = "self")]
    SelfSupport,
}

impl std::str::FromStr for PrototypeSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "support" => Ok(PrototypeSource::Support),
            "self" => Ok(PrototypeSource::SelfSupport),
            other => Err(format!("mode must be `support` or `self`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialReport {
    pub object_ratio: f64,
    pub noise_ratio: f64,
    pub mode: PrototypeSource,
    pub seed: u64,
    pub mean_iou: f64,
    pub per_episode: Vec<(u64, f64)>,
}

fn mean_prototype(role: Role, items: &[Prototype]) -> Result<Prototype> {
    let first = items.first().ok_or(SspError::EmptyMask)?;
    let mut acc = vec![0.0f64; first.channels()];
    for p in items {
        acc.iter_mut()
            .zip(p.values())
            .for_each(|(a, &v)| *a += f64::from(v));
    }
    let n = items.len() as f64;
    Ok(Prototype::new(
        role,
        acc.into_iter().map(|a| (a / n) as f32).collect(),
    )?)
}

/// Pixels pooled into one partial foreground prototype: a random
/// `object_ratio` share of the object (at least one pixel), plus background
/// pixels added so they make up about `noise_ratio` of the pooled set (at
/// least one when `noise_ratio > 0` and background exists).
pub fn partial_pixels(
    rng: &mut ChaCha8Rng,
    mask: &Mask,
    object_ratio: f64,
    noise_ratio: f64,
) -> Vec<usize> {
    let object = mask.active_pixels();
    let background = mask.inverted().active_pixels();
    let n = ((object_ratio * object.len() as f64).round() as usize).clamp(1, object.len());
    let mut chosen: Vec<usize> = index::sample(rng, object.len(), n)
        .into_iter()
        .map(|i| object[i])
        .collect();
    if noise_ratio > 0.0 && !background.is_empty() {
        let extra = ((n as f64 * noise_ratio / (1.0 - noise_ratio)).round() as usize)
            .clamp(1, background.len());
        chosen.extend(
            index::sample(rng, background.len(), extra)
                .into_iter()
                .map(|i| background[i]),
        );
    }
    chosen
}

fn check_ratio(name: &'static str, value: f64, ok: bool, range: &'static str) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::InvalidRatio { name, value, range })
    }
}

/// Matches each query with prototypes pooled from a random part of the
/// ground-truth object, taken either from the supports or from the query
/// itself, optionally contaminated with background pixels.
///
/// The background prototype is pooled from the full ground-truth background
/// of the same images. With several supports, prototypes are averaged.
pub fn partial_prototype_experiment(
    episodes: &[Episode],
    object_ratio: f64,
    noise_ratio: f64,
    mode: PrototypeSource,
    seed: u64,
) -> Result<PartialReport> {
    check_ratio(
        "object_ratio",
        object_ratio,
        object_ratio > 0.0 && object_ratio <= 1.0,
        "(0, 1]",
    )?;
    check_ratio(
        "noise_ratio",
        noise_ratio,
        (0.0..1.0).contains(&noise_ratio),
        "[0, 1)",
    )?;
    let mut per_episode = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let mut rng = episode_rng(seed, ep.episode_id);
        let sources: Vec<(&FeatureMap, &Mask)> = match mode {
            PrototypeSource::Support => {
                ep.supports.iter().map(|s| (&s.features, &s.mask)).collect()
            }
            PrototypeSource::SelfSupport => vec![(&ep.query, &ep.query_gt)],
        };
        let mut fgs = Vec::new();
        let mut bgs = Vec::new();
        for (f, m) in sources {
            let picked = partial_pixels(&mut rng, m, object_ratio, noise_ratio);
            fgs.push(pool_pixels(f, &picked, Role::Foreground)?);
            let bg = m.inverted().active_pixels();
            if !bg.is_empty() {
                bgs.push(pool_pixels(f, &bg, Role::Background)?);
            }
        }
        let fg = mean_prototype(Role::Foreground, &fgs)?;
        let bg = mean_prototype(Role::Background, &bgs)?;
        let (pred, _) = pairwise_softmax(
            &cosine_map(&fg, &ep.query)?,
            &cosine_map(&bg, &ep.query)?,
            1.0,
        )?;
        per_episode.push((ep.episode_id, metrics::iou(&pred, &ep.query_gt)));
    }
    per_episode.sort_by_key(|e| e.0);
    let mean_iou = mean(&per_episode.iter().map(|e| e.1).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    Ok(PartialReport {
        object_ratio,
        noise_ratio,
        mode,
        seed,
        mean_iou,
        per_episode,
    })
}

/// Filled tight bounding box of the foreground.
pub fn weak_label_bbox(mask: &Mask) -> Result<Mask, SspError> {
    let w = mask.width();
    let active = mask.active_pixels();
    if active.is_empty() {
        return Err(SspError::EmptyMask);
    }
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for p in active {
        let (y, x) = (p / w, p % w);
        y0 = y0.min(y);
        y1 = y1.max(y);
        x0 = x0.min(x);
        x1 = x1.max(x);
    }
    Mask::from_fn(mask.height(), w, |y, x| {
        (y0..=y1).contains(&y) && (x0..=x1).contains(&x)
    })
}

/// The episode with every support mask replaced by its bounding box.
pub fn with_box_supports(episode: &Episode) -> Result<Episode> {
    let supports = episode
        .supports
        .iter()
        .map(|s| {
            Ok(ssp_core::Shot::new(
                s.features.clone(),
                weak_label_bbox(&s.mask)?,
            )?)
        })
        .collect::<Result<Vec<_>>>()?;
    Episode::new(
        supports,
        episode.query.clone(),
        episode.query_gt.clone(),
        episode.class_id,
        episode.episode_id,
    )
}
