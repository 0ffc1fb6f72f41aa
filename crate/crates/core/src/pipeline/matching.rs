use super::{
    Diagnostics, EmptyMaskFallback, MatchResult, MatchVariant, Prediction, PrototypeSet, Selection,
    SelectionStats, Shot, SspConfig, StageScores,
};
use crate::error::{Result, SspError};
use crate::tensor::{
    column_softmax, cosine_field_map, cosine_map, masked_average_pooling, matmul, pairwise_softmax,
    pool_pixels, AffinityMatrix, FeatureMap, Mask, Prototype, PrototypeField, Role,
};

/// Output of support-only matching.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineMatch {
    pub m1: Prediction,
    pub scores: StageScores,
    pub fg_support: Prototype,
    pub bg_support: Prototype,
}

/// Output of the refinement pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub m3: Prediction,
    pub scores: StageScores,
    pub m_final: Prediction,
    pub fg_refined: Option<Prototype>,
    pub bg_refined: Option<PrototypeField>,
    pub stats: SelectionStats,
}

fn mean_prototype(role: Role, prototypes: &[Prototype]) -> Result<Prototype> {
    let first = prototypes.first().ok_or(SspError::EmptyMask)?;
    if prototypes.len() == 1 {
        return Prototype::new(role, first.values().to_vec());
    }
    let n = prototypes.len() as f64;
    let values = (0..first.channels())
        .map(|c| {
            let s: f64 = prototypes.iter().map(|p| f64::from(p.values()[c])).sum();
            (s / n) as f32
        })
        .collect();
    Prototype::new(role, values)
}

/// Foreground and background support prototypes, pooled per shot and
/// averaged uniformly over shots.
///
/// A shot whose mask covers the whole image contributes no background
/// prototype; if no shot has background pixels the result is `EmptyMask`.
pub fn support_prototypes(supports: &[Shot]) -> Result<(Prototype, Prototype)> {
    if supports.is_empty() {
        return Err(SspError::NoSupport);
    }
    let channels = supports[0].features.channels();
    let mut fg = Vec::with_capacity(supports.len());
    let mut bg = Vec::with_capacity(supports.len());
    for shot in supports {
        if shot.features.channels() != channels {
            return Err(SspError::dims(
                "support_prototypes",
                channels,
                shot.features.channels(),
            ));
        }
        fg.push(masked_average_pooling(
            &shot.features,
            &shot.mask,
            Role::Foreground,
        )?);
        match masked_average_pooling(&shot.features, &shot.mask.inverted(), Role::Background) {
            Ok(p) => bg.push(p),
            Err(SspError::EmptyMask) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((
        mean_prototype(Role::Foreground, &fg)?,
        mean_prototype(Role::Background, &bg)?,
    ))
}

/// Support-prototype matching: `m1 = softmax(cosine(P_s, F_q))`.
pub fn baseline_match(
    supports: &[Shot],
    query: &FeatureMap,
    cfg: &SspConfig,
) -> Result<BaselineMatch> {
    let (fg_support, bg_support) = support_prototypes(supports)?;
    if fg_support.channels() != query.channels() {
        return Err(SspError::dims(
            "baseline_match",
            query.channels(),
            fg_support.channels(),
        ));
    }
    let scores = StageScores {
        fg: cosine_map(&fg_support, query)?,
        bg: cosine_map(&bg_support, query)?,
    };
    let (fg, bg) = pairwise_softmax(&scores.fg, &scores.bg, cfg.temperature)?;
    Ok(BaselineMatch {
        m1: Prediction { fg, bg },
        scores,
        fg_support,
        bg_support,
    })
}

/// Confident foreground (`p_fg > tau_fg`) and background
/// (`1 - p_fg > tau_bg`) estimates.
pub fn threshold_select(fg_probability: &Mask, cfg: &SspConfig) -> (Mask, Mask) {
    let fg = fg_probability.above(cfg.tau_fg);
    let bits: Vec<bool> = fg_probability
        .data()
        .iter()
        .map(|&p| 1.0 - f64::from(p) > cfg.tau_bg)
        .collect();
    let bg = Mask::from_bools(fg_probability.height(), fg_probability.width(), &bits)
        .expect("dimensions come from a valid mask");
    (fg, bg)
}

/// Indices of the `k` most confident pixels, ties broken by lower index.
fn top_k_pixels(confidence: &Mask, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidence.pixels()).collect();
    let data = confidence.data();
    order.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
    order.truncate(k.min(order.len()));
    order
}

/// Pixels to pool from: the estimate if nonempty, else whatever the
/// fallback prescribes.
fn selected_pixels(
    estimate: &Mask,
    confidence: &Mask,
    fallback: EmptyMaskFallback,
) -> (Vec<usize>, Selection) {
    let pixels = estimate.active_pixels();
    if !pixels.is_empty() {
        return (pixels, Selection::Threshold);
    }
    match fallback {
        EmptyMaskFallback::SupportOnly => (pixels, Selection::Absent),
        EmptyMaskFallback::TopK(k) => (top_k_pixels(confidence, k), Selection::TopK),
    }
}

/// Self-support foreground prototype: masked average pooling of the query
/// over its own confident foreground estimate.
///
/// `confidence` is the foreground probability the estimate was cut from;
/// it ranks pixels for the top-k fallback.
pub fn self_support_fg(
    query: &FeatureMap,
    fg_estimate: &Mask,
    confidence: &Mask,
    fallback: EmptyMaskFallback,
) -> Result<(Option<Prototype>, Selection)> {
    query.check_mask(fg_estimate, "self_support_fg")?;
    query.check_mask(confidence, "self_support_fg")?;
    let (pixels, source) = selected_pixels(fg_estimate, confidence, fallback);
    if pixels.is_empty() {
        return Ok((None, Selection::Absent));
    }
    Ok((Some(pool_pixels(query, &pixels, Role::Foreground)?), source))
}

/// Softmax-normalized affinity between the selected background pixels
/// (rows) and every query pixel (columns).
pub fn affinity(query: &FeatureMap, bg_pixels: &[usize]) -> Result<AffinityMatrix> {
    if bg_pixels.is_empty() {
        return Err(SspError::EmptyMask);
    }
    let selected = query.gather_columns(bg_pixels);
    let logits = matmul(&selected.transpose(), &query.as_matrix())?;
    Ok(column_softmax(&logits))
}

fn aggregate_background(query: &FeatureMap, bg_pixels: &[usize]) -> Result<PrototypeField> {
    let weights = affinity(query, bg_pixels)?;
    let selected = query.gather_columns(bg_pixels);
    let field = matmul(&selected, &weights.as_matrix())?;
    PrototypeField::new(query.channels(), query.height(), query.width(), field.data)
}

/// Adaptive background prototype field: every query pixel aggregates the
/// background-estimate features weighted by a softmax over their dot
/// products with it.
pub fn adaptive_bg_prototype(query: &FeatureMap, bg_estimate: &Mask) -> Result<PrototypeField> {
    query.check_mask(bg_estimate, "adaptive_bg_prototype")?;
    aggregate_background(query, &bg_estimate.active_pixels())
}

/// Self-support background prototype with fallback handling. With
/// `adaptive == false` the selection is pooled into a single vector and
/// broadcast.
pub fn self_support_bg(
    query: &FeatureMap,
    bg_estimate: &Mask,
    confidence: &Mask,
    fallback: EmptyMaskFallback,
    adaptive: bool,
) -> Result<(Option<PrototypeField>, Selection)> {
    query.check_mask(bg_estimate, "self_support_bg")?;
    query.check_mask(confidence, "self_support_bg")?;
    let (pixels, source) = selected_pixels(bg_estimate, confidence, fallback);
    if pixels.is_empty() {
        return Ok((None, Selection::Absent));
    }
    let field = if adaptive {
        aggregate_background(query, &pixels)?
    } else {
        let pooled = pool_pixels(query, &pixels, Role::Background)?;
        PrototypeField::broadcast(&pooled, query.height(), query.width())?
    };
    Ok((Some(field), source))
}

/// Rescales the weights of present terms so they keep the configured
/// total; `None` if nothing with positive weight is left.
fn present_weights(terms: &[(f64, bool)]) -> Option<Vec<f64>> {
    let total: f64 = terms.iter().map(|t| t.0).sum();
    let present: f64 = terms.iter().filter(|t| t.1).map(|t| t.0).sum();
    if terms.iter().all(|t| t.1) {
        return Some(terms.iter().map(|t| t.0).collect());
    }
    if present <= 0.0 {
        return None;
    }
    Some(
        terms
            .iter()
            .map(|&(w, on)| if on { w * total / present } else { 0.0 })
            .collect(),
    )
}

fn combine_vectors(role: Role, terms: &[(f64, Option<&Prototype>)]) -> Result<Prototype> {
    let present: Vec<(f64, &Prototype)> = {
        let flags: Vec<(f64, bool)> = terms.iter().map(|(w, p)| (*w, p.is_some())).collect();
        let weights = present_weights(&flags).ok_or(SspError::ZeroPrototype { position: None })?;
        terms
            .iter()
            .zip(weights)
            .filter_map(|((_, p), w)| p.map(|p| (w, p)))
            .collect()
    };
    if let [(_, only)] = present.as_slice() {
        return Prototype::new(role, only.values().to_vec());
    }
    let channels = present[0].1.channels();
    if let Some((_, bad)) = present.iter().find(|(_, p)| p.channels() != channels) {
        return Err(SspError::dims("blend", channels, bad.channels()));
    }
    let values = (0..channels)
        .map(|c| {
            present
                .iter()
                .map(|(w, p)| w * f64::from(p.values()[c]))
                .sum::<f64>() as f32
        })
        .collect();
    Prototype::new(role, values)
}

fn combine_field(
    support: (f64, &Prototype),
    fields: &[(f64, Option<&PrototypeField>)],
    height: usize,
    width: usize,
) -> Result<PrototypeField> {
    let mut flags = vec![(support.0, true)];
    flags.extend(fields.iter().map(|(w, f)| (*w, f.is_some())));
    let weights = present_weights(&flags).ok_or(SspError::ZeroPrototype { position: None })?;
    let present: Vec<(f64, &PrototypeField)> = fields
        .iter()
        .zip(&weights[1..])
        .filter_map(|((_, f), &w)| f.map(|f| (w, f)))
        .collect();
    let vector = support.1;
    if present.is_empty() {
        return PrototypeField::broadcast(vector, height, width);
    }
    let channels = vector.channels();
    for (_, f) in &present {
        if (f.channels(), f.height(), f.width()) != (channels, height, width) {
            return Err(SspError::dims(
                "blend",
                format!("{channels}x{height}x{width}"),
                format!("{}x{}x{}", f.channels(), f.height(), f.width()),
            ));
        }
    }
    let pixels = height * width;
    let mut data = Vec::with_capacity(channels * pixels);
    for c in 0..channels {
        let base = weights[0] * f64::from(vector.values()[c]);
        for p in 0..pixels {
            let v = present
                .iter()
                .fold(base, |acc, (w, f)| acc + w * f64::from(f.at(c, p)));
            data.push(v as f32);
        }
    }
    PrototypeField::new(channels, height, width, data)
}

/// `fg* = a1 * P_s,f + a2 * P_q,f` and `bg* = a1 * P_s,b + a2 * P*_q,b`,
/// the support background vector broadcast over the field. Absent
/// self-support members hand their weight to the present ones.
pub fn blend_prototypes(
    ps: &PrototypeSet,
    height: usize,
    width: usize,
    cfg: &SspConfig,
) -> Result<(Prototype, PrototypeField)> {
    let fg = combine_vectors(
        Role::Foreground,
        &[
            (cfg.alpha1, Some(&ps.fg_support)),
            (cfg.alpha2, ps.fg_self.as_ref()),
        ],
    )?;
    let bg = combine_field(
        (cfg.alpha1, &ps.bg_support),
        &[(cfg.alpha2, ps.bg_self.as_ref())],
        height,
        width,
    )?;
    Ok((fg, bg))
}

/// `m2 = softmax(cosine(fg*, F_q), cosine(bg*, F_q))`.
pub fn final_match(
    query: &FeatureMap,
    fg_star: &Prototype,
    bg_star: &PrototypeField,
    cfg: &SspConfig,
) -> Result<(Prediction, StageScores)> {
    let scores = StageScores {
        fg: cosine_map(fg_star, query)?,
        bg: cosine_field_map(bg_star, query)?,
    };
    let (fg, bg) = pairwise_softmax(&scores.fg, &scores.bg, cfg.temperature)?;
    Ok((Prediction { fg, bg }, scores))
}

fn self_support_pass(
    query: &FeatureMap,
    prediction: &Prediction,
    cfg: &SspConfig,
    adaptive: bool,
) -> Result<(Option<Prototype>, Option<PrototypeField>, SelectionStats)> {
    let (fg_est, bg_est) = threshold_select(&prediction.fg, cfg);
    let (fg, fg_source) = self_support_fg(query, &fg_est, &prediction.fg, cfg.empty_mask_fallback)?;
    let (bg, bg_source) = self_support_bg(
        query,
        &bg_est,
        &prediction.bg,
        cfg.empty_mask_fallback,
        adaptive,
    )?;
    let stats = SelectionStats {
        fg_selected: fg_est.count_active(),
        bg_selected: bg_est.count_active(),
        fg_source,
        bg_source,
    };
    Ok((fg, bg, stats))
}

/// Second self-support pass seeded by `m2`.
///
/// Rebuilds the self-support prototypes from thresholded `m2`, blends
/// support, first-pass and refined prototypes with the `refine_alpha`
/// weights, matches again for `m3` and returns
/// `m_final = beta1 * m2 + beta2 * m3`.
pub fn refine(
    query: &FeatureMap,
    m2: &Prediction,
    ps: &PrototypeSet,
    cfg: &SspConfig,
    adaptive: bool,
) -> Result<Refinement> {
    let (fg_refined, bg_refined, stats) = self_support_pass(query, m2, cfg, adaptive)?;
    let fg = combine_vectors(
        Role::Foreground,
        &[
            (cfg.refine_alpha1, Some(&ps.fg_support)),
            (cfg.refine_alpha2, ps.fg_self.as_ref()),
            (cfg.refine_alpha3, fg_refined.as_ref()),
        ],
    )?;
    let bg = combine_field(
        (cfg.refine_alpha1, &ps.bg_support),
        &[
            (cfg.refine_alpha2, ps.bg_self.as_ref()),
            (cfg.refine_alpha3, bg_refined.as_ref()),
        ],
        query.height(),
        query.width(),
    )?;
    let (m3, scores) = final_match(query, &fg, &bg, cfg)?;
    let m_final = Prediction::weighted_sum(m2, cfg.beta1, &m3, cfg.beta2)?;
    Ok(Refinement {
        m3,
        scores,
        m_final,
        fg_refined,
        bg_refined,
        stats,
    })
}

/// Runs the whole matcher on one query.
pub fn match_episode(
    supports: &[Shot],
    query: &FeatureMap,
    cfg: &SspConfig,
    variant: MatchVariant,
) -> Result<MatchResult> {
    cfg.validate()?;
    let base = baseline_match(supports, query, cfg)?;
    let mut prototypes = PrototypeSet::from_support(base.fg_support, base.bg_support);

    let adaptive = match variant {
        MatchVariant::Baseline => {
            return Ok(MatchResult {
                m_final: base.m1.clone(),
                m1: base.m1,
                m2: None,
                m3: None,
                d1: base.scores,
                d2: None,
                d3: None,
                prototypes,
                fg_star: None,
                bg_star: None,
                diagnostics: Diagnostics::default(),
            });
        }
        MatchVariant::SelfSupport { adaptive_bg } => adaptive_bg,
    };

    let (fg_self, bg_self, first_pass) = self_support_pass(query, &base.m1, cfg, adaptive)?;
    prototypes.fg_self = fg_self;
    prototypes.bg_self = bg_self;

    let (fg_star, bg_star) = blend_prototypes(&prototypes, query.height(), query.width(), cfg)?;
    let (m2, d2) = final_match(query, &fg_star, &bg_star, cfg)?;

    let mut diagnostics = Diagnostics {
        first_pass: Some(first_pass),
        refinement: None,
    };
    let (m3, d3, m_final) = if cfg.refine {
        let r = refine(query, &m2, &prototypes, cfg, adaptive)?;
        prototypes.fg_refined = r.fg_refined;
        prototypes.bg_refined = r.bg_refined;
        diagnostics.refinement = Some(r.stats);
        (Some(r.m3), Some(r.scores), r.m_final)
    } else {
        (None, None, m2.clone())
    };

    Ok(MatchResult {
        m1: base.m1,
        m2: Some(m2),
        m3,
        m_final,
        d1: base.scores,
        d2: Some(d2),
        d3,
        prototypes,
        fg_star: Some(fg_star),
        bg_star: Some(bg_star),
        diagnostics,
    })
}
