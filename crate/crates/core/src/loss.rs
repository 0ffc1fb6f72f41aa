//! Matching and self-matching losses.
//!
//! Cosine scores are treated as a two-way logit pair: the foreground
//! probability is `sigmoid(t * (cos_fg - cos_bg))`, and the loss is the
//! binary cross entropy of that probability against a binary target,
//! averaged over pixels. Everything is evaluated in `f64`.

use crate::error::{Result, SspError};
use crate::pipeline::{Shot, SspConfig};
use crate::tensor::{
    cosine_field_map, masked_average_pooling, FeatureMap, Mask, Prototype, PrototypeField, Role,
    COSINE_EPS,
};

/// `f64` gradient with the layout of a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GradientMap {
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cosine of `a` against `x` and its gradient with respect to `x`.
/// Gradient is zero where the value was clamped.
fn cosine_and_grad(a: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
    let dot: f64 = a.iter().zip(x).map(|(u, v)| u * v).sum();
    let na = a.iter().map(|u| u * u).sum::<f64>().sqrt();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = na * nx + COSINE_EPS;
    let raw = dot / denom;
    if !(-1.0..=1.0).contains(&raw) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        return raw.clamp(-1.0, 1.0);
    }
    for ((g, &ak), &xk) in grad.iter_mut().zip(a).zip(x) {
        let radial = if nx > 0.0 {
            dot * na * xk / (nx * denom * denom)
        } else {
            0.0
        };
        *g = ak / denom - radial;
    }
    raw
}

fn check_inputs(
    fg: &Prototype,
    bg: &PrototypeField,
    features: &FeatureMap,
    target: &Mask,
) -> Result<()> {
    features.check_mask(target, "loss")?;
    if fg.channels() != features.channels() {
        return Err(SspError::dims("loss", features.channels(), fg.channels()));
    }
    if fg.norm() == 0.0 {
        return Err(SspError::ZeroPrototype { position: None });
    }
    // shape and zero-column checks live in the map kernel
    cosine_field_map(bg, features).map(|_| ())
}

fn column(data_at: impl Fn(usize) -> f32, channels: usize) -> Vec<f64> {
    (0..channels).map(|c| f64::from(data_at(c))).collect()
}

/// Per-pixel logit `t * (cos_fg - cos_bg)`; also fills the logit gradient
/// per channel when `grad` is given.
fn logits(
    fg: &Prototype,
    bg: &PrototypeField,
    features: &FeatureMap,
    temperature: f64,
    mut grad: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    let channels = features.channels();
    let pixels = features.pixels();
    let a: Vec<f64> = fg.values().iter().map(|&v| f64::from(v)).collect();
    let mut gf = vec![0.0; channels];
    let mut gb = vec![0.0; channels];
    (0..pixels)
        .map(|p| {
            let x = column(|c| features.at(c, p), channels);
            let b = column(|c| bg.at(c, p), channels);
            let cf = cosine_and_grad(&a, &x, &mut gf);
            let cb = cosine_and_grad(&b, &x, &mut gb);
            if let Some(g) = grad.as_deref_mut() {
                for c in 0..channels {
                    g[c * pixels + p] = temperature * (gf[c] - gb[c]);
                }
            }
            temperature * (cf - cb)
        })
        .collect()
}

/// Matching loss: BCE of the two-way softmax of the fg/bg cosine maps
/// against the query ground truth.
pub fn loss_matching(
    fg_star: &Prototype,
    bg_star: &PrototypeField,
    query: &FeatureMap,
    gt: &Mask,
    temperature: f64,
) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(SspError::InvalidTemperature(temperature));
    }
    check_inputs(fg_star, bg_star, query, gt)?;
    let z = logits(fg_star, bg_star, query, temperature, None);
    let total: f64 = z
        .iter()
        .zip(gt.data())
        .map(|(&z, &y)| {
            let y = f64::from(y);
            y * softplus(-z) + (1.0 - y) * softplus(z)
        })
        .sum();
    Ok(total / z.len() as f64)
}

/// Self-matching loss of a feature map against prototypes derived from
/// itself. Same form as [`loss_matching`].
pub fn loss_self(
    fg: &Prototype,
    bg: &PrototypeField,
    features: &FeatureMap,
    gt: &Mask,
    temperature: f64,
) -> Result<f64> {
    loss_matching(fg, bg, features, gt, temperature)
}

/// Support self-matching loss: the shot's own ground-truth prototypes
/// matched back onto the shot. `None` when the mask covers the whole image
/// (no background prototype exists).
pub fn support_self_loss(shot: &Shot, temperature: f64) -> Result<Option<f64>> {
    let fg = masked_average_pooling(&shot.features, &shot.mask, Role::Foreground)?;
    let bg = match masked_average_pooling(&shot.features, &shot.mask.inverted(), Role::Background) {
        Ok(p) => p,
        Err(SspError::EmptyMask) => return Ok(None),
        Err(e) => return Err(e),
    };
    let field = PrototypeField::broadcast(&bg, shot.features.height(), shot.features.width())?;
    loss_self(&fg, &field, &shot.features, &shot.mask, temperature).map(Some)
}

/// `lambda1 * lm + lambda2 * lq + lambda3 * ls`.
pub fn loss_total(lm: f64, lq: f64, ls: f64, cfg: &SspConfig) -> f64 {
    cfg.lambda1 * lm + cfg.lambda2 * lq + cfg.lambda3 * ls
}

/// Gradient of [`loss_matching`] with respect to the query features, the
/// prototypes held fixed.
pub fn loss_grad_query(
    fg_star: &Prototype,
    bg_star: &PrototypeField,
    query: &FeatureMap,
    gt: &Mask,
    temperature: f64,
) -> Result<GradientMap> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(SspError::InvalidTemperature(temperature));
    }
    check_inputs(fg_star, bg_star, query, gt)?;
    let (channels, height, width) = query.dims();
    let pixels = height * width;
    let mut data = vec![0.0; channels * pixels];
    let z = logits(fg_star, bg_star, query, temperature, Some(&mut data));
    let n = pixels as f64;
    for (p, (&z, &y)) in z.iter().zip(gt.data()).enumerate() {
        let dz = (sigmoid(z) - f64::from(y)) / n;
        for c in 0..channels {
            data[c * pixels + p] *= dz;
        }
    }
    Ok(GradientMap {
        channels,
        height,
        width,
        data,
    })
}
