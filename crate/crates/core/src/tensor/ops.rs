use super::{
    AffinityMatrix, FeatureMap, Mask, MaskKind, Matrix, Prototype, PrototypeField, Role, ScoreMap,
};
use crate::error::{Result, SspError};

/// Added to the norm product in every cosine so zero columns map to 0.
pub const COSINE_EPS: f64 = 1e-8;

/// Cosine similarity of two equally long sequences, accumulated in `f64`
/// and clamped to `[-1, 1]`.
///
/// Every cosine in the crate goes through this function so that a field
/// made of one repeated prototype scores bit-identically to the prototype.
#[inline]
pub fn cosine_pair(a: impl Iterator<Item = f32>, b: impl Iterator<Item = f32>) -> f64 {
    let (mut dot, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    (dot / (aa.sqrt() * bb.sqrt() + COSINE_EPS)).clamp(-1.0, 1.0)
}

/// Mean of the feature columns weighted by `mask`.
pub fn masked_average_pooling(features: &FeatureMap, mask: &Mask, role: Role) -> Result<Prototype> {
    features.check_mask(mask, "masked_average_pooling")?;
    let weights = mask.data();
    let total: f64 = weights.iter().map(|&m| f64::from(m)).sum();
    if total <= 0.0 {
        return Err(SspError::EmptyMask);
    }
    let pixels = features.pixels();
    let values = (0..features.channels())
        .map(|c| {
            let row = &features.data()[c * pixels..(c + 1) * pixels];
            let acc: f64 = row
                .iter()
                .zip(weights)
                .filter(|(_, &m)| m != 0.0)
                .map(|(&f, &m)| f64::from(f) * f64::from(m))
                .sum();
            (acc / total) as f32
        })
        .collect();
    Prototype::new(role, values)
}

/// Mean of the feature columns at the listed flat pixel indices.
pub fn pool_pixels(features: &FeatureMap, pixels: &[usize], role: Role) -> Result<Prototype> {
    if pixels.is_empty() {
        return Err(SspError::EmptyMask);
    }
    if let Some(&bad) = pixels.iter().find(|&&p| p >= features.pixels()) {
        return Err(SspError::dims(
            "pool_pixels",
            format!("pixel < {}", features.pixels()),
            bad,
        ));
    }
    let n = pixels.len() as f64;
    let values = (0..features.channels())
        .map(|c| {
            let acc: f64 = pixels.iter().map(|&p| f64::from(features.at(c, p))).sum();
            (acc / n) as f32
        })
        .collect();
    Prototype::new(role, values)
}

/// Cosine between one prototype and every feature column.
pub fn cosine_map(prototype: &Prototype, features: &FeatureMap) -> Result<ScoreMap> {
    if prototype.channels() != features.channels() {
        return Err(SspError::dims(
            "cosine_map",
            features.channels(),
            prototype.channels(),
        ));
    }
    if prototype.norm() == 0.0 {
        return Err(SspError::ZeroPrototype { position: None });
    }
    let data = (0..features.pixels())
        .map(|p| {
            let column = (0..features.channels()).map(|c| features.at(c, p));
            cosine_pair(prototype.values().iter().copied(), column) as f32
        })
        .collect();
    ScoreMap::new(features.height(), features.width(), data)
}

/// Pixelwise cosine between a prototype field and the features.
///
/// A zero field column is only an error where the feature column is
/// nonzero; two zero columns score 0.
pub fn cosine_field_map(field: &PrototypeField, features: &FeatureMap) -> Result<ScoreMap> {
    let (c, h, w) = features.dims();
    if (field.channels(), field.height(), field.width()) != (c, h, w) {
        return Err(SspError::dims(
            "cosine_field_map",
            format!("{c}x{h}x{w}"),
            format!("{}x{}x{}", field.channels(), field.height(), field.width()),
        ));
    }
    let mut data = Vec::with_capacity(h * w);
    for p in 0..h * w {
        let field_zero = (0..c).all(|k| field.at(k, p) == 0.0);
        if field_zero && (0..c).any(|k| features.at(k, p) != 0.0) {
            return Err(SspError::ZeroPrototype {
                position: Some((p / w, p % w)),
            });
        }
        let a = (0..c).map(|k| field.at(k, p));
        let b = (0..c).map(|k| features.at(k, p));
        data.push(cosine_pair(a, b) as f32);
    }
    ScoreMap::new(h, w, data)
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Two-way softmax of `(t * fg, t * bg)` at every pixel.
///
/// Returns `(fg_probability, bg_probability)`.
pub fn pairwise_softmax(fg: &ScoreMap, bg: &ScoreMap, temperature: f64) -> Result<(Mask, Mask)> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(SspError::InvalidTemperature(temperature));
    }
    if (fg.height, fg.width) != (bg.height, bg.width) {
        return Err(SspError::dims(
            "pairwise_softmax",
            format!("{}x{}", fg.height, fg.width),
            format!("{}x{}", bg.height, bg.width),
        ));
    }
    let (pf, pb): (Vec<f32>, Vec<f32>) = fg
        .data
        .iter()
        .zip(&bg.data)
        .map(|(&f, &b)| {
            let z = temperature * (f64::from(f) - f64::from(b));
            (sigmoid(z) as f32, sigmoid(-z) as f32)
        })
        .unzip();
    Ok((
        Mask::new(fg.height, fg.width, MaskKind::Probability, pf)?,
        Mask::new(fg.height, fg.width, MaskKind::Probability, pb)?,
    ))
}

/// Dense matrix product with `f64` accumulation.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(SspError::dims(
            "matmul",
            format!("{} rows on the right", a.cols),
            b.rows,
        ));
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = Vec::with_capacity(n * m);
    let mut acc = vec![0.0f64; m];
    for i in 0..n {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..a.cols {
            let aik = f64::from(a.data[i * a.cols + k]);
            if aik == 0.0 {
                continue;
            }
            let row = &b.data[k * m..(k + 1) * m];
            for (slot, &bkj) in acc.iter_mut().zip(row) {
                *slot += aik * f64::from(bkj);
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    Matrix::new(n, m, out)
}

/// Softmax over the first dimension: every column of the result sums to 1.
pub fn column_softmax(scores: &Matrix) -> AffinityMatrix {
    let (rows, cols) = (scores.rows, scores.cols);
    let mut data = vec![0.0f32; rows * cols];
    let mut column = vec![0.0f64; rows];
    for j in 0..cols {
        let max = (0..rows)
            .map(|i| f64::from(scores.get(i, j)))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (i, slot) in column.iter_mut().enumerate() {
            *slot = (f64::from(scores.get(i, j)) - max).exp();
            total += *slot;
        }
        for (i, &v) in column.iter().enumerate() {
            data[i * cols + j] = (v / total) as f32;
        }
    }
    AffinityMatrix { rows, cols, data }
}
