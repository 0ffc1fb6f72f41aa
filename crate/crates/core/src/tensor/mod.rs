//! Dense tensor types and the kernels built on them.
//!
//! All spatial data is row-major: feature maps are laid out `[c][h][w]`,
//! masks and score maps `[h][w]`. A pixel index `p` is `h * width + w`.

mod ops;

pub use ops::{
    column_softmax, cosine_field_map, cosine_map, cosine_pair, masked_average_pooling, matmul,
    pairwise_softmax, pool_pixels, COSINE_EPS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SspError};

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.contains(&0) {
        return Err(SspError::ZeroDimension(format!("{dims:?}")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| SspError::ZeroDimension(format!("{dims:?} overflows")))
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(SspError::NonFinite {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}

/// A `C x H x W` feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let len = check_dims(&[channels, height, width])?;
        if data.len() != len {
            return Err(SspError::LengthMismatch {
                expected: len,
                found: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let len = check_dims(&[channels, height, width])?;
        let mut data = Vec::with_capacity(len);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..width {
                    data.push(f(c, h, w));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Builds a map from per-pixel feature columns, `columns[p]` being the
    /// `C`-vector at pixel `p`.
    pub fn from_columns(height: usize, width: usize, columns: &[Vec<f32>]) -> Result<Self> {
        let pixels = check_dims(&[height, width])?;
        if columns.len() != pixels {
            return Err(SspError::LengthMismatch {
                expected: pixels,
                found: columns.len(),
            });
        }
        let channels = columns[0].len();
        if let Some(bad) = columns.iter().find(|c| c.len() != channels) {
            return Err(SspError::dims("from_columns", channels, bad.len()));
        }
        Self::from_fn(channels, height, width, |c, h, w| columns[h * width + w][c])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f32 {
        self.data[(c * self.height + h) * self.width + w]
    }

    /// Value of channel `c` at flat pixel index `p`.
    #[inline]
    pub fn at(&self, c: usize, p: usize) -> f32 {
        self.data[c * self.pixels() + p]
    }

    pub fn column(&self, p: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.at(c, p)).collect()
    }

    /// Same data viewed as a `C x HW` matrix.
    pub fn as_matrix(&self) -> Matrix {
        Matrix {
            rows: self.channels,
            cols: self.pixels(),
            data: self.data.clone(),
        }
    }

    /// Gathers the feature columns at `pixels` into a `C x M` matrix.
    pub fn gather_columns(&self, pixels: &[usize]) -> Matrix {
        let m = pixels.len();
        let mut data = Vec::with_capacity(self.channels * m);
        for c in 0..self.channels {
            data.extend(pixels.iter().map(|&p| self.at(c, p)));
        }
        Matrix {
            rows: self.channels,
            cols: m,
            data,
        }
    }

    pub fn check_mask(&self, mask: &Mask, op: &'static str) -> Result<()> {
        if (mask.height, mask.width) != (self.height, self.width) {
            return Err(SspError::dims(
                op,
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", mask.height, mask.width),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Binary,
    Probability,
}

impl MaskKind {
    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Binary => "binary",
            MaskKind::Probability => "probability",
        }
    }
}

/// An `H x W` map of either hard labels (`{0, 1}`) or probabilities (`[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    kind: MaskKind,
    data: Vec<f32>,
}

impl Mask {
    pub fn new(height: usize, width: usize, kind: MaskKind, data: Vec<f32>) -> Result<Self> {
        let len = check_dims(&[height, width])?;
        if data.len() != len {
            return Err(SspError::LengthMismatch {
                expected: len,
                found: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            let ok = match kind {
                MaskKind::Binary => value == 0.0 || value == 1.0,
                MaskKind::Probability => (0.0..=1.0).contains(&value),
            };
            if !ok {
                return Err(SspError::InvalidMaskValue {
                    index,
                    value,
                    kind: kind.name(),
                });
            }
        }
        Ok(Self {
            height,
            width,
            kind,
            data,
        })
    }

    pub fn from_bools(height: usize, width: usize, bits: &[bool]) -> Result<Self> {
        let data = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::new(height, width, MaskKind::Binary, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        check_dims(&[height, width])?;
        let bits: Vec<bool> = (0..height)
            .flat_map(|h| (0..width).map(move |w| (h, w)))
            .map(|(h, w)| f(h, w))
            .collect();
        Self::from_bools(height, width, &bits)
    }

    /// Binary mask with the given flat pixel indices set.
    pub fn from_pixels(height: usize, width: usize, pixels: &[usize]) -> Result<Self> {
        let len = check_dims(&[height, width])?;
        let mut bits = vec![false; len];
        for &p in pixels {
            if p >= len {
                return Err(SspError::dims("from_pixels", format!("< {len}"), p));
            }
            bits[p] = true;
        }
        Self::from_bools(height, width, &bits)
    }

    pub fn filled(height: usize, width: usize, kind: MaskKind, value: f32) -> Result<Self> {
        let len = check_dims(&[height, width])?;
        Self::new(height, width, kind, vec![value; len])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f32 {
        self.data[h * self.width + w]
    }

    #[inline]
    pub fn is_set(&self, p: usize) -> bool {
        self.data[p] > 0.0
    }

    /// Flat indices of nonzero pixels, ascending.
    pub fn active_pixels(&self) -> Vec<usize> {
        (0..self.data.len()).filter(|&p| self.is_set(p)).collect()
    }

    pub fn count_active(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    /// Complement of a binary mask.
    pub fn inverted(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            kind: MaskKind::Binary,
            data: self
                .data
                .iter()
                .map(|&v| if v > 0.0 { 0.0 } else { 1.0 })
                .collect(),
        }
    }

    /// Binary mask of pixels strictly above `threshold`.
    pub fn above(&self, threshold: f64) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            kind: MaskKind::Binary,
            data: self
                .data
                .iter()
                .map(|&v| if f64::from(v) > threshold { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Raw per-pixel similarity scores, e.g. a cosine distance map in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let len = check_dims(&[height, width])?;
        if data.len() != len {
            return Err(SspError::LengthMismatch {
                expected: len,
                found: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        let len = check_dims(&[height, width])?;
        Self::new(height, width, vec![value; len])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Foreground,
    Background,
}

/// A single `C`-vector class representative.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub role: Role,
    values: Vec<f32>,
}

impl Prototype {
    pub fn new(role: Role, values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(SspError::ZeroDimension("prototype with 0 channels".into()));
        }
        check_finite(&values)?;
        Ok(Self { role, values })
    }

    pub fn channels(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, factor: f32) -> Prototype {
        Prototype {
            role: self.role,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// One prototype per spatial position, stored `C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeField {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl PrototypeField {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let len = check_dims(&[channels, height, width])?;
        if data.len() != len {
            return Err(SspError::LengthMismatch {
                expected: len,
                found: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// The same prototype repeated at every position.
    pub fn broadcast(prototype: &Prototype, height: usize, width: usize) -> Result<Self> {
        let pixels = check_dims(&[height, width])?;
        let mut data = Vec::with_capacity(prototype.channels() * pixels);
        for &v in prototype.values() {
            data.extend(std::iter::repeat_n(v, pixels));
        }
        Self::new(prototype.channels(), height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, c: usize, p: usize) -> f32 {
        self.data[c * self.pixels() + p]
    }

    pub fn column(&self, p: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.at(c, p)).collect()
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let len = check_dims(&[rows, cols])?;
        if data.len() != len {
            return Err(SspError::LengthMismatch {
                expected: len,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            data.extend((0..self.rows).map(|r| self.get(r, c)));
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// Affinity between `M` selected pixels (rows) and all `HW` pixels (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl AffinityMatrix {
    pub fn column_sum(&self, col: usize) -> f64 {
        (0..self.rows)
            .map(|r| f64::from(self.data[r * self.cols + col]))
            .sum()
    }

    pub fn as_matrix(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.clone(),
        }
    }
}
