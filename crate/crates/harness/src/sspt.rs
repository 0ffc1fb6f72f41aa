//! SSPT: a minimal little-endian container for one feature map or mask.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SSPT"
//! 4       2     version (u16) = 1
//! 6       1     kind (u8): 0 feature C×H×W f32, 1 binary mask H×W u8,
//!                          2 probability mask H×W f32
//! 7       4·r   dims (u32 each; r = 3 for features, 2 for masks)
//! ...           row-major payload, no padding
//! ```
//!
//! The decoder never trusts the header: sizes are computed with checked
//! arithmetic and compared against the buffer before anything is allocated.

use std::fs;
use std::path::Path;

use ssp_core::{FeatureMap, Mask, MaskKind};

use crate::error::{FormatError, HarnessError, Result};

pub const MAGIC: [u8; 4] = *b"SSPT";
pub const VERSION: u16 = 1;
const HEADER: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum TensorKind {
    Features = 0,
    BinaryMask = 1,
    ProbabilityMask = 2,
}

impl TensorKind {
    fn from_byte(b: u8) -> Result<Self, FormatError> {
        match b {
            0 => Ok(TensorKind::Features),
            1 => Ok(TensorKind::BinaryMask),
            2 => Ok(TensorKind::ProbabilityMask),
            other => Err(FormatError::BadKind(other)),
        }
    }

    fn rank(self) -> usize {
        match self {
            TensorKind::Features => 3,
            _ => 2,
        }
    }

    fn element_size(self) -> u64 {
        match self {
            TensorKind::BinaryMask => 1,
            _ => 4,
        }
    }
}

/// Anything an SSPT file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Features(FeatureMap),
    Mask(Mask),
}

impl Tensor {
    pub fn kind(&self) -> TensorKind {
        match self {
            Tensor::Features(_) => TensorKind::Features,
            Tensor::Mask(m) if m.kind() == MaskKind::Binary => TensorKind::BinaryMask,
            Tensor::Mask(_) => TensorKind::ProbabilityMask,
        }
    }
}

impl From<FeatureMap> for Tensor {
    fn from(f: FeatureMap) -> Self {
        Tensor::Features(f)
    }
}

impl From<Mask> for Tensor {
    fn from(m: Mask) -> Self {
        Tensor::Mask(m)
    }
}

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let kind = tensor.kind();
    let (dims, len): (Vec<usize>, usize) = match tensor {
        Tensor::Features(f) => (vec![f.channels(), f.height(), f.width()], f.data().len()),
        Tensor::Mask(m) => (vec![m.height(), m.width()], m.pixels()),
    };
    let mut out = Vec::with_capacity(HEADER + 4 * dims.len() + len * kind.element_size() as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind as u8);
    for d in dims {
        let d = u32::try_from(d).expect("dimension exceeds u32");
        out.extend_from_slice(&d.to_le_bytes());
    }
    match tensor {
        Tensor::Features(f) => f
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Tensor::Mask(m) if kind == TensorKind::BinaryMask => {
            out.extend(m.data().iter().map(|&v| u8::from(v != 0.0)))
        }
        Tensor::Mask(m) => m
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    out
}

fn take<const N: usize>(bytes: &[u8], at: usize, need: u64) -> Result<[u8; N], FormatError> {
    bytes
        .get(at..at + N)
        .map(|s| s.try_into().expect("slice length"))
        .ok_or(FormatError::TruncatedPayload {
            expected: need,
            found: bytes.len() as u64,
        })
}

fn read_f32s(payload: &[u8], base: u64, probability: bool) -> Result<Vec<f32>, FormatError> {
    payload
        .chunks_exact(4)
        .enumerate()
        .map(|(i, chunk)| {
            let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
            let offset = base + 4 * i as u64;
            if !v.is_finite() {
                return Err(FormatError::NonFiniteValue { offset });
            }
            if probability && !(0.0..=1.0).contains(&v) {
                return Err(FormatError::InvalidMaskValue { offset, value: v });
            }
            Ok(v)
        })
        .collect()
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let magic: [u8; 4] = take(bytes, 0, HEADER as u64)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(take(bytes, 4, HEADER as u64)?);
    if version != VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let kind = TensorKind::from_byte(take::<1>(bytes, 6, HEADER as u64)?[0])?;
    let rank = kind.rank();
    let header = (HEADER + 4 * rank) as u64;
    let dims: Vec<u32> = (0..rank)
        .map(|i| take::<4>(bytes, HEADER + 4 * i, header).map(u32::from_le_bytes))
        .collect::<Result<_, _>>()?;
    if dims.contains(&0) {
        return Err(FormatError::ZeroDimension);
    }
    let overflow = || FormatError::DimOverflow(dims.clone());
    let count = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(u64::from(d)))
        .ok_or_else(overflow)?;
    let payload_len = count
        .checked_mul(kind.element_size())
        .ok_or_else(overflow)?;
    let total = header.checked_add(payload_len).ok_or_else(overflow)?;
    let found = bytes.len() as u64;
    if found < total {
        return Err(FormatError::TruncatedPayload {
            expected: total,
            found,
        });
    }
    if found > total {
        return Err(FormatError::TrailingBytes {
            extra: found - total,
        });
    }
    // total <= bytes.len(), so these casts cannot truncate
    let payload = &bytes[header as usize..];
    let d: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    let built = match kind {
        TensorKind::Features => {
            let data = read_f32s(payload, header, false)?;
            FeatureMap::new(d[0], d[1], d[2], data).map(Tensor::Features)
        }
        TensorKind::ProbabilityMask => {
            let data = read_f32s(payload, header, true)?;
            Mask::new(d[0], d[1], MaskKind::Probability, data).map(Tensor::Mask)
        }
        TensorKind::BinaryMask => {
            let data = payload
                .iter()
                .enumerate()
                .map(|(i, &b)| match b {
                    0 | 1 => Ok(f32::from(b)),
                    _ => Err(FormatError::InvalidMaskValue {
                        offset: header + i as u64,
                        value: f32::from(b),
                    }),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Mask::new(d[0], d[1], MaskKind::Binary, data).map(Tensor::Mask)
        }
    };
    // every constructor precondition was checked above
    Ok(built.expect("validated tensor"))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes).map_err(|source| HarnessError::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_tensor_file(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensor)).map_err(|e| HarnessError::io(path, e))
}

fn wrong_kind(path: &Path, wanted: &str, found: TensorKind) -> HarnessError {
    HarnessError::Manifest {
        path: path.to_path_buf(),
        message: format!("expected {wanted}, file holds {found:?}"),
    }
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    match read_tensor_file(path)? {
        Tensor::Features(f) => Ok(f),
        other => Err(wrong_kind(path, "a feature map", other.kind())),
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    match read_tensor_file(path)? {
        Tensor::Mask(m) => Ok(m),
        other => Err(wrong_kind(path, "a mask", other.kind())),
    }
}
