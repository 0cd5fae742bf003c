//! Middlebury `.flo` files.
//!
//! Layout, all little-endian: the float tag `202021.25`, `i32` width, `i32`
//! height, then `height × width` pairs of `f32 (u, v)` in row-major order.

use thiserror::Error;

/// The `.flo` tag, `202021.25` as an `f32` (bytes `PIEH`).
pub const FLO_MAGIC: f32 = 202021.25;
/// Flow components above this magnitude mark an unknown pixel.
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;
/// Largest width or height accepted.
pub const MAX_DIM: i64 = 100_000;
const HEADER_LEN: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FloError {
    #[error("bad .flo tag")]
    BadMagic,
    #[error("truncated .flo file: expected {expected} bytes, got {got}")]
    TruncatedFile { expected: usize, got: usize },
    #[error("invalid .flo dimensions {width}x{height}")]
    BadDims { width: i64, height: i64 },
}

/// A dense optical-flow field.
#[derive(Debug, Clone)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    /// Panics unless `data.len() == width * height`.
    pub fn new(width: usize, height: usize, data: Vec<[f32; 2]>) -> Self {
        assert_eq!(data.len(), width * height, "flow data does not match dimensions");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> [f32; 2] {
        self.data[row * self.width + col]
    }

    /// A pixel is usable when both components are finite and below the
    /// unknown-flow sentinel.
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        let [u, v] = self.get(row, col);
        u.is_finite() && v.is_finite() && u.abs() <= UNKNOWN_FLOW_THRESHOLD && v.abs() <= UNKNOWN_FLOW_THRESHOLD
    }

    /// Bitwise equality, so NaN payloads compare equal to themselves.
    pub fn bits_eq(&self, other: &FlowField) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits())
    }
}

pub fn read_flo(bytes: &[u8]) -> Result<FlowField, FloError> {
    if bytes.len() < 4 || f32::from_le_bytes(bytes[0..4].try_into().unwrap()) != FLO_MAGIC {
        return Err(FloError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(FloError::TruncatedFile { expected: HEADER_LEN, got: bytes.len() });
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap()) as i64;
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap()) as i64;
    if width <= 0 || height <= 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(FloError::BadDims { width, height });
    }
    let (w, h) = (width as usize, height as usize);
    let expected = HEADER_LEN + 8 * w * h;
    if bytes.len() < expected {
        return Err(FloError::TruncatedFile { expected, got: bytes.len() });
    }
    let data = bytes[HEADER_LEN..expected]
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[0..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..8].try_into().unwrap()),
            ]
        })
        .collect();
    Ok(FlowField { width: w, height: h, data })
}

pub fn write_flo(field: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * field.data.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(field.width as i32).to_le_bytes());
    out.extend_from_slice(&(field.height as i32).to_le_bytes());
    for [u, v] in &field.data {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
