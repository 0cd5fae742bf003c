//! Patch datasets and their on-disk encodings.
//!
//! Binary layout (little-endian): magic `OFPD`, `u32` version 1, `u64` record
//! count, then per record `u32 frame, u16 row, u16 col, f64 contrast,
//! 2×f64 mean flow, 18×f64 patch`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patch::{FlowPatch, FLOW_DIM};

pub const DATASET_MAGIC: &[u8; 4] = b"OFPD";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 4 + 2 + 2 + 8 + 16 + 8 * FLOW_DIM;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatasetError {
    #[error("not a patch dataset (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated dataset: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
}

/// One sampled patch and where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch: FlowPatch,
    pub frame: u32,
    /// Row of the window's top-left pixel.
    pub row: u16,
    /// Column of the window's top-left pixel.
    pub col: u16,
    /// Contrast norm of the raw window.
    pub original_contrast: f64,
    /// Mean flow of the raw window.
    pub mean_flow: [f64; 2],
}

/// A pipeline step applied to a dataset, with its numeric parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

impl ProvenanceStep {
    pub fn new(name: &str, params: &[(&str, f64)]) -> Self {
        Self {
            name: name.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PatchDataset {
    pub records: Vec<PatchRecord>,
    pub seed: u64,
    /// Whether `records[..].patch` are normalized (mean 0, unit contrast).
    pub normalized: bool,
    provenance: Vec<ProvenanceStep>,
}

impl PatchDataset {
    pub fn new(records: Vec<PatchRecord>, seed: u64, normalized: bool) -> Self {
        Self { records, seed, normalized, provenance: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patches(&self) -> Vec<FlowPatch> {
        self.records.iter().map(|r| r.patch).collect()
    }

    pub fn provenance(&self) -> &[ProvenanceStep] {
        &self.provenance
    }

    /// Appends a step to the provenance log.
    pub fn log(&mut self, step: ProvenanceStep) {
        self.provenance.push(step);
    }

    /// A dataset with the given records that inherits this one's seed,
    /// normalisation flag and provenance.
    pub fn derive(&self, records: Vec<PatchRecord>, step: ProvenanceStep) -> PatchDataset {
        let mut out = PatchDataset {
            records,
            seed: self.seed,
            normalized: self.normalized,
            provenance: self.provenance.clone(),
        };
        out.log(step);
        out
    }

    /// The records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], step: ProvenanceStep) -> PatchDataset {
        self.derive(indices.iter().map(|&i| self.records[i]).collect(), step)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.records.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.frame.to_le_bytes());
            out.extend_from_slice(&r.row.to_le_bytes());
            out.extend_from_slice(&r.col.to_le_bytes());
            out.extend_from_slice(&r.original_contrast.to_le_bytes());
            for m in r.mean_flow {
                out.extend_from_slice(&m.to_le_bytes());
            }
            for x in r.patch.0 {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Decodes the binary format. Seed, normalisation flag and provenance are
    /// not part of the format and come back as defaults.
    pub fn from_bytes(bytes: &[u8]) -> Result<PatchDataset, DatasetError> {
        if bytes.len() < 4 || &bytes[0..4] != DATASET_MAGIC {
            return Err(DatasetError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(DatasetError::Truncated { expected: HEADER_LEN, got: bytes.len() });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(DatasetError::UnsupportedVersion(version));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let expected = count
            .checked_mul(RECORD_LEN)
            .and_then(|b| b.checked_add(HEADER_LEN))
            .unwrap_or(usize::MAX);
        if bytes.len() < expected {
            return Err(DatasetError::Truncated { expected, got: bytes.len() });
        }
        let f64_at = |b: &[u8], o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let records = bytes[HEADER_LEN..expected]
            .chunks_exact(RECORD_LEN)
            .map(|b| {
                let mut patch = [0.0; FLOW_DIM];
                for (k, x) in patch.iter_mut().enumerate() {
                    *x = f64_at(b, 32 + 8 * k);
                }
                PatchRecord {
                    frame: u32::from_le_bytes(b[0..4].try_into().unwrap()),
                    row: u16::from_le_bytes(b[4..6].try_into().unwrap()),
                    col: u16::from_le_bytes(b[6..8].try_into().unwrap()),
                    original_contrast: f64_at(b, 8),
                    mean_flow: [f64_at(b, 16), f64_at(b, 24)],
                    patch: FlowPatch(patch),
                }
            })
            .collect();
        Ok(PatchDataset::new(records, 0, false))
    }

    /// CSV export: `frame,row,col,contrast,mean_u,mean_v,u1..u9,v1..v9`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,row,col,contrast,mean_u,mean_v");
        for c in ["u", "v"] {
            for i in 1..=9 {
                let _ = write!(out, ",{c}{i}");
            }
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                r.frame, r.row, r.col, r.original_contrast, r.mean_flow[0], r.mean_flow[1]
            );
            for x in r.patch.0 {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }

    /// Bitwise equality of the record payloads.
    pub fn records_bits_eq(&self, other: &PatchDataset) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}
