//! Optical-flow ingestion and patch datasets.
//!
//! * [`flo`] reads and writes Middlebury `.flo` fields.
//! * [`dataset`] holds [`PatchRecord`]/[`PatchDataset`] and their binary and
//!   CSV encodings.
//! * [`sampling`] draws 3×3 windows from fields and applies the contrast,
//!   downsampling and normalisation steps.

pub mod dataset;
pub mod flo;
pub mod sampling;

pub use dataset::{DatasetError, PatchDataset, PatchRecord, ProvenanceStep};
pub use flo::{read_flo, write_flo, FloError, FlowField};
pub use sampling::{downsample, sample_patches, top_contrast_filter, SamplingError};
