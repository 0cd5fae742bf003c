//! Window sampling and the preprocessing chain: sample raw 3×3 windows,
//! keep the top contrast percentile, normalise, downsample.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::dataset::{PatchDataset, PatchRecord, ProvenanceStep};
use super::flo::FlowField;
use crate::patch::{contrast_norm, grid_position, normalize_patch, FlowPatch, PIXELS, ZERO_CONTRAST_EPS};
use crate::stats::top_percent_cutoff;

/// Draw budget per requested window, as a multiple of `per_frame`.
pub const REJECTION_FACTOR: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("frame {frame} is {width}x{height}; windows need at least 3x3")]
    FrameTooSmall { frame: usize, width: usize, height: usize },
    #[error("frame {frame} yielded only {got} of {wanted} valid windows")]
    InsufficientValidArea { frame: usize, wanted: usize, got: usize },
    #[error("per-frame sample count must be at least 1")]
    BadPerFrame,
    #[error("percent must lie in (0, 100], got {0}")]
    BadPercent(f64),
    #[error("no record passed the contrast filter")]
    EmptyResult,
    #[error("cannot draw {wanted} records from a dataset of {available}")]
    TooFew { wanted: usize, available: usize },
}

/// Per-frame RNG stream, independent of scheduling.
fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ frame as u64)
}

/// Reads the 3×3 window whose top-left pixel is `(row, col)`, in the
/// column-major pixel order of [`crate::patch`].
pub fn window_patch(field: &FlowField, row: usize, col: usize) -> FlowPatch {
    let mut x = [0.0; 2 * PIXELS];
    for i in 0..PIXELS {
        let (r, c) = grid_position(i);
        let [u, v] = field.get(row + r, col + c);
        x[i] = u as f64;
        x[i + PIXELS] = v as f64;
    }
    FlowPatch(x)
}

fn window_is_valid(field: &FlowField, row: usize, col: usize) -> bool {
    (0..3).all(|r| (0..3).all(|c| field.is_valid(row + r, col + c)))
}

fn raw_record(field: &FlowField, frame: usize, row: usize, col: usize) -> PatchRecord {
    let patch = window_patch(field, row, col);
    PatchRecord {
        patch,
        frame: frame as u32,
        row: row as u16,
        col: col as u16,
        original_contrast: contrast_norm(&crate::patch::mean_center(&patch)),
        mean_flow: patch.mean_flow(),
    }
}

fn sample_frame(
    field: &FlowField,
    frame: usize,
    per_frame: usize,
    seed: u64,
) -> Result<Vec<PatchRecord>, SamplingError> {
    let (w, h) = (field.width(), field.height());
    if w < 3 || h < 3 {
        return Err(SamplingError::FrameTooSmall { frame, width: w, height: h });
    }
    let mut rng = frame_rng(seed, frame);
    let mut used = HashSet::with_capacity(per_frame);
    let mut out = Vec::with_capacity(per_frame);
    let budget = REJECTION_FACTOR * per_frame;
    let mut draws = 0;
    while out.len() < per_frame {
        if draws == budget {
            return Err(SamplingError::InsufficientValidArea { frame, wanted: per_frame, got: out.len() });
        }
        draws += 1;
        let row = rng.random_range(0..=h - 3);
        let col = rng.random_range(0..=w - 3);
        if used.contains(&(row, col)) || !window_is_valid(field, row, col) {
            continue;
        }
        used.insert((row, col));
        out.push(raw_record(field, frame, row, col));
    }
    Ok(out)
}

/// Draws `per_frame` distinct, fully valid windows from each field.
///
/// Window positions are sampled uniformly without replacement; windows that
/// touch an invalid pixel are redrawn, up to `10 · per_frame` draws per frame.
/// Records keep the raw window values.
pub fn sample_patches(
    fields: &[FlowField],
    per_frame: usize,
    seed: u64,
) -> Result<PatchDataset, SamplingError> {
    if per_frame == 0 {
        return Err(SamplingError::BadPerFrame);
    }
    let per: Vec<Vec<PatchRecord>> = fields
        .par_iter()
        .enumerate()
        .map(|(frame, field)| sample_frame(field, frame, per_frame, seed))
        .collect::<Result<_, _>>()?;
    let mut ds = PatchDataset::new(per.into_iter().flatten().collect(), seed, false);
    ds.log(ProvenanceStep::new(
        "sample",
        &[("frames", fields.len() as f64), ("per_frame", per_frame as f64), ("seed", seed as f64)],
    ));
    Ok(ds)
}

/// Keeps the top `percent` percent of records by original contrast (ties at
/// the cut-off kept) and normalises the kept patches.
///
/// Records whose contrast is numerically zero cannot be normalised and are
/// never kept.
pub fn top_contrast_filter(ds: &PatchDataset, percent: f64) -> Result<PatchDataset, SamplingError> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(SamplingError::BadPercent(percent));
    }
    let candidates: Vec<&PatchRecord> =
        ds.records.iter().filter(|r| r.original_contrast > ZERO_CONTRAST_EPS).collect();
    let contrasts: Vec<f64> = candidates.iter().map(|r| r.original_contrast).collect();
    let cutoff = top_percent_cutoff(&contrasts, percent).ok_or(SamplingError::EmptyResult)?;
    let mut records = Vec::new();
    for r in candidates.into_iter().filter(|r| r.original_contrast >= cutoff) {
        let Ok(n) = normalize_patch(&r.patch) else { continue };
        records.push(PatchRecord { patch: n.patch, ..*r });
    }
    if records.is_empty() {
        return Err(SamplingError::EmptyResult);
    }
    let mut out = ds.derive(records, ProvenanceStep::new("top_contrast", &[("percent", percent)]));
    out.normalized = true;
    Ok(out)
}

/// Uniform subsample of `n` records without replacement; kept records stay
/// in their original order.
pub fn downsample(ds: &PatchDataset, n: usize, seed: u64) -> Result<PatchDataset, SamplingError> {
    if n > ds.len() {
        return Err(SamplingError::TooFew { wanted: n, available: ds.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, ds.len(), n).into_vec();
    picked.sort_unstable();
    Ok(ds.subset(&picked, ProvenanceStep::new("downsample", &[("n", n as f64), ("seed", seed as f64)])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::{mean_center, PIXELS};

    fn wavy_field(w: usize, h: usize, phase: f32) -> FlowField {
        FlowField::from_fn(w, h, |r, c| {
            let (r, c) = (r as f32, c as f32);
            [(0.3 * c + phase).sin() * (1.0 + 0.1 * r), (0.2 * r - phase).cos() + 0.05 * c * c]
        })
    }

    #[test]
    fn window_uses_column_major_order() {
        let f = FlowField::from_fn(4, 4, |r, c| [(10 * r + c) as f32, 0.0]);
        let p = window_patch(&f, 1, 0);
        // pixel 2 is (row 1, col 0) of the window
        assert_eq!(p.0[1], 20.0);
        assert_eq!(p.0[3], 11.0);
    }

    #[test]
    fn sample_counts_and_determinism() {
        let fields: Vec<FlowField> = (0..3).map(|k| wavy_field(20, 15, k as f32)).collect();
        let a = sample_patches(&fields, 25, 42).unwrap();
        let b = sample_patches(&fields, 25, 42).unwrap();
        assert_eq!(a.len(), 75);
        assert!(a.records_bits_eq(&b));
        let c = sample_patches(&fields, 25, 43).unwrap();
        assert!(!a.records_bits_eq(&c));
        for frame in 0..3u32 {
            let pos: HashSet<(u16, u16)> =
                a.records.iter().filter(|r| r.frame == frame).map(|r| (r.row, r.col)).collect();
            assert_eq!(pos.len(), 25);
        }
    }

    #[test]
    fn constant_field_gives_zero_contrast() {
        let f = FlowField::from_fn(3, 3, |_, _| [1.5, -2.0]);
        let ds = sample_patches(&[f], 1, 0).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.records[0].original_contrast, 0.0);
    }

    #[test]
    fn invalid_pixels_are_never_sampled() {
        let f = FlowField::from_fn(12, 12, |r, c| {
            if r % 5 == 0 && c % 4 == 0 {
                [2e9, 0.0]
            } else {
                [r as f32, c as f32 * 0.5]
            }
        });
        let ds = sample_patches(&[f.clone()], 3, 5).unwrap();
        for r in &ds.records {
            assert!(window_is_valid(&f, r.row as usize, r.col as usize));
        }
    }

    #[test]
    fn mostly_invalid_frame_fails() {
        let f = FlowField::from_fn(10, 10, |r, c| if r == 5 && c == 5 { [0.0, 0.0] } else { [f32::NAN, 0.0] });
        assert!(matches!(
            sample_patches(&[f], 2, 0),
            Err(SamplingError::InsufficientValidArea { .. })
        ));
        let tiny = FlowField::from_fn(2, 5, |_, _| [0.0, 0.0]);
        assert!(matches!(sample_patches(&[tiny], 1, 0), Err(SamplingError::FrameTooSmall { .. })));
    }

    fn dataset_with_contrasts(contrasts: &[f64]) -> PatchDataset {
        let b = crate::patch::dct_basis();
        let records = contrasts
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let p = c * b.eu(1 + k % 8);
                PatchRecord {
                    patch: p,
                    frame: 0,
                    row: k as u16,
                    col: 0,
                    original_contrast: contrast_norm(&p),
                    mean_flow: [0.0, 0.0],
                }
            })
            .collect();
        PatchDataset::new(records, 0, false)
    }

    #[test]
    fn top_twenty_percent_keeps_nine_and_ten() {
        let ds = dataset_with_contrasts(&(1..=10).map(f64::from).collect::<Vec<_>>());
        let top = top_contrast_filter(&ds, 20.0).unwrap();
        let mut kept: Vec<f64> = top.records.iter().map(|r| r.original_contrast.round()).collect();
        kept.sort_by(f64::total_cmp);
        assert_eq!(kept, vec![9.0, 10.0]);
        assert!(top.normalized);
        assert_eq!(top_contrast_filter(&ds, 100.0).unwrap().len(), 10);
        assert!(matches!(top_contrast_filter(&ds, 0.0), Err(SamplingError::BadPercent(_))));
    }

    #[test]
    fn filtered_records_are_normalized_and_reconstruct() {
        let fields: Vec<FlowField> = (0..2).map(|k| wavy_field(30, 20, k as f32 * 0.7)).collect();
        let raw = sample_patches(&fields, 40, 9).unwrap();
        let top = top_contrast_filter(&raw, 20.0).unwrap();
        for r in &top.records {
            let m = r.patch.mean_flow();
            assert!(m[0].abs() < 1e-9 && m[1].abs() < 1e-9);
            assert!((contrast_norm(&r.patch) - 1.0).abs() < 1e-9);
            let field = &fields[r.frame as usize];
            let original = window_patch(field, r.row as usize, r.col as usize);
            let mut rebuilt = (r.original_contrast * r.patch).0;
            for i in 0..PIXELS {
                rebuilt[i] += r.mean_flow[0];
                rebuilt[i + PIXELS] += r.mean_flow[1];
            }
            for (a, b) in rebuilt.iter().zip(&original.0) {
                assert!((a - b).abs() < 1e-6);
            }
            assert!((contrast_norm(&mean_center(&original)) - r.original_contrast).abs() < 1e-12);
        }
    }

    #[test]
    fn two_stage_filter_equals_one_shot() {
        // 2000 distinct contrasts: top 20% then top 5% of that is the top 1%.
        let contrasts: Vec<f64> = (0..2000).map(|k| 1.0 + ((k * 7919) % 2000) as f64 * 0.01).collect();
        let ds = dataset_with_contrasts(&contrasts);
        let two = top_contrast_filter(&top_contrast_filter(&ds, 20.0).unwrap(), 5.0).unwrap();
        let one = top_contrast_filter(&ds, 1.0).unwrap();
        let key = |d: &PatchDataset| {
            let mut v: Vec<u16> = d.records.iter().map(|r| r.row).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(key(&two), key(&one));
        assert_eq!(one.len(), 20);
    }

    #[test]
    fn downsample_contract() {
        let ds = dataset_with_contrasts(&(1..=50).map(f64::from).collect::<Vec<_>>());
        let all = downsample(&ds, 50, 3).unwrap();
        assert_eq!(all.records, ds.records);
        assert!(downsample(&ds, 0, 3).unwrap().is_empty());
        let a = downsample(&ds, 10, 11).unwrap();
        let b = downsample(&ds, 10, 11).unwrap();
        assert_eq!(a.records, b.records);
        assert!(matches!(downsample(&ds, 51, 0), Err(SamplingError::TooFew { .. })));
        assert_eq!(a.provenance().last().unwrap().name, "downsample");
    }
}
