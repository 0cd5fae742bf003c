//! Closed-form model spaces inside the flow-patch ellipsoid.
//!
//! * the flow torus `F(α, θ)` and its embedding `G(ω, θ) = F(ω − θ, θ)`,
//! * the perpendicular map `F⊥(α, θ) = F(α + π/2, θ − π/2)`,
//! * the extended 3-manifold `F̃(r, α, θ) = cos τ(r)·F + sin τ(r)·F⊥` with
//!   `τ(r) = arccos((2 − r)^{-1/2})`, collapsing onto the limit circle as
//!   `r → 0`,
//! * quadratic-gradient patches `P(s, t)`,
//! * the 56 binary step-edge range patches and their panned flow patches,
//!
//! plus noisy samplers for each and a Klein-bottle negative control.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI, TAU};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow_io::{PatchDataset, PatchRecord, ProvenanceStep};
use crate::patch::{
    d_matrix, dct_basis, grid_position, normalize_patch, FlowPatch, PatchError, RangePatch,
    FLOW_DIM, PIXELS,
};

/// Number of binary step-edge range patches on the 3×3 grid.
pub const STEP_EDGE_COUNT: usize = 56;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter out of range: {0}")]
    DomainError(String),
    #[error("step-edge sweep found {0} masks instead of 56")]
    CountMismatch(usize),
    #[error("unknown step-edge id {0}")]
    UnknownEdge(usize),
    #[error(transparent)]
    Patch(#[from] PatchError),
}

/// `F(α, θ) = cos θ (cos α e₁ᵘ + sin α e₂ᵘ) + sin θ (cos α e₁ᵛ + sin α e₂ᵛ)`.
pub fn torus_patch(alpha: f64, theta: f64) -> FlowPatch {
    let b = dct_basis();
    let (sa, ca) = alpha.sin_cos();
    let (st, ct) = theta.sin_cos();
    ct * (ca * b.eu(1) + sa * b.eu(2)) + st * (ca * b.ev(1) + sa * b.ev(2))
}

/// `G(ω, θ) = F(ω − θ, θ)`, injective on `[0, 2π)²`.
pub fn torus_embedding(omega: f64, theta: f64) -> FlowPatch {
    torus_patch(omega - theta, theta)
}

/// `F⊥(α, θ) = F(α + π/2, θ − π/2)`.
pub fn perp_patch(alpha: f64, theta: f64) -> FlowPatch {
    torus_patch(alpha + FRAC_PI_2, theta - FRAC_PI_2)
}

/// `τ(r) = arccos((2 − r)^{-1/2})`: 0 at `r = 1`, `π/4` as `r → 0`.
pub fn tau(r: f64) -> f64 {
    (2.0 - r).powf(-0.5).clamp(-1.0, 1.0).acos()
}

/// Extended model patch with directionality `r ∈ (0, 1]`.
pub fn extended_patch(r: f64, alpha: f64, theta: f64) -> Result<FlowPatch, ModelError> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(ModelError::DomainError(format!("directionality r = {r} not in (0, 1]")));
    }
    let (s, c) = tau(r).sin_cos();
    Ok(c * torus_patch(alpha, theta) + s * perp_patch(alpha, theta))
}

/// The isotropic limit circle `cos φ (e₁ᵘ − e₂ᵛ)/√2 + sin φ (e₂ᵘ + e₁ᵛ)/√2`.
pub fn limit_circle_patch(phi: f64) -> FlowPatch {
    let b = dct_basis();
    let (s, c) = phi.sin_cos();
    (c * FRAC_1_SQRT_2) * (b.eu(1) - b.ev(2)) + (s * FRAC_1_SQRT_2) * (b.eu(2) + b.ev(1))
}

/// `P(s, t) = cos t (cos s e₃ᵘ + sin s e₄ᵘ) + sin t (cos s e₃ᵛ + sin s e₄ᵛ)`.
pub fn quadratic_patch(s: f64, t: f64) -> FlowPatch {
    let b = dct_basis();
    let (ss, cs) = s.sin_cos();
    let (st, ct) = t.sin_cos();
    ct * (cs * b.eu(3) + ss * b.eu(4)) + st * (cs * b.ev(3) + ss * b.ev(4))
}

/// A binary step-edge range patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEdgePatch {
    /// 1-based position in the catalog.
    pub id: usize,
    pub mask: [bool; PIXELS],
    /// Mean-centred, D-normalised signed version of the mask.
    pub normalized: RangePatch,
}

impl StepEdgePatch {
    /// Number of "on" pixels.
    pub fn ones(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Pixel `i` is on at bit `i` of the code.
    pub fn code(&self) -> u16 {
        mask_code(&self.mask)
    }
}

fn mask_code(mask: &[bool; PIXELS]) -> u16 {
    mask.iter().enumerate().fold(0, |acc, (i, &b)| acc | ((b as u16) << i))
}

fn normalized_mask(mask: &[bool; PIXELS]) -> RangePatch {
    let vals = mask.map(|b| if b { 1.0 } else { 0.0 });
    let mean = vals.iter().sum::<f64>() / PIXELS as f64;
    let centered = vals.map(|x| x - mean);
    let norm = d_matrix().quadratic(&centered).sqrt();
    RangePatch(centered.map(|x| x / norm))
}

/// Sweeps half-planes `cos φ·col + sin φ·row > b` over the centred grid
/// (`φ` in steps of π/720, `b ∈ [−1.5, 1.5]` in steps of 1/100) and keeps the
/// distinct non-constant masks.
///
/// Catalog order is ascending mask code, where pixel `i` (0-based,
/// column-major) contributes bit `i`; ids are 1-based positions in it.
pub fn enumerate_step_edge_patches() -> Result<Vec<StepEdgePatch>, ModelError> {
    let mut codes = std::collections::BTreeSet::new();
    for k in 0..1440 {
        let phi = k as f64 * PI / 720.0;
        let (s, c) = phi.sin_cos();
        let proj: [f64; PIXELS] = std::array::from_fn(|i| {
            let (r, col) = grid_position(i);
            c * (col as f64 - 1.0) + s * (r as f64 - 1.0)
        });
        for j in 0..=300 {
            let b = (j as f64 - 150.0) / 100.0;
            let mask: [bool; PIXELS] = proj.map(|x| x > b);
            let code = mask_code(&mask);
            if code != 0 && code != (1 << PIXELS) - 1 {
                codes.insert(code);
            }
        }
    }
    if codes.len() != STEP_EDGE_COUNT {
        return Err(ModelError::CountMismatch(codes.len()));
    }
    Ok(codes
        .into_iter()
        .enumerate()
        .map(|(k, code)| {
            let mask: [bool; PIXELS] = std::array::from_fn(|i| code & (1 << i) != 0);
            StepEdgePatch { id: k + 1, mask, normalized: normalized_mask(&mask) }
        })
        .collect())
}

/// The shared step-edge catalog.
pub fn step_edge_catalog() -> &'static [StepEdgePatch] {
    static CATALOG: OnceLock<Vec<StepEdgePatch>> = OnceLock::new();
    CATALOG.get_or_init(|| enumerate_step_edge_patches().expect("3x3 half-plane sweep yields 56 masks"))
}

pub fn step_edge(id: usize) -> Result<&'static StepEdgePatch, ModelError> {
    step_edge_catalog().get(id.wrapping_sub(1)).ok_or(ModelError::UnknownEdge(id))
}

/// Id of the complementary mask.
pub fn complement_id(id: usize) -> Result<usize, ModelError> {
    let edge = step_edge(id)?;
    let code = !edge.code() & ((1 << PIXELS) - 1);
    Ok(step_edge_catalog().iter().find(|e| e.code() == code).expect("catalog closed under complement").id)
}

/// Ids of the 28 masks with at most four pixels on, one per complement pair.
pub fn minority_edge_ids() -> Vec<usize> {
    step_edge_catalog().iter().filter(|e| e.ones() <= 4).map(|e| e.id).collect()
}

/// Flow from panning the camera along the unit vector `direction` over a
/// step edge: `u = mask·n̂ₓ`, `v = mask·n̂ᵧ`, then normalised.
pub fn step_edge_flow_patch(edge: &StepEdgePatch, direction: [f64; 2]) -> Result<FlowPatch, ModelError> {
    let len = direction[0].hypot(direction[1]);
    if (len - 1.0).abs() > 1e-9 {
        return Err(ModelError::DomainError(format!("direction has length {len}, expected 1")));
    }
    let mut x = [0.0; FLOW_DIM];
    for i in 0..PIXELS {
        if edge.mask[i] {
            x[i] = direction[0];
            x[i + PIXELS] = direction[1];
        }
    }
    Ok(normalize_patch(&FlowPatch(x))?.patch)
}

/// Generator families for synthetic samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ModelKind {
    Torus,
    Extended,
    LimitCircle,
    Quadratic,
    /// Step-edge circles for the given minority-mask ids (all 28 when empty);
    /// record `i` is drawn from circle `i mod len`.
    StepEdgeCircles { edges: Vec<usize> },
    KleinControl,
}

impl ModelKind {
    /// Value stored in the `frame` field of generated records.
    pub fn id(&self) -> u32 {
        match self {
            ModelKind::Torus => 1,
            ModelKind::Extended => 2,
            ModelKind::LimitCircle => 3,
            ModelKind::Quadratic => 4,
            ModelKind::StepEdgeCircles { .. } => 5,
            ModelKind::KleinControl => 6,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Torus => "torus",
            ModelKind::Extended => "extended",
            ModelKind::LimitCircle => "limitCircle",
            ModelKind::Quadratic => "quadratic",
            ModelKind::StepEdgeCircles { .. } => "stepEdgeCircles",
            ModelKind::KleinControl => "kleinControl",
        }
    }

    /// Parses the names used on the command line.
    pub fn parse(name: &str) -> Option<ModelKind> {
        Some(match name {
            "torus" => ModelKind::Torus,
            "extended" => ModelKind::Extended,
            "limitCircle" | "limit-circle" => ModelKind::LimitCircle,
            "quadratic" => ModelKind::Quadratic,
            "stepEdgeCircles" | "step-edge-circles" => ModelKind::StepEdgeCircles { edges: vec![] },
            "kleinControl" | "klein-control" => ModelKind::KleinControl,
            _ => return None,
        })
    }
}

/// Generator parameters behind one synthetic record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "camelCase")]
pub enum GroundTruth {
    Torus { alpha: f64, theta: f64 },
    Extended { r: f64, alpha: f64, theta: f64 },
    LimitCircle { phi: f64 },
    Quadratic { s: f64, t: f64 },
    /// `edge` is the minority mask; `direction` is the pan angle, which is
    /// also the lifted direction of the clean patch.
    StepEdge { edge: usize, direction: f64 },
    Klein { alpha: f64, theta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub dataset: PatchDataset,
    pub ground_truth: Vec<GroundTruth>,
    pub noise_sigma: f64,
}

/// Scale applied to the Klein-bottle control so its diameter is order one.
pub const KLEIN_SCALE: f64 = 1.0 / 3.0;

/// Figure-8 Klein bottle in ℝ⁴, scaled, in the first four of 18 coordinates.
pub fn klein_point(alpha: f64, theta: f64) -> [f64; FLOW_DIM] {
    let (sa, ca) = alpha.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sh, ch) = (theta / 2.0).sin_cos();
    let mut x = [0.0; FLOW_DIM];
    x[0] = KLEIN_SCALE * (2.0 + ca) * ct;
    x[1] = KLEIN_SCALE * (2.0 + ca) * st;
    x[2] = KLEIN_SCALE * sa * ch;
    x[3] = KLEIN_SCALE * sa * sh;
    x
}

/// Base angle of the Klein control: `atan2` of its first two coordinates.
pub fn klein_base_angle(p: &FlowPatch) -> f64 {
    crate::stats::wrap_tau(p.0[1].atan2(p.0[0]))
}

fn clean_patch(kind: &ModelKind, i: usize, rng: &mut ChaCha8Rng) -> Result<(FlowPatch, GroundTruth), ModelError> {
    let mut angle = || rng.random_range(0.0..TAU);
    Ok(match kind {
        ModelKind::Torus => {
            let (alpha, theta) = (angle(), angle());
            (torus_patch(alpha, theta), GroundTruth::Torus { alpha, theta })
        }
        ModelKind::Extended => {
            let (alpha, theta) = (angle(), angle());
            // uniform on (0, 1]
            let r = 1.0 - rng.random_range(0.0..1.0);
            (extended_patch(r, alpha, theta)?, GroundTruth::Extended { r, alpha, theta })
        }
        ModelKind::LimitCircle => {
            let phi = angle();
            (limit_circle_patch(phi), GroundTruth::LimitCircle { phi })
        }
        ModelKind::Quadratic => {
            let (s, t) = (angle(), angle());
            (quadratic_patch(s, t), GroundTruth::Quadratic { s, t })
        }
        ModelKind::StepEdgeCircles { edges } => {
            let all;
            let edges = if edges.is_empty() {
                all = minority_edge_ids();
                &all
            } else {
                edges
            };
            let edge = edges[i % edges.len()];
            let direction = angle();
            let patch = step_edge_flow_patch(step_edge(edge)?, [direction.cos(), direction.sin()])?;
            (patch, GroundTruth::StepEdge { edge, direction })
        }
        ModelKind::KleinControl => {
            let (alpha, theta) = (angle(), angle());
            (FlowPatch(klein_point(alpha, theta)), GroundTruth::Klein { alpha, theta })
        }
    })
}

/// Draws `n` model points with isotropic Gaussian noise of standard deviation
/// `sigma` in ℝ¹⁸.
///
/// Patch models are re-normalised after the noise is added, so every record
/// lies on the contrast ellipsoid. The Klein control is not a patch family and
/// is left as is.
pub fn sample_model(kind: &ModelKind, n: usize, sigma: f64, seed: u64) -> Result<SyntheticSample, ModelError> {
    if !(sigma >= 0.0) {
        return Err(ModelError::DomainError(format!("noise sigma = {sigma} must be non-negative")));
    }
    if n == 0 {
        return Err(ModelError::DomainError("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let (clean, gt) = clean_patch(kind, i, &mut rng)?;
        let mut noisy = clean.0;
        if sigma > 0.0 {
            for x in noisy.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *x += sigma * z;
            }
        }
        let noisy = FlowPatch(noisy);
        let record = if *kind == ModelKind::KleinControl {
            PatchRecord {
                patch: noisy,
                frame: kind.id(),
                row: 0,
                col: 0,
                original_contrast: noisy.norm(),
                mean_flow: [0.0, 0.0],
            }
        } else {
            let norm = normalize_patch(&noisy)?;
            PatchRecord {
                patch: norm.patch,
                frame: kind.id(),
                row: 0,
                col: 0,
                original_contrast: norm.contrast,
                mean_flow: norm.mean_flow,
            }
        };
        records.push(record);
        truth.push(gt);
    }
    let mut dataset = PatchDataset::new(records, seed, *kind != ModelKind::KleinControl);
    dataset.log(ProvenanceStep::new(
        "synthetic",
        &[("model", kind.id() as f64), ("n", n as f64), ("sigma", sigma), ("seed", seed as f64)],
    ));
    Ok(SyntheticSample { dataset, ground_truth: truth, noise_sigma: sigma })
}
