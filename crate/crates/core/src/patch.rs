//! The 3×3 flow patch space.
//!
//! A flow patch is the 18-vector `(u₁..u₉, v₁..v₉)`. Pixel `i` (1-based)
//! sits at `row = (i-1) mod 3`, `col = ⌊(i-1)/3⌋`, i.e. the 3×3 grid is
//! flattened column by column. [`grid_position`] and [`pixel_index`] are the
//! only places that encode this; the contrast form and the `.flo` window
//! sampler both go through them.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pixels per patch.
pub const PIXELS: usize = 9;
/// Ambient dimension of a flow patch.
pub const FLOW_DIM: usize = 18;

/// Contrast below which a patch counts as constant.
pub const ZERO_CONTRAST_EPS: f64 = 1e-12;
/// Relative eigenvalue gap below which the predominant direction is undefined.
pub const UNDIRECTIONAL_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatchError {
    #[error("patch has zero contrast (constant flow)")]
    ZeroContrast,
    #[error("patch is isotropic; predominant direction is undefined")]
    Undirectional,
    #[error("need at least {needed} points for a {needed}-dimensional projection, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("projection dimension must be in 1..=18, got {0}")]
    BadDimension(usize),
}

/// `(row, col)` of the 0-based pixel index `i`.
#[inline]
pub const fn grid_position(i: usize) -> (usize, usize) {
    (i % 3, i / 3)
}

/// 0-based pixel index of grid position `(row, col)`.
#[inline]
pub const fn pixel_index(row: usize, col: usize) -> usize {
    col * 3 + row
}

/// Whether pixels `i` and `j` (0-based) share a grid edge.
pub fn adjacent(i: usize, j: usize) -> bool {
    let (ri, ci) = grid_position(i);
    let (rj, cj) = grid_position(j);
    ri.abs_diff(rj) + ci.abs_diff(cj) == 1
}

/// A scalar 3×3 patch, e.g. a range (depth) patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangePatch(pub [f64; PIXELS]);

impl RangePatch {
    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / PIXELS as f64
    }

    pub fn dot(&self, other: &RangePatch) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, s: f64) -> RangePatch {
        RangePatch(self.0.map(|x| x * s))
    }
}

/// An optical-flow patch stored as `(u₁..u₉, v₁..v₉)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowPatch(#[serde(with = "flow_array")] pub [f64; FLOW_DIM]);

mod flow_array {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; 18], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; 18], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into().map_err(|_| serde::de::Error::custom("flow patch needs 18 values"))
    }
}

impl FlowPatch {
    pub const ZERO: FlowPatch = FlowPatch([0.0; FLOW_DIM]);

    pub fn from_components(u: &[f64; PIXELS], v: &[f64; PIXELS]) -> Self {
        let mut x = [0.0; FLOW_DIM];
        x[..PIXELS].copy_from_slice(u);
        x[PIXELS..].copy_from_slice(v);
        FlowPatch(x)
    }

    /// Flow with `u` equal to `range` and `v = 0`.
    pub fn from_u(range: &RangePatch) -> Self {
        Self::from_components(&range.0, &[0.0; PIXELS])
    }

    /// Flow with `u = 0` and `v` equal to `range`.
    pub fn from_v(range: &RangePatch) -> Self {
        Self::from_components(&[0.0; PIXELS], &range.0)
    }

    pub fn u(&self) -> &[f64] {
        &self.0[..PIXELS]
    }

    pub fn v(&self) -> &[f64] {
        &self.0[PIXELS..]
    }

    /// The flow arrow at 0-based pixel `i`.
    pub fn arrow(&self, i: usize) -> (f64, f64) {
        (self.0[i], self.0[i + PIXELS])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn mean_flow(&self) -> [f64; 2] {
        let n = PIXELS as f64;
        [self.u().iter().sum::<f64>() / n, self.v().iter().sum::<f64>() / n]
    }

    /// Euclidean inner product on ℝ¹⁸.
    pub fn dot(&self, other: &FlowPatch) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &FlowPatch) -> f64 {
        (*self - *other).norm()
    }

    /// Applies the planar rotation by `angle` to every arrow.
    pub fn rotate_arrows(&self, angle: f64) -> FlowPatch {
        let (s, c) = angle.sin_cos();
        let mut out = [0.0; FLOW_DIM];
        for i in 0..PIXELS {
            let (u, v) = self.arrow(i);
            out[i] = c * u - s * v;
            out[i + PIXELS] = s * u + c * v;
        }
        FlowPatch(out)
    }

    /// Second-moment matrix `AᵀA` of the 9×2 arrow matrix, as `(Σu², Σuv, Σv²)`.
    pub fn arrow_moments(&self) -> (f64, f64, f64) {
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for i in 0..PIXELS {
            let (u, v) = self.arrow(i);
            a += u * u;
            b += u * v;
            c += v * v;
        }
        (a, b, c)
    }

    /// Third moment `Σ ⟨(u_i, v_i), d⟩³` of the arrows along the unit vector
    /// at angle `axis`.
    pub fn third_moment(&self, axis: f64) -> f64 {
        let (s, c) = axis.sin_cos();
        (0..PIXELS)
            .map(|i| {
                let (u, v) = self.arrow(i);
                (c * u + s * v).powi(3)
            })
            .sum()
    }
}

impl Add for FlowPatch {
    type Output = FlowPatch;
    fn add(self, rhs: FlowPatch) -> FlowPatch {
        let mut out = self.0;
        out.iter_mut().zip(&rhs.0).for_each(|(a, b)| *a += b);
        FlowPatch(out)
    }
}

impl Sub for FlowPatch {
    type Output = FlowPatch;
    fn sub(self, rhs: FlowPatch) -> FlowPatch {
        let mut out = self.0;
        out.iter_mut().zip(&rhs.0).for_each(|(a, b)| *a -= b);
        FlowPatch(out)
    }
}

impl Mul<FlowPatch> for f64 {
    type Output = FlowPatch;
    fn mul(self, rhs: FlowPatch) -> FlowPatch {
        FlowPatch(rhs.0.map(|x| self * x))
    }
}

impl Neg for FlowPatch {
    type Output = FlowPatch;
    fn neg(self) -> FlowPatch {
        FlowPatch(self.0.map(|x| -x))
    }
}

/// Laplacian of the `n × n` grid graph on column-major pixel indices.
pub fn grid_laplacian(n: usize) -> Vec<Vec<f64>> {
    let m = n * n;
    let pos = |i: usize| (i % n, i / n);
    let mut l = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let (ri, ci) = pos(i);
            let (rj, cj) = pos(j);
            if ri.abs_diff(rj) + ci.abs_diff(cj) == 1 {
                l[i][j] = -1.0;
                l[i][i] += 1.0;
            }
        }
    }
    l
}

/// The contrast form: the Laplacian of the 3×3 grid graph, so that
/// `xᵀDx = Σ_{i∼j} (x_i − x_j)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DMatrix {
    entries: SMatrix<f64, PIXELS, PIXELS>,
}

impl DMatrix {
    pub fn build() -> Self {
        let l = grid_laplacian(3);
        Self { entries: SMatrix::from_fn(|i, j| l[i][j]) }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &SMatrix<f64, PIXELS, PIXELS> {
        &self.entries
    }

    /// `xᵀDy` for scalar patches.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..PIXELS {
            for j in 0..PIXELS {
                let d = self.entries[(i, j)];
                if d != 0.0 {
                    acc += x[i] * d * y[j];
                }
            }
        }
        acc
    }

    /// `xᵀDx` for a scalar patch.
    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.form(x, x)
    }

    /// Block-diagonal `diag(D, D)` inner product of two flow patches.
    pub fn flow_inner(&self, a: &FlowPatch, b: &FlowPatch) -> f64 {
        self.form(a.u(), b.u()) + self.form(a.v(), b.v())
    }
}

/// Shared immutable contrast form.
pub fn d_matrix() -> &'static DMatrix {
    static D: OnceLock<DMatrix> = OnceLock::new();
    D.get_or_init(DMatrix::build)
}

/// `‖p‖_D = √(uᵀDu + vᵀDv)`.
pub fn contrast_norm(p: &FlowPatch) -> f64 {
    let d = d_matrix();
    (d.quadratic(p.u()) + d.quadratic(p.v())).max(0.0).sqrt()
}

/// Result of [`normalize_patch`]: `original = contrast · patch + mean_flow`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub patch: FlowPatch,
    pub mean_flow: [f64; 2],
    pub contrast: f64,
}

impl Normalized {
    pub fn reconstruct(&self) -> FlowPatch {
        let mut out = (self.contrast * self.patch).0;
        for i in 0..PIXELS {
            out[i] += self.mean_flow[0];
            out[i + PIXELS] += self.mean_flow[1];
        }
        FlowPatch(out)
    }
}

/// Subtracts the mean flow from each component.
pub fn mean_center(p: &FlowPatch) -> FlowPatch {
    let [mu, mv] = p.mean_flow();
    let mut out = p.0;
    for i in 0..PIXELS {
        out[i] -= mu;
        out[i + PIXELS] -= mv;
    }
    FlowPatch(out)
}

/// Maps a patch to the contrast ellipsoid: mean flow 0 and `‖·‖_D = 1`.
pub fn normalize_patch(p: &FlowPatch) -> Result<Normalized, PatchError> {
    let mean_flow = p.mean_flow();
    let centered = mean_center(p);
    let contrast = contrast_norm(&centered);
    if contrast <= ZERO_CONTRAST_EPS {
        return Err(PatchError::ZeroContrast);
    }
    Ok(Normalized { patch: (1.0 / contrast) * centered, mean_flow, contrast })
}

/// Spatial frequency of a DCT pattern along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Freq {
    Constant,
    Linear,
    Quadratic,
}

impl Freq {
    fn profile(self) -> [f64; 3] {
        match self {
            Freq::Constant => [1.0, 1.0, 1.0],
            Freq::Linear => [-1.0, 0.0, 1.0],
            Freq::Quadratic => [1.0, -2.0, 1.0],
        }
    }
}

/// Basis order as `(column frequency, row frequency)`: horizontal and vertical
/// linear gradients, horizontal and vertical quadratics, the saddle, the two
/// mixed linear/quadratic patterns and the checkerboard-like product.
const DCT_ORDER: [(Freq, Freq); 8] = [
    (Freq::Linear, Freq::Constant),
    (Freq::Constant, Freq::Linear),
    (Freq::Quadratic, Freq::Constant),
    (Freq::Constant, Freq::Quadratic),
    (Freq::Linear, Freq::Linear),
    (Freq::Quadratic, Freq::Linear),
    (Freq::Linear, Freq::Quadratic),
    (Freq::Quadratic, Freq::Quadratic),
];

fn analytic_pattern(col: Freq, row: Freq) -> [f64; PIXELS] {
    let (pc, pr) = (col.profile(), row.profile());
    let mut out = [0.0; PIXELS];
    for (i, slot) in out.iter_mut().enumerate() {
        let (r, c) = grid_position(i);
        *slot = pc[c] * pr[r];
    }
    let mean = out.iter().sum::<f64>() / PIXELS as f64;
    out.map(|x| x - mean)
}

/// D-orthonormal eigenbasis of the contrast form for mean-zero patches, and
/// its two flow lifts.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBasis {
    pub range: [RangePatch; 8],
    pub flow_u: [FlowPatch; 8],
    pub flow_v: [FlowPatch; 8],
    /// Eigenvalue of `D` for each basis vector.
    pub eigenvalues: [f64; 8],
}

impl DctBasis {
    /// Builds the basis from an eigendecomposition of `D`.
    ///
    /// `D` has repeated eigenvalues, so each analytic DCT pattern is projected
    /// onto the eigenspace that carries it and the projections are
    /// re-orthonormalised under the D inner product in basis order. Signs are
    /// chosen to correlate positively with the analytic patterns.
    pub fn build() -> Self {
        let d = d_matrix();
        let eig = SymmetricEigen::new(*d.matrix());
        let mut pairs: Vec<(f64, SVector<f64, PIXELS>)> = (0..PIXELS)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        // Group numerically equal eigenvalues into eigenspaces.
        let mut spaces: Vec<(f64, Vec<SVector<f64, PIXELS>>)> = Vec::new();
        for (lambda, vec) in pairs {
            match spaces.last_mut() {
                Some((l, vs)) if (lambda - *l).abs() < 1e-8 => vs.push(vec),
                _ => spaces.push((lambda, vec![vec])),
            }
        }

        let mut range = [RangePatch([0.0; PIXELS]); 8];
        let mut eigenvalues = [0.0; 8];
        let mut accepted: Vec<(usize, SVector<f64, PIXELS>)> = Vec::new();
        for (k, &(fc, fr)) in DCT_ORDER.iter().enumerate() {
            let target = SVector::<f64, PIXELS>::from_column_slice(&analytic_pattern(fc, fr));
            // Eigenspace holding the most energy of the pattern (all of it,
            // for the grid Laplacian).
            let (space_idx, projection) = spaces
                .iter()
                .enumerate()
                .skip(1)
                .map(|(s, (_, basis))| {
                    let proj = basis.iter().fold(SVector::<f64, PIXELS>::zeros(), |acc, b| {
                        acc + b * b.dot(&target)
                    });
                    (s, proj)
                })
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .expect("D has nonzero eigenvalues");
            let mut w = projection;
            for (s, prev) in &accepted {
                if *s == space_idx {
                    let c = d.form(w.as_slice(), prev.as_slice());
                    w -= prev * c;
                }
            }
            let dn = d.quadratic(w.as_slice()).sqrt();
            w /= dn;
            if w.dot(&target) < 0.0 {
                w = -w;
            }
            accepted.push((space_idx, w));
            let mut vals = [0.0; PIXELS];
            vals.copy_from_slice(w.as_slice());
            range[k] = RangePatch(vals);
            eigenvalues[k] = spaces[space_idx].0;
        }
        let flow_u = range.map(|e| FlowPatch::from_u(&e));
        let flow_v = range.map(|e| FlowPatch::from_v(&e));
        Self { range, flow_u, flow_v, eigenvalues }
    }

    /// `e_i^u` for 1-based `i`.
    pub fn eu(&self, i: usize) -> FlowPatch {
        self.flow_u[i - 1]
    }

    /// `e_i^v` for 1-based `i`.
    pub fn ev(&self, i: usize) -> FlowPatch {
        self.flow_v[i - 1]
    }

    /// Coordinates of a patch against the 16 flow basis vectors under the D
    /// inner product, ordered `e₁^u..e₈^u, e₁^v..e₈^v`. For mean-zero patches
    /// the Euclidean norm of this vector equals `‖·‖_D`.
    pub fn d_coordinates(&self, p: &FlowPatch) -> [f64; 16] {
        let d = d_matrix();
        let mut out = [0.0; 16];
        for k in 0..8 {
            out[k] = d.form(p.u(), &self.range[k].0);
            out[k + 8] = d.form(p.v(), &self.range[k].0);
        }
        out
    }
}

/// Shared immutable DCT basis.
pub fn dct_basis() -> &'static DctBasis {
    static B: OnceLock<DctBasis> = OnceLock::new();
    B.get_or_init(DctBasis::build)
}

/// A line through the origin of ℝ², i.e. a point of ℝP¹, as an angle in `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ProjectiveAngle(f64);

impl ProjectiveAngle {
    pub fn new(theta: f64) -> Self {
        let r = theta.rem_euclid(PI);
        ProjectiveAngle(if r >= PI { 0.0 } else { r })
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    /// `min(|θ₁−θ₂|, π−|θ₁−θ₂|)`.
    pub fn distance(self, other: ProjectiveAngle) -> f64 {
        let d = (self.0 - other.0).abs();
        d.min(PI - d)
    }
}

fn eigen_gap(p: &FlowPatch) -> (f64, f64, f64) {
    let (a, b, c) = p.arrow_moments();
    let half_diff = 0.5 * (a - c);
    let gap = 2.0 * half_diff.hypot(b);
    let largest = 0.5 * (a + c) + 0.5 * gap;
    let angle = 0.5 * (2.0 * b).atan2(a - c);
    (gap, largest, angle)
}

/// Eigenvalues of `AᵀA`, largest first.
pub fn arrow_eigenvalues(p: &FlowPatch) -> (f64, f64) {
    let (gap, largest, _) = eigen_gap(p);
    (largest, largest - gap)
}

/// Line spanned by the leading singular vector of the 9×2 arrow matrix.
pub fn predominant_direction(p: &FlowPatch) -> Result<ProjectiveAngle, PatchError> {
    let (gap, largest, angle) = eigen_gap(p);
    if largest <= 0.0 || gap <= UNDIRECTIONAL_EPS * largest {
        return Err(PatchError::Undirectional);
    }
    Ok(ProjectiveAngle::new(angle))
}

/// `|λ₁−λ₂| / max(λ₁,λ₂)` for the eigenvalues of `AᵀA`; 0 for the zero patch.
pub fn directionality(p: &FlowPatch) -> f64 {
    let (gap, largest, _) = eigen_gap(p);
    if largest <= 0.0 {
        return 0.0;
    }
    (gap / largest).clamp(0.0, 1.0)
}

/// Projection onto the plane spanned by `cosθ·e₁^u + sinθ·e₁^v` and
/// `cosθ·e₂^u + sinθ·e₂^v`, with the Euclidean inner product.
pub fn plane_projection(p: &FlowPatch, theta: f64) -> [f64; 2] {
    let b = dct_basis();
    let (s, c) = theta.sin_cos();
    let a1 = c * b.eu(1) + s * b.ev(1);
    let a2 = c * b.eu(2) + s * b.ev(2);
    [p.dot(&a1), p.dot(&a2)]
}

/// Distance used between patches when forming point clouds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchMetric {
    /// Euclidean distance in ℝ¹⁸.
    #[default]
    Euclidean,
    /// Distance induced by the contrast form, i.e. Euclidean distance
    /// between DCT coordinates.
    Contrast,
}

/// Embeds patches so that Euclidean distance between rows is `metric`.
pub fn embed_patches(patches: &[FlowPatch], metric: PatchMetric) -> crate::Points {
    match metric {
        PatchMetric::Euclidean => {
            crate::Points::new(FLOW_DIM, patches.iter().flat_map(|p| p.0).collect())
        }
        PatchMetric::Contrast => {
            let b = dct_basis();
            let coords = patches.iter().flat_map(|p| b.d_coordinates(&mean_center(p))).collect();
            crate::Points::new(16, coords)
        }
    }
}

/// Principal-component projection of a set of patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// Per-point coordinates along the leading axes.
    pub coords: Vec<Vec<f64>>,
    /// Unit axes in ℝ¹⁸, ordered by decreasing variance.
    pub axes: Vec<[f64; FLOW_DIM]>,
    /// Singular values of the centred data matrix, for all 18 axes.
    pub singular_values: Vec<f64>,
    /// The `dim`-th and `(dim+1)`-th singular values coincide, so the
    /// retained subspace is not unique.
    pub degenerate: bool,
}

/// Projects mean-centred patches onto their top `dim` principal axes. Each
/// axis is signed so its first non-negligible loading is positive.
pub fn pca_project(points: &[FlowPatch], dim: usize) -> Result<PcaProjection, PatchError> {
    if dim == 0 || dim > FLOW_DIM {
        return Err(PatchError::BadDimension(dim));
    }
    if points.len() < dim {
        return Err(PatchError::TooFewPoints { needed: dim, got: points.len() });
    }
    let n = points.len() as f64;
    let mut mean = [0.0; FLOW_DIM];
    for p in points {
        mean.iter_mut().zip(&p.0).for_each(|(m, x)| *m += x / n);
    }
    let mut scatter = SMatrix::<f64, FLOW_DIM, FLOW_DIM>::zeros();
    for p in points {
        let c = SVector::<f64, FLOW_DIM>::from_fn(|i, _| p.0[i] - mean[i]);
        scatter += c * c.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..FLOW_DIM).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let singular_values: Vec<f64> =
        order.iter().map(|&k| eig.eigenvalues[k].max(0.0).sqrt()).collect();
    let degenerate =
        dim < FLOW_DIM && (singular_values[dim - 1] - singular_values[dim]).abs() <= 1e-12;
    let axes: Vec<[f64; FLOW_DIM]> = order[..dim]
        .iter()
        .map(|&k| {
            let mut axis = [0.0; FLOW_DIM];
            axis.copy_from_slice(eig.eigenvectors.column(k).as_slice());
            if let Some(first) = axis.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    axis.iter_mut().for_each(|x| *x = -*x);
                }
            }
            axis
        })
        .collect();
    let coords = points
        .iter()
        .map(|p| {
            axes.iter()
                .map(|a| a.iter().zip(&p.0).zip(&mean).map(|((w, x), m)| w * (x - m)).sum())
                .collect()
        })
        .collect();
    Ok(PcaProjection { coords, axes, singular_values, degenerate })
}

/// The line spanned by a direction vector.
pub fn axis_of(direction: [f64; 2]) -> ProjectiveAngle {
    ProjectiveAngle::new(direction[1].atan2(direction[0]))
}
