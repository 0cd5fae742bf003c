//! Discrete approximate circle bundles over a circular base.
//!
//! The base is either ℝP¹ (period π, predominant flow direction) or S¹
//! (period 2π, lifted direction or a control feature). The pipeline covers the
//! base with `N` arcs whose nerve is an `N`-cycle, computes circular
//! coordinates on every fiber, estimates O(2) transition matrices by
//! Procrustes alignment, tests orientability through the determinant cocycle,
//! synchronizes the charts and glues them into one fiber coordinate.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circular::{circular_coordinates, CircularError, CircularOptions};
use crate::patch::{directionality, predominant_direction, FlowPatch};
use crate::points::Points;
use crate::stats::{wrap_pi, wrap_tau};

/// Fibers smaller than this are flagged as statistically unusable.
pub const MIN_FIBER_SIZE: usize = 30;
pub const SPECTRAL_GAP_TOLERANCE: f64 = 1e-6;
const KARCHER_MAX_STEPS: usize = 50;
const KARCHER_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BundleError {
    #[error("bad cover parameters: {0}")]
    BadParams(String),
    #[error("Procrustes alignment needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("charts {j} and {k} share only {shared} points")]
    ThinOverlap { j: usize, k: usize, shared: usize },
    #[error("weights must be non-negative with a positive sum")]
    BadWeights,
    #[error("weighted mean direction is undefined (antipodal configuration)")]
    AntipodalDegenerate,
    #[error("directionality {0} is below 0.5")]
    LowDirectionality(f64),
    #[error("third moment vanishes; lifted direction is ambiguous")]
    SignAmbiguous,
    #[error("fiber {fiber}: {source}")]
    Fiber { fiber: usize, source: CircularError },
    #[error("fiber {0} is empty")]
    EmptyFiber(usize),
}

/// The circle the feature map lands in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSpace {
    /// Angles mod π.
    ProjectiveLine,
    /// Angles mod 2π.
    Circle,
}

impl BaseSpace {
    pub fn period(self) -> f64 {
        match self {
            BaseSpace::ProjectiveLine => PI,
            BaseSpace::Circle => TAU,
        }
    }

    pub fn distance(self, a: f64, b: f64) -> f64 {
        let p = self.period();
        let d = (a - b).rem_euclid(p);
        d.min(p - d)
    }
}

/// `N` equally spaced open arcs `U_j = B(l_j, ρ)` with `l_j = j·period/N`
/// (`j = 1..N`) and `ρ = (period/(2N))(1 + c)`. Chart `j` is stored at
/// position `j − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cover {
    pub base: BaseSpace,
    pub n: usize,
    pub c: f64,
    pub landmarks: Vec<f64>,
    pub radius: f64,
}

impl Cover {
    /// Nerve edges `(j, j+1 mod N)` as 0-based chart positions.
    pub fn nerve(&self) -> Vec<(usize, usize)> {
        (0..self.n).map(|j| (j, (j + 1) % self.n)).map(|(a, b)| (a.min(b), a.max(b))).collect()
    }

    pub fn contains(&self, chart: usize, b: f64) -> bool {
        self.base.distance(b, self.landmarks[chart]) < self.radius
    }

    /// Tent weight `max(0, ρ − d(b, l_j))`.
    pub fn tent(&self, chart: usize, b: f64) -> f64 {
        (self.radius - self.base.distance(b, self.landmarks[chart])).max(0.0)
    }

    /// Charts containing `b`.
    pub fn charts_of(&self, b: f64) -> Vec<usize> {
        (0..self.n).filter(|&j| self.contains(j, b)).collect()
    }
}

fn arcs_share_point(cover: &Cover, arcs: &[usize]) -> bool {
    // A nonempty intersection of open arcs contains a point just after one
    // of their left endpoints.
    let eps = 1e-9 * cover.base.period();
    arcs.iter().any(|&a| {
        let probe = cover.landmarks[a] - cover.radius + eps;
        arcs.iter().all(|&b| cover.contains(b, probe))
    })
}

/// Cover of ℝP¹.
pub fn build_cover(n: usize, c: f64) -> Result<Cover, BundleError> {
    build_cover_on(BaseSpace::ProjectiveLine, n, c)
}

pub fn build_cover_on(base: BaseSpace, n: usize, c: f64) -> Result<Cover, BundleError> {
    if n < 3 {
        return Err(BundleError::BadParams(format!("need N >= 3, got {n}")));
    }
    if !(c > 0.0 && c <= 0.5) {
        return Err(BundleError::BadParams(format!("overlap c = {c} not in (0, 1/2]")));
    }
    let period = base.period();
    let landmarks = (1..=n).map(|j| (j as f64 * period / n as f64) % period).collect();
    let cover = Cover { base, n, c, landmarks, radius: period / (2.0 * n as f64) * (1.0 + c) };

    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if arcs_share_point(&cover, &[a, b]) {
                edges.push((a, b));
            }
            for t in b + 1..n {
                if arcs_share_point(&cover, &[a, b, t]) {
                    return Err(BundleError::BadParams(format!("arcs {a}, {b}, {t} share a point")));
                }
            }
        }
    }
    let mut cycle = cover.nerve();
    cycle.sort();
    if edges != cycle {
        return Err(BundleError::BadParams("nerve is not an N-cycle".into()));
    }
    Ok(cover)
}

/// Fiber membership `X_j = {x : d(p(x), l_j) < ρ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fibers {
    pub members: Vec<Vec<usize>>,
    /// Records without a base value.
    pub dropped: usize,
    /// Charts with fewer than `MIN_FIBER_SIZE` members.
    pub small: Vec<usize>,
}

pub fn assign_fibers(base: &[Option<f64>], cover: &Cover) -> Fibers {
    let mut members = vec![Vec::new(); cover.n];
    let mut dropped = 0;
    for (i, b) in base.iter().enumerate() {
        match b {
            Some(b) => {
                for j in cover.charts_of(*b) {
                    members[j].push(i);
                }
            }
            None => dropped += 1,
        }
    }
    let small = (0..cover.n).filter(|&j| members[j].len() < MIN_FIBER_SIZE).collect();
    Fibers { members, dropped, small }
}

/// A 2×2 orthogonal matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct O2(pub [[f64; 2]; 2]);

impl O2 {
    pub const IDENTITY: O2 = O2([[1.0, 0.0], [0.0, 1.0]]);
    /// `diag(1, −1)`.
    pub const FLIP: O2 = O2([[1.0, 0.0], [0.0, -1.0]]);

    pub fn rotation(phi: f64) -> O2 {
        let (s, c) = phi.sin_cos();
        O2([[c, -s], [s, c]])
    }

    /// Reflection across the line at angle `phi/2`.
    pub fn reflection(phi: f64) -> O2 {
        let (s, c) = phi.sin_cos();
        O2([[c, s], [s, -c]])
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn transpose(&self) -> O2 {
        O2([[self.0[0][0], self.0[1][0]], [self.0[0][1], self.0[1][1]]])
    }

    pub fn mul(&self, o: &O2) -> O2 {
        let a = &self.0;
        let b = &o.0;
        O2([
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ])
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [self.0[0][0] * v[0] + self.0[0][1] * v[1], self.0[1][0] * v[0] + self.0[1][1] * v[1]]
    }

    /// Image of the angle `a` as an angle.
    pub fn apply_angle(&self, a: f64) -> f64 {
        let v = self.apply([a.cos(), a.sin()]);
        wrap_tau(v[1].atan2(v[0]))
    }

    pub fn frobenius_distance(&self, o: &O2) -> f64 {
        let mut s = 0.0;
        for r in 0..2 {
            for c in 0..2 {
                s += (self.0[r][c] - o.0[r][c]).powi(2);
            }
        }
        s.sqrt()
    }
}

/// Orthogonal `Ω` minimising `Σ |a_i − Ω b_i|²`, from the cross-covariance
/// `M = Σ a_i b_iᵀ`. Rotation wins ties.
pub fn procrustes_o2(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<O2, BundleError> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return Err(BundleError::TooFewPairs(a.len()));
    }
    let mut m = [[0.0; 2]; 2];
    for (x, y) in a.iter().zip(b) {
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] += x[r] * y[c];
            }
        }
    }
    let (rs, rc) = (m[1][0] - m[0][1], m[0][0] + m[1][1]);
    let (fs, fc) = (m[0][1] + m[1][0], m[0][0] - m[1][1]);
    if rs.hypot(rc) >= fs.hypot(fc) {
        Ok(O2::rotation(rs.atan2(rc)))
    } else {
        Ok(O2::reflection(fs.atan2(fc)))
    }
}

fn unit(a: f64) -> [f64; 2] {
    [a.cos(), a.sin()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeTransition {
    pub j: usize,
    pub k: usize,
    /// `f_j ≈ Ω_jk f_k` on `X_j ∩ X_k`.
    pub omega: O2,
    /// Mean of `|f_j − Ω_jk f_k|²` over the overlap.
    pub error: f64,
    pub shared: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCocycle {
    pub n: usize,
    pub edges: Vec<EdgeTransition>,
}

impl TransitionCocycle {
    /// `Ω_jk` for either orientation of a nerve edge.
    pub fn get(&self, j: usize, k: usize) -> Option<O2> {
        self.edges.iter().find_map(|e| {
            if e.j == j && e.k == k {
                Some(e.omega)
            } else if e.j == k && e.k == j {
                Some(e.omega.transpose())
            } else {
                None
            }
        })
    }
}

/// Per-chart angles keyed by record index.
pub type LocalCoordinates = Vec<std::collections::HashMap<usize, f64>>;

pub fn transition_cocycle(
    local: &LocalCoordinates,
    nerve: &[(usize, usize)],
) -> Result<TransitionCocycle, BundleError> {
    let mut edges = Vec::with_capacity(nerve.len());
    for &(j, k) in nerve {
        let mut shared: Vec<usize> = local[j].keys().filter(|i| local[k].contains_key(i)).copied().collect();
        shared.sort_unstable();
        if shared.len() < 2 {
            return Err(BundleError::ThinOverlap { j, k, shared: shared.len() });
        }
        let a: Vec<[f64; 2]> = shared.iter().map(|i| unit(local[j][i])).collect();
        let b: Vec<[f64; 2]> = shared.iter().map(|i| unit(local[k][i])).collect();
        let omega = procrustes_o2(&a, &b)?;
        let error = a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                let z = omega.apply(*y);
                (x[0] - z[0]).powi(2) + (x[1] - z[1]).powi(2)
            })
            .sum::<f64>()
            / shared.len() as f64;
        edges.push(EdgeTransition { j, k, omega, error, shared: shared.len() });
    }
    Ok(TransitionCocycle { n: local.len(), edges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationClass {
    /// `(j, k, det Ω_jk)` per nerve edge.
    pub signs: Vec<(usize, usize, i8)>,
    /// `τ` with `ω_jk = τ_j τ_k`, when `ω` is a coboundary.
    pub potential: Option<Vec<i8>>,
}

impl OrientationClass {
    pub fn is_coboundary(&self) -> bool {
        self.potential.is_some()
    }

    pub fn cycle_product(&self) -> i8 {
        self.signs.iter().map(|s| s.2).product()
    }
}

/// Spanning-tree propagation from chart 0, then verification on the
/// remaining edges.
pub fn orientation_class(cocycle: &TransitionCocycle) -> OrientationClass {
    let signs: Vec<(usize, usize, i8)> =
        cocycle.edges.iter().map(|e| (e.j, e.k, if e.omega.det() >= 0.0 { 1 } else { -1 })).collect();
    OrientationClass { potential: sign_potential(cocycle.n, &signs), signs }
}

fn sign_potential(n: usize, signs: &[(usize, usize, i8)]) -> Option<Vec<i8>> {
    let mut adj = vec![Vec::new(); n];
    for &(j, k, s) in signs {
        adj[j].push((k, s));
        adj[k].push((j, s));
    }
    let mut tau = vec![0i8; n];
    tau[0] = 1;
    let mut queue = VecDeque::from([0]);
    while let Some(j) = queue.pop_front() {
        for &(k, s) in &adj[j] {
            if tau[k] == 0 {
                tau[k] = s * tau[j];
                queue.push_back(k);
            }
        }
    }
    if tau.contains(&0) {
        return None;
    }
    signs.iter().all(|&(j, k, s)| tau[j] * tau[k] == s).then_some(tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synchronization {
    /// `μ_j` with `Ω_jk ≈ μ_jᵀ μ_k`.
    pub frames: Vec<O2>,
    /// `max ‖Ω_jk − μ_jᵀ μ_k‖_F` over nerve edges.
    pub residual: f64,
    pub spectral_gap: f64,
    /// Top two eigenvalues closer than `SPECTRAL_GAP_TOLERANCE`.
    pub gap_warning: bool,
}

/// Singer synchronization after removing reflections with the potential.
pub fn synchronize(cocycle: &TransitionCocycle, tau: &[i8]) -> Synchronization {
    let n = cocycle.n;
    let flip = |j: usize| if tau[j] < 0 { O2::FLIP } else { O2::IDENTITY };
    let mut h = DMatrix::<Complex64>::zeros(n, n);
    for e in &cocycle.edges {
        let rot = flip(e.j).mul(&e.omega).mul(&flip(e.k));
        let theta = rot.0[1][0].atan2(rot.0[0][0]);
        h[(e.j, e.k)] = Complex64::from_polar(1.0, theta);
        h[(e.k, e.j)] = Complex64::from_polar(1.0, -theta);
    }
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvectors.column(order[0]);
    let spectral_gap = if n > 1 { eig.eigenvalues[order[0]] - eig.eigenvalues[order[1]] } else { f64::INFINITY };
    // Fix the global phase so chart 0 has ν = 0; keeps output deterministic.
    let phase0 = top[0].arg();
    let frames: Vec<O2> = (0..n)
        .map(|j| {
            let nu = -(top[j].arg() - phase0);
            O2::rotation(nu).mul(&flip(j))
        })
        .collect();
    let residual = cocycle
        .edges
        .iter()
        .map(|e| e.omega.frobenius_distance(&frames[e.j].transpose().mul(&frames[e.k])))
        .fold(0.0, f64::max);
    Synchronization { frames, residual, spectral_gap, gap_warning: spectral_gap < SPECTRAL_GAP_TOLERANCE }
}

/// Weighted Karcher mean on S¹.
pub fn karcher_mean_s1(angles: &[f64], weights: &[f64]) -> Result<f64, BundleError> {
    assert_eq!(angles.len(), weights.len());
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|&w| !(w >= 0.0)) || !(total > 0.0) {
        return Err(BundleError::BadWeights);
    }
    let (mut c, mut s) = (0.0, 0.0);
    for (a, w) in angles.iter().zip(weights) {
        c += w * a.cos();
        s += w * a.sin();
    }
    if (c / total).hypot(s / total) < 1e-9 {
        return Err(BundleError::AntipodalDegenerate);
    }
    let mut y = s.atan2(c);
    for _ in 0..KARCHER_MAX_STEPS {
        let grad: f64 = angles.iter().zip(weights).map(|(a, w)| w * wrap_pi(y - a)).sum::<f64>() / total;
        if grad.abs() < KARCHER_TOLERANCE {
            break;
        }
        y -= grad;
    }
    Ok(wrap_tau(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalTrivialization {
    /// Base value per record (`None` for dropped records).
    pub base: Vec<Option<f64>>,
    /// Fiber angle per record (`None` when no chart covers it).
    pub fiber: Vec<Option<f64>>,
    /// Largest angular spread of the aligned chart values per record.
    pub disagreement: Vec<f64>,
    /// Records whose chart values were antipodal; valued at their first chart.
    pub degenerate: usize,
}

impl GlobalTrivialization {
    /// `index,base,fiber` rows; missing values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,base,fiber\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for i in 0..self.base.len() {
            out.push_str(&format!("{i},{},{}\n", fmt(self.base[i]), fmt(self.fiber[i])));
        }
        out
    }
}

/// Glues `μ_k f_k(x)` over the charts containing `x` with tent weights.
pub fn global_trivialization(
    base: &[Option<f64>],
    cover: &Cover,
    local: &LocalCoordinates,
    frames: &[O2],
) -> GlobalTrivialization {
    let mut fiber = vec![None; base.len()];
    let mut disagreement = vec![0.0; base.len()];
    let mut degenerate = 0;
    for (i, b) in base.iter().enumerate() {
        let Some(b) = b else { continue };
        let mut angles = Vec::new();
        let mut weights = Vec::new();
        for k in cover.charts_of(*b) {
            if let Some(&f) = local[k].get(&i) {
                angles.push(frames[k].apply_angle(f));
                weights.push(cover.tent(k, *b));
            }
        }
        if angles.is_empty() {
            continue;
        }
        for x in 0..angles.len() {
            for y in 0..x {
                disagreement[i] = f64::max(disagreement[i], wrap_pi(angles[x] - angles[y]).abs());
            }
        }
        fiber[i] = Some(match karcher_mean_s1(&angles, &weights) {
            Ok(m) => m,
            Err(_) => {
                degenerate += 1;
                let first = weights.iter().position(|&w| w > 0.0).unwrap_or(0);
                angles[first]
            }
        });
    }
    GlobalTrivialization { base: base.to_vec(), fiber, disagreement, degenerate }
}

/// Direction of the dominant flow, resolved from the predominant axis by the
/// sign of the third moment `Σ ⟨(u_i, v_i), v⟩³`.
pub fn lifted_direction(p: &FlowPatch) -> Result<f64, BundleError> {
    let r = directionality(p);
    if !(r > 0.5) {
        return Err(BundleError::LowDirectionality(r));
    }
    let axis = predominant_direction(p).expect("directional patch").radians();
    let m3 = p.third_moment(axis);
    if m3.abs() < 1e-12 {
        return Err(BundleError::SignAmbiguous);
    }
    Ok(if m3 > 0.0 { axis } else { wrap_tau(axis + PI) })
}

/// Base value for every patch: its predominant direction mod π.
pub fn projective_base(patches: &[FlowPatch]) -> Vec<Option<f64>> {
    patches.iter().map(|p| predominant_direction(p).ok().map(|d| d.radians())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub n_sets: usize,
    pub overlap: f64,
    pub circular: CircularOptions,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self { n_sets: 16, overlap: 0.5, circular: CircularOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSummary {
    pub size: usize,
    pub class_birth: f64,
    pub class_death: f64,
    pub landmarks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub cover: Cover,
    pub fibers: Fibers,
    pub charts: Vec<ChartSummary>,
    pub cocycle: TransitionCocycle,
    pub orientation: OrientationClass,
    /// Present only in the orientable case.
    pub synchronization: Option<Synchronization>,
    pub trivialization: Option<GlobalTrivialization>,
}

impl BundleReport {
    pub fn orientable(&self) -> bool {
        self.orientation.is_coboundary()
    }
}

/// Circular coordinates on every fiber, in parallel.
pub fn local_coordinates(
    points: &Points,
    fibers: &Fibers,
    opts: &CircularOptions,
) -> Result<(LocalCoordinates, Vec<ChartSummary>), BundleError> {
    let results: Vec<Result<_, BundleError>> = fibers
        .members
        .par_iter()
        .enumerate()
        .map(|(j, members)| {
            if members.is_empty() {
                return Err(BundleError::EmptyFiber(j));
            }
            let cc = circular_coordinates(&points.select(members), opts)
                .map_err(|source| BundleError::Fiber { fiber: j, source })?;
            let map = members.iter().copied().zip(cc.values.iter().copied()).collect();
            let summary = ChartSummary {
                size: members.len(),
                class_birth: cc.class_birth,
                class_death: cc.class_death,
                landmarks: cc.landmarks.len(),
            };
            Ok((map, summary))
        })
        .collect();
    let mut local = Vec::with_capacity(results.len());
    let mut charts = Vec::with_capacity(results.len());
    for r in results {
        let (m, s) = r?;
        local.push(m);
        charts.push(s);
    }
    Ok((local, charts))
}

/// Steps after the local trivializations: cocycle, orientation class and,
/// when orientable, synchronization and gluing.
pub fn glue(
    base: &[Option<f64>],
    cover: Cover,
    fibers: Fibers,
    charts: Vec<ChartSummary>,
    local: &LocalCoordinates,
) -> Result<BundleReport, BundleError> {
    let cocycle = transition_cocycle(local, &cover.nerve())?;
    let orientation = orientation_class(&cocycle);
    let (synchronization, trivialization) = match &orientation.potential {
        Some(tau) => {
            let sync = synchronize(&cocycle, tau);
            let triv = global_trivialization(base, &cover, local, &sync.frames);
            (Some(sync), Some(triv))
        }
        None => (None, None),
    };
    Ok(BundleReport { cover, fibers, charts, cocycle, orientation, synchronization, trivialization })
}

/// The whole pipeline on `points` with feature values `base`.
pub fn run_bundle(
    points: &Points,
    base: &[Option<f64>],
    space: BaseSpace,
    config: &BundleConfig,
) -> Result<BundleReport, BundleError> {
    let cover = build_cover_on(space, config.n_sets, config.overlap)?;
    let fibers = assign_fibers(base, &cover);
    let (local, charts) = local_coordinates(points, &fibers, &config.circular)?;
    glue(base, cover, fibers, charts, &local)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{step_edge_catalog, step_edge_flow_patch};
    use crate::patch::ProjectiveAngle;
    use crate::stats::circular_correlation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn cover_examples() {
        let c = build_cover(16, 0.5).unwrap();
        assert!((c.radius - 3.0 * PI / 64.0).abs() < 1e-15);
        assert_eq!(c.nerve().len(), 16);
        let t = build_cover(3, 0.5).unwrap();
        assert_eq!(t.nerve(), vec![(0, 1), (1, 2), (0, 2)]);
        assert!(build_cover(2, 0.5).is_err());
        assert!(build_cover(16, 0.0).is_err());
        assert!(build_cover(16, 0.6).is_err());
        assert_eq!(c.charts_of(c.landmarks[4]), vec![4]);
        let mid = (c.landmarks[4] + c.landmarks[5]) / 2.0;
        assert_eq!(c.charts_of(mid), vec![4, 5]);
        assert!((c.landmarks[15]).abs() < 1e-12);
    }

    #[test]
    fn fibers_hold_one_or_two_charts() {
        let c = build_cover(16, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base: Vec<Option<f64>> = (0..4000).map(|_| Some(rng.random_range(0.0..PI))).collect();
        let f = assign_fibers(&base, &c);
        let mut count = vec![0; base.len()];
        for m in &f.members {
            for &i in m {
                count[i] += 1;
            }
        }
        assert!(count.iter().all(|&k| k == 1 || k == 2));
        let expected = 4000.0 * 1.5 / 16.0;
        for m in &f.members {
            assert!((m.len() as f64 - expected).abs() < 3.0 * (4000f64).sqrt());
        }
    }

    #[test]
    fn procrustes_examples() {
        let b: Vec<[f64; 2]> = [0.1, 1.3, 2.9, 4.0].iter().map(|&a| unit(a)).collect();
        let id = procrustes_o2(&b, &b).unwrap();
        assert!(id.frobenius_distance(&O2::IDENTITY) < 1e-12);
        let neg: Vec<[f64; 2]> = b.iter().map(|v| [-v[0], -v[1]]).collect();
        assert!(procrustes_o2(&neg, &b).unwrap().frobenius_distance(&O2::rotation(PI)) < 1e-12);
        let conj: Vec<[f64; 2]> = b.iter().map(|v| [v[0], -v[1]]).collect();
        assert!(procrustes_o2(&conj, &b).unwrap().frobenius_distance(&O2::FLIP) < 1e-12);
        assert_eq!(procrustes_o2(&b[..1], &b[..1]), Err(BundleError::TooFewPairs(1)));
    }

    fn sign_cocycle(signs: &[i8]) -> TransitionCocycle {
        let n = signs.len();
        let edges = (0..n)
            .map(|j| {
                let (a, b) = (j.min((j + 1) % n), j.max((j + 1) % n));
                let omega = if signs[j] > 0 { O2::rotation(0.3) } else { O2::reflection(0.3) };
                EdgeTransition { j: a, k: b, omega, error: 0.0, shared: 10 }
            })
            .collect();
        TransitionCocycle { n, edges }
    }

    #[test]
    fn orientation_examples() {
        let all = orientation_class(&sign_cocycle(&[1; 16]));
        assert_eq!(all.potential, Some(vec![1; 16]));
        let mut one = [1i8; 16];
        one[5] = -1;
        assert!(!orientation_class(&sign_cocycle(&one)).is_coboundary());
        let mut two = one;
        two[11] = -1;
        let oc = orientation_class(&sign_cocycle(&two));
        let tau = oc.potential.unwrap();
        for &(j, k, s) in &oc.signs {
            assert_eq!(tau[j] * tau[k], s);
        }
        assert_eq!(tau.iter().filter(|&&t| t < 0).count(), 6);
    }

    fn random_frames(n: usize, seed: u64) -> Vec<O2> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a = rng.random_range(0.0..TAU);
                if rng.random_bool(0.5) {
                    O2::rotation(a)
                } else {
                    O2::reflection(a)
                }
            })
            .collect()
    }

    fn exact_cocycle(mu: &[O2]) -> TransitionCocycle {
        let n = mu.len();
        let edges = (0..n)
            .map(|j| {
                let (a, b) = (j.min((j + 1) % n), j.max((j + 1) % n));
                EdgeTransition { j: a, k: b, omega: mu[a].transpose().mul(&mu[b]), error: 0.0, shared: 10 }
            })
            .collect();
        TransitionCocycle { n, edges }
    }

    #[test]
    fn synchronization_recovers_exact_frames() {
        let mu = random_frames(16, 3);
        let cocycle = exact_cocycle(&mu);
        let oc = orientation_class(&cocycle);
        let sync = synchronize(&cocycle, oc.potential.as_ref().unwrap());
        assert!(sync.residual < 1e-8);
        // same up to a global left action
        let g = mu[0].mul(&sync.frames[0].transpose());
        for j in 0..16 {
            assert!(g.mul(&sync.frames[j]).frobenius_distance(&mu[j]) < 1e-8);
        }
    }

    #[test]
    fn identity_cocycle_gives_equal_frames() {
        let cocycle = exact_cocycle(&[O2::IDENTITY; 16]);
        let sync = synchronize(&cocycle, &[1; 16]);
        for f in &sync.frames {
            assert!(f.frobenius_distance(&sync.frames[0]) < 1e-10);
        }
    }

    #[test]
    fn noisy_synchronization() {
        let mu = random_frames(16, 4);
        let mut cocycle = exact_cocycle(&mu);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for e in &mut cocycle.edges {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            e.omega = e.omega.mul(&O2::rotation(0.05 * z));
        }
        let oc = orientation_class(&cocycle);
        assert!(synchronize(&cocycle, oc.potential.as_ref().unwrap()).residual < 0.2);
    }

    #[test]
    fn karcher_examples() {
        assert_eq!(karcher_mean_s1(&[1.0, 2.0, 3.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
        let m = karcher_mean_s1(&[-0.3, 0.3], &[1.0, 1.0]).unwrap();
        assert!(wrap_pi(m).abs() < 1e-12);
        assert_eq!(karcher_mean_s1(&[0.0, PI], &[1.0, 1.0]), Err(BundleError::AntipodalDegenerate));
        assert_eq!(karcher_mean_s1(&[0.0], &[0.0]), Err(BundleError::BadWeights));
        // intrinsic, not extrinsic: three clustered points and a far one
        let a = [0.0, 0.1, 0.2, 2.0];
        let m = karcher_mean_s1(&a, &[1.0; 4]).unwrap();
        let g: f64 = a.iter().map(|x| wrap_pi(m - x)).sum();
        assert!(g.abs() < 1e-9);
    }

    #[test]
    fn exact_bundle_glues_to_ground_truth() {
        let cover = build_cover(16, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 3000;
        let base: Vec<Option<f64>> = (0..n).map(|_| Some(rng.random_range(0.0..PI))).collect();
        // global angle, double-covering θ ↦ θ + π consistently
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
        let fibers = assign_fibers(&base, &cover);
        let mu = random_frames(16, 9);
        let local: LocalCoordinates = fibers
            .members
            .iter()
            .enumerate()
            .map(|(j, m)| m.iter().map(|&i| (i, mu[j].transpose().apply_angle(truth[i]))).collect::<HashMap<_, _>>())
            .collect();
        let report = glue(&base, cover, fibers, vec![], &local).unwrap();
        assert!(report.orientable());
        assert!(report.cocycle.edges.iter().all(|e| e.error < 1e-20));
        let triv = report.trivialization.unwrap();
        let fib: Vec<f64> = triv.fiber.iter().map(|f| f.unwrap()).collect();
        // one global O(2) element maps the recovered angles onto the truth
        let a: Vec<[f64; 2]> = truth.iter().map(|&t| unit(t)).collect();
        let b: Vec<[f64; 2]> = fib.iter().map(|&t| unit(t)).collect();
        let g = procrustes_o2(&a, &b).unwrap();
        let worst = fib.iter().zip(&truth).map(|(f, t)| wrap_pi(g.apply_angle(*f) - t).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6);
        assert!(circular_correlation(&fib, &truth) > 0.999_999);
    }

    #[test]
    fn gauge_changes_keep_the_verdict() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let mu = random_frames(16, 100 + trial);
            let mut cocycle = exact_cocycle(&mu);
            if trial % 2 == 1 {
                // break orientability on one edge
                cocycle.edges[3].omega = cocycle.edges[3].omega.mul(&O2::FLIP);
            }
            let before = orientation_class(&cocycle).is_coboundary();
            let gauge = random_frames(16, rng.random());
            for e in &mut cocycle.edges {
                e.omega = gauge[e.j].mul(&e.omega).mul(&gauge[e.k].transpose());
            }
            assert_eq!(orientation_class(&cocycle).is_coboundary(), before);
            assert_eq!(before, trial % 2 == 0);
        }
    }

    #[test]
    fn lifted_direction_on_step_edges() {
        let corner = step_edge_catalog().iter().find(|e| e.ones() == 1).unwrap();
        let east = step_edge_flow_patch(corner, [1.0, 0.0]).unwrap();
        assert!(lifted_direction(&east).unwrap().abs() < 1e-9);
        let west = step_edge_flow_patch(corner, [-1.0, 0.0]).unwrap();
        assert!((lifted_direction(&west).unwrap() - PI).abs() < 1e-9);
        for e in step_edge_catalog() {
            for k in 0..16 {
                let a = k as f64 * TAU / 16.0;
                let p = step_edge_flow_patch(e, unit(a)).unwrap();
                let lift = lifted_direction(&p).unwrap();
                let axis = predominant_direction(&p).unwrap();
                assert!(ProjectiveAngle::new(lift).distance(axis) < 1e-9);
                let expected = if e.ones() <= 4 { a } else { a + PI };
                assert!(wrap_pi(lift - expected).abs() < 1e-9);
            }
        }
    }
}
