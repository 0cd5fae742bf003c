//! Sparse circular coordinates from a 1-dimensional persistent cohomology
//! class.
//!
//! Landmarks are picked by max-min sampling. The chosen class is computed on
//! the landmark Rips complex, lifted from `ℤ_p` to integers, smoothed into a
//! density-weighted harmonic real cocycle and spread to every point with a
//! partition of unity over landmark balls.

use std::collections::HashMap;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persistence::{rips_persistence_points, PersistenceError, RipsOptions, DEFAULT_PRIME};
use crate::points::{maxmin_subsample, Points};
use crate::stats::wrap_tau;

pub const MIN_LANDMARKS: usize = 8;
/// Position of the smoothing scale inside the persistence interval.
pub const SCALE_FRACTION: f64 = 0.4;
const CG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircularError {
    #[error("need at least {MIN_LANDMARKS} landmarks, got {0}")]
    TooFewLandmarks(usize),
    #[error("no usable 1-dimensional class: {0}")]
    NoClass(String),
    #[error("integer lift of the cocycle is not closed; try another prime")]
    LiftFailure,
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularOptions {
    /// Defaults to `min(60, n/5)`, at least 8.
    pub n_landmarks: Option<usize>,
    /// Rank of the class among dimension-1 classes by decreasing persistence.
    pub class_index: usize,
    pub prime: u32,
}

impl Default for CircularOptions {
    fn default() -> Self {
        Self { n_landmarks: None, class_index: 0, prime: DEFAULT_PRIME }
    }
}

/// Default landmark count for `n` points.
pub fn default_landmarks(n: usize) -> usize {
    (n / 5).min(60).max(MIN_LANDMARKS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircularCoordinates {
    /// Angle in `[0, 2π)` per input point.
    pub values: Vec<f64>,
    pub landmarks: Vec<usize>,
    /// Max distance from a point to its nearest landmark.
    pub coverage_radius: f64,
    /// Radius of the landmark balls used for the partition of unity.
    pub ball_radius: f64,
    pub class_birth: f64,
    pub class_death: f64,
    pub class_persistence: f64,
    /// Points outside every ball, valued at their nearest landmark.
    pub uncovered: usize,
}

impl CircularCoordinates {
    /// `point_index,angle` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("point_index,angle\n");
        for (i, a) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{a}\n"));
        }
        out
    }
}

/// Lifts `c ∈ ℤ_p` to the representative in `(-p/2, p/2]`.
fn lift(c: u32, p: u32) -> i64 {
    let c = c as i64;
    if 2 * c > p as i64 {
        c - p as i64
    } else {
        c
    }
}

/// Conjugate gradients for the singular but consistent system `L x = b`.
fn conjugate_gradient(apply: impl Fn(&[f64], &mut [f64]), b: &[f64], max_iter: usize) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return x;
    }
    let mut r = b.to_vec();
    let mut d = r.clone();
    let mut rr = b_norm * b_norm;
    let mut ad = vec![0.0; n];
    for _ in 0..max_iter {
        if rr.sqrt() <= CG_TOLERANCE * b_norm {
            break;
        }
        apply(&d, &mut ad);
        let dad: f64 = d.iter().zip(&ad).map(|(a, b)| a * b).sum();
        if dad <= 0.0 {
            break;
        }
        let step = rr / dad;
        for i in 0..n {
            x[i] += step * d[i];
            r[i] -= step * ad[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..n {
            d[i] = r[i] + beta * d[i];
        }
        rr = rr_new;
    }
    x
}

pub fn circular_coordinates(points: &Points, opts: &CircularOptions) -> Result<CircularCoordinates, CircularError> {
    let n = points.len();
    let want = opts.n_landmarks.unwrap_or_else(|| default_landmarks(n));
    if want < MIN_LANDMARKS || n < MIN_LANDMARKS {
        return Err(CircularError::TooFewLandmarks(want.min(n)));
    }
    let (landmarks, coverage_radius) = maxmin_subsample(points, want);
    let lm_points = points.select(&landmarks);
    let m = landmarks.len();

    let ph = rips_persistence_points(&lm_points, &RipsOptions { max_dim: 1, max_scale: None, prime: opts.prime })?;
    let classes: Vec<usize> = (0..ph.diagram.points.len()).filter(|&i| ph.diagram.points[i].dim == 1).collect();
    let &class = classes.get(opts.class_index).ok_or_else(|| {
        CircularError::NoClass(format!("class {} requested, {} available", opts.class_index, classes.len()))
    })?;
    let pt = ph.diagram.points[class];
    let birth = pt.birth;
    let death = if pt.death.is_infinite() { ph.max_scale } else { pt.death };
    if !(birth > 0.0 && death / birth > 1.0) {
        return Err(CircularError::NoClass(format!("death/birth ratio {} not above 1", death / birth)));
    }
    let cocycle = ph.cocycle_for(class).expect("every dimension-1 class carries a cocycle");

    let scale = birth + SCALE_FRACTION * (death - birth);
    let covering = 1.01 * coverage_radius;
    let ball_radius = if scale / 2.0 < covering && 2.0 * covering < death { covering } else { scale / 2.0 };
    let complex_scale = 2.0 * ball_radius;

    // Edges of the landmark complex with integer cocycle values.
    let p = cocycle.prime;
    let z_of: HashMap<(usize, usize), i64> = cocycle.edges.iter().map(|&(a, b, c)| ((a, b), lift(c, p))).collect();
    let mut edges: Vec<(usize, usize, i64)> = Vec::new();
    let mut adjacency = vec![Vec::new(); m];
    for a in 0..m {
        for b in a + 1..m {
            if lm_points.dist(a, b) <= complex_scale {
                let z = z_of.get(&(a, b)).copied().unwrap_or(0);
                adjacency[a].push((b, edges.len()));
                adjacency[b].push((a, edges.len()));
                edges.push((a, b, z));
            }
        }
    }
    let edge_value: HashMap<(usize, usize), i64> = edges.iter().map(|&(a, b, z)| ((a, b), z)).collect();
    for &(a, b, zab) in &edges {
        for &(c, _) in &adjacency[b] {
            if c > b {
                if let (Some(&zac), Some(&zbc)) = (edge_value.get(&(a, c)), edge_value.get(&(b, c))) {
                    if zbc - zac + zab != 0 {
                        return Err(CircularError::LiftFailure);
                    }
                }
            }
        }
    }

    // Minimise Σ w_ab (z_ab + f_b - f_a)², i.e. L_w f = -δᵀ W z. The weight
    // 1/(deg_a·deg_b) cancels uneven landmark density, which would otherwise
    // compress the coordinate where landmarks cluster.
    let weight: Vec<f64> = edges
        .iter()
        .map(|&(a, b, _)| 1.0 / ((adjacency[a].len() + 1) as f64 * (adjacency[b].len() + 1) as f64))
        .collect();
    let mut rhs = vec![0.0; m];
    for (&(a, b, z), w) in edges.iter().zip(&weight) {
        rhs[b] -= w * z as f64;
        rhs[a] += w * z as f64;
    }
    let laplacian = |x: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&(a, b, _), w) in edges.iter().zip(&weight) {
            let d = w * (x[a] - x[b]);
            out[a] += d;
            out[b] -= d;
        }
    };
    let f = conjugate_gradient(laplacian, &rhs, 20 * m + 100);
    let theta: HashMap<(usize, usize), f64> =
        edges.iter().map(|&(a, b, z)| ((a, b), z as f64 + f[b] - f[a])).collect();
    let oriented = |j: usize, k: usize| -> f64 {
        if j == k {
            0.0
        } else if j < k {
            theta[&(j, k)]
        } else {
            -theta[&(k, j)]
        }
    };

    let mut uncovered = 0;
    let mut values = Vec::with_capacity(n);
    for x in points.iter() {
        let dists: Vec<f64> = (0..m).map(|k| crate::points::euclidean(x, lm_points.point(k))).collect();
        let j = (0..m).fold(0, |best, k| if dists[k] < dists[best] { k } else { best });
        let weights: Vec<(usize, f64)> =
            (0..m).filter(|&k| dists[k] < ball_radius).map(|k| (k, ball_radius - dists[k])).collect();
        let total: f64 = weights.iter().map(|w| w.1).sum();
        let mut h = f[j];
        if total > 0.0 {
            for &(k, w) in &weights {
                h += w / total * oriented(j, k);
            }
        } else {
            uncovered += 1;
        }
        values.push(wrap_tau(TAU * h));
    }

    Ok(CircularCoordinates {
        values,
        landmarks,
        coverage_radius,
        ball_radius,
        class_birth: birth,
        class_death: death,
        class_persistence: death - birth,
        uncovered,
    })
}
