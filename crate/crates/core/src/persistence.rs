//! Vietoris–Rips persistent cohomology over `ℤ_p`.
//!
//! Simplices are addressed by their rank in the combinatorial number system
//! (vertices sorted descending, `Σ C(v_i, k_i)`). The filtration orders
//! simplices by diameter, breaking ties by descending rank. Dimension 0 is
//! handled by union–find; higher dimensions by the implicit coboundary
//! reduction with clearing and emergent pairs. The reduction matrix columns
//! double as representative cocycles.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::points::{DistanceMatrix, Points, UnionFind};

/// Largest point count accepted when `max_dim = 2`.
pub const MAX_POINTS_DIM2: usize = 1200;
pub const DEFAULT_PRIME: u32 = 47;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersistenceError {
    #[error("{n} points exceed the limit of {limit} for max_dim = {max_dim}")]
    TooLarge { n: usize, max_dim: usize, limit: usize },
    #[error("{0} is not a prime")]
    NotPrime(u32),
    #[error("max_dim = {0} is not supported (0..=2)")]
    UnsupportedDim(usize),
    #[error("max_scale must be non-negative, got {0}")]
    BadScale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RipsOptions {
    pub max_dim: usize,
    /// Defaults to the enclosing radius.
    pub max_scale: Option<f64>,
    pub prime: u32,
}

impl Default for RipsOptions {
    fn default() -> Self {
        Self { max_dim: 1, max_scale: None, prime: DEFAULT_PRIME }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagramPoint {
    pub dim: usize,
    pub birth: f64,
    /// `f64::INFINITY` for classes alive at the end of the filtration.
    pub death: f64,
}

impl DiagramPoint {
    pub fn persistence(&self) -> f64 {
        self.death - self.birth
    }

    pub fn is_essential(&self) -> bool {
        self.death.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub points: Vec<DiagramPoint>,
}

impl PersistenceDiagram {
    pub fn dim(&self, d: usize) -> impl Iterator<Item = &DiagramPoint> {
        self.points.iter().filter(move |p| p.dim == d)
    }

    /// `(β₀, β₁, β₂)` at scale `s`: classes with `birth ≤ s < death`.
    pub fn betti_at_scale(&self, s: f64) -> [usize; 3] {
        let mut b = [0; 3];
        for p in &self.points {
            if p.dim < 3 && p.birth <= s && s < p.death {
                b[p.dim] += 1;
            }
        }
        b
    }

    /// `dim,birth,death` rows, `inf` for infinite deaths.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dim,birth,death\n");
        for p in &self.points {
            let death = if p.death.is_infinite() { "inf".to_string() } else { p.death.to_string() };
            let _ = writeln!(out, "{},{},{}", p.dim, p.birth, death);
        }
        out
    }
}

/// A 1-cocycle as signed edge values: `(a, b, c)` with `a < b` means the
/// oriented edge `a → b` carries `c ∈ ℤ_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeCocycle {
    /// Index of the class in `PersistenceResult::diagram.points`.
    pub class: usize,
    pub dim: usize,
    pub birth: f64,
    pub death: f64,
    pub prime: u32,
    pub edges: Vec<(usize, usize, u32)>,
}

impl RepresentativeCocycle {
    /// Value on the oriented edge `a → b`, as a representative in `0..p`.
    pub fn value(&self, a: usize, b: usize) -> u32 {
        let (lo, hi, flip) = if a < b { (a, b, false) } else { (b, a, true) };
        let c = self
            .edges
            .iter()
            .find(|e| e.0 == lo && e.1 == hi)
            .map_or(0, |e| e.2);
        if flip && c != 0 {
            self.prime - c
        } else {
            c
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceResult {
    pub diagram: PersistenceDiagram,
    /// One entry per dimension-1 class.
    pub cocycles: Vec<RepresentativeCocycle>,
    pub max_scale: f64,
    pub prime: u32,
}

impl PersistenceResult {
    pub fn cocycle_for(&self, class: usize) -> Option<&RepresentativeCocycle> {
        self.cocycles.iter().find(|c| c.class == class)
    }
}

pub fn is_prime(p: u32) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2u32;
    while (d as u64) * (d as u64) <= p as u64 {
        if p % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

fn mod_inverse(a: u32, p: u32) -> u32 {
    // Fermat: a^(p-2)
    let (mut base, mut exp, mut acc) = (a as u64 % p as u64, p as u64 - 2, 1u64);
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % p as u64;
        }
        base = base * base % p as u64;
        exp >>= 1;
    }
    acc as u32
}

struct Binomial {
    table: Vec<u64>,
    width: usize,
}

impl Binomial {
    fn new(n: usize, k_max: usize) -> Self {
        let width = k_max + 1;
        let mut table = vec![0u64; (n + 1) * width];
        for v in 0..=n {
            table[v * width] = 1;
            for k in 1..width.min(v + 1) {
                let a = table[(v - 1) * width + k - 1];
                let b = if k < v { table[(v - 1) * width + k] } else { 0 };
                table[v * width + k] = a.saturating_add(b);
            }
        }
        Self { table, width }
    }

    #[inline]
    fn get(&self, v: usize, k: usize) -> u64 {
        if k >= self.width {
            return 0;
        }
        self.table[v * self.width + k]
    }
}

/// A simplex in a column or heap: filtration value, rank and coefficient.
#[derive(Debug, Clone, Copy)]
struct Entry {
    diam: f64,
    index: u64,
    coef: u32,
}

/// Heap order: the top is the filtration-earliest entry
/// (smallest diameter, then largest rank).
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.diam.total_cmp(&self.diam).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

struct Rips<'a> {
    dm: &'a DistanceMatrix,
    n: usize,
    threshold: f64,
    p: u32,
    binom: Binomial,
}

impl<'a> Rips<'a> {
    fn vertices(&self, mut idx: u64, dim: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut hi = self.n - 1;
        for k in (1..=dim + 1).rev() {
            // largest v ≤ hi with C(v, k) ≤ idx
            let (mut lo, mut top) = (k - 1, hi);
            while lo < top {
                let mid = (lo + top).div_ceil(2);
                if self.binom.get(mid, k) <= idx {
                    lo = mid;
                } else {
                    top = mid - 1;
                }
            }
            out.push(lo);
            idx -= self.binom.get(lo, k);
            hi = lo.saturating_sub(1);
        }
    }

    /// Cofacets of the `dim`-simplex `(idx, diam)` within the threshold, in
    /// descending rank order. With `top_only`, only vertices above the
    /// simplex are added.
    fn cofacets(&self, idx: u64, diam: f64, dim: usize, top_only: bool, verts: &mut Vec<usize>, mut f: impl FnMut(Entry) -> bool) {
        self.vertices(idx, dim, verts);
        let mut idx_above = 0u64;
        let mut idx_below = idx;
        let mut j = 0usize;
        let mut v = self.n;
        while v > 0 {
            v -= 1;
            if j < verts.len() && v == verts[j] {
                if top_only {
                    return;
                }
                idx_above += self.binom.get(v, dim + 2 - j);
                idx_below -= self.binom.get(v, dim + 1 - j);
                j += 1;
                continue;
            }
            let mut d = diam;
            let mut ok = true;
            for &w in verts.iter() {
                let e = self.dm.get(v, w);
                if e > self.threshold {
                    ok = false;
                    break;
                }
                if e > d {
                    d = e;
                }
            }
            if !ok {
                continue;
            }
            let below = dim + 1 - j;
            let coef = if below % 2 == 0 { 1 } else { self.p - 1 };
            let index = idx_above + self.binom.get(v, dim + 2 - j) + idx_below;
            if !f(Entry { diam: d, index, coef }) {
                return;
            }
        }
    }

    fn edge_vertices(&self, idx: u64) -> (usize, usize) {
        let mut v = Vec::with_capacity(2);
        self.vertices(idx, 1, &mut v);
        (v[1], v[0])
    }
}

/// Pops the filtration-earliest entry with a nonzero combined coefficient.
fn pop_pivot(heap: &mut BinaryHeap<Entry>, p: u32) -> Option<Entry> {
    loop {
        let mut pivot = heap.pop()?;
        while let Some(top) = heap.peek() {
            if top.index != pivot.index {
                break;
            }
            pivot.coef = ((pivot.coef as u64 + top.coef as u64) % p as u64) as u32;
            heap.pop();
        }
        if pivot.coef != 0 {
            return Some(pivot);
        }
    }
}

fn get_pivot(heap: &mut BinaryHeap<Entry>, p: u32) -> Option<Entry> {
    let pivot = pop_pivot(heap, p)?;
    heap.push(pivot);
    Some(pivot)
}

/// Persistent cohomology of the Rips filtration of a point cloud.
pub fn rips_persistence_points(points: &Points, opts: &RipsOptions) -> Result<PersistenceResult, PersistenceError> {
    rips_persistence(&DistanceMatrix::from_points(points), opts)
}

/// Persistent cohomology of the Rips filtration of a distance matrix.
///
/// The diagram lists dimension 0 first, then 1 and 2; within a dimension,
/// classes are ordered by decreasing persistence (ties by birth).
/// Zero-length intervals are dropped.
pub fn rips_persistence(dm: &DistanceMatrix, opts: &RipsOptions) -> Result<PersistenceResult, PersistenceError> {
    if opts.max_dim > 2 {
        return Err(PersistenceError::UnsupportedDim(opts.max_dim));
    }
    if !is_prime(opts.prime) {
        return Err(PersistenceError::NotPrime(opts.prime));
    }
    let n = dm.len();
    if opts.max_dim == 2 && n > MAX_POINTS_DIM2 {
        return Err(PersistenceError::TooLarge { n, max_dim: 2, limit: MAX_POINTS_DIM2 });
    }
    let threshold = match opts.max_scale {
        Some(s) if s.is_nan() || s < 0.0 => return Err(PersistenceError::BadScale(s)),
        Some(s) => s,
        None => {
            if n == 0 {
                0.0
            } else {
                dm.enclosing_radius()
            }
        }
    };
    let p = opts.prime;
    if n == 0 {
        return Ok(PersistenceResult { diagram: PersistenceDiagram::default(), cocycles: vec![], max_scale: threshold, prime: p });
    }
    let rips = Rips { dm, n, threshold, p, binom: Binomial::new(n, opts.max_dim + 2) };

    let mut points = Vec::new();
    let mut cocycle_cols: Vec<(usize, Vec<(u64, u32)>)> = Vec::new();

    // Dimension 0.
    let mut edges: Vec<Entry> = Vec::new();
    for i in 1..n {
        for j in 0..i {
            let d = dm.get(i, j);
            if d <= threshold {
                edges.push(Entry { diam: d, index: rips.binom.get(i, 2) + j as u64, coef: 1 });
            }
        }
    }
    edges.sort_by(|a, b| b.cmp(a));
    let mut uf = UnionFind::new(n);
    let mut columns: Vec<Entry> = Vec::new();
    for e in &edges {
        let (a, b) = rips.edge_vertices(e.index);
        if !uf.union(a, b) {
            columns.push(*e);
        } else if e.diam > 0.0 {
            points.push(DiagramPoint { dim: 0, birth: 0.0, death: e.diam });
        }
    }
    for v in 0..n {
        if uf.find(v) == v {
            points.push(DiagramPoint { dim: 0, birth: 0.0, death: f64::INFINITY });
        }
    }

    let mut simplices = edges;
    let mut verts = Vec::with_capacity(4);
    for dim in 1..=opts.max_dim {
        // reverse filtration order
        columns.sort();
        let mut pivot_of: HashMap<u64, usize> = HashMap::new();
        let mut reduced: Vec<(Vec<(u64, f64, u32)>, u32)> = Vec::new();

        for col in &columns {
            let mut working: HashMap<u64, (f64, u32)> = HashMap::new();
            working.insert(col.index, (col.diam, 1));
            let mut heap: BinaryHeap<Entry> = BinaryHeap::new();

            // Fill the coboundary, stopping early at an emergent pair.
            let mut check_emergent = true;
            let mut emergent = None;
            rips.cofacets(col.index, col.diam, dim, false, &mut verts, |c| {
                if check_emergent && c.diam == col.diam {
                    if !pivot_of.contains_key(&c.index) {
                        emergent = Some(c);
                        return false;
                    }
                    check_emergent = false;
                }
                heap.push(c);
                true
            });

            let pivot = match emergent {
                Some(e) => Some(e),
                None => loop {
                    match get_pivot(&mut heap, p) {
                        None => break None,
                        Some(piv) => match pivot_of.get(&piv.index) {
                            None => break Some(piv),
                            Some(&other) => {
                                let (ref v_other, other_coef) = reduced[other];
                                let factor = ((p - piv.coef) as u64 * mod_inverse(other_coef, p) as u64 % p as u64) as u32;
                                let mut fverts = Vec::with_capacity(4);
                                for &(s, sdiam, c) in v_other {
                                    let w = (factor as u64 * c as u64 % p as u64) as u32;
                                    let slot = working.entry(s).or_insert((sdiam, 0));
                                    slot.1 = ((slot.1 as u64 + w as u64) % p as u64) as u32;
                                    rips.cofacets(s, sdiam, dim, false, &mut fverts, |cf| {
                                        heap.push(Entry { coef: (cf.coef as u64 * w as u64 % p as u64) as u32, ..cf });
                                        true
                                    });
                                }
                            }
                        },
                    }
                },
            };

            let mut v_col: Vec<(u64, f64, u32)> =
                working.into_iter().filter(|(_, (_, c))| *c != 0).map(|(s, (d, c))| (s, d, c)).collect();
            v_col.sort_by(|a, b| a.0.cmp(&b.0));

            let class_point = match pivot {
                Some(piv) => {
                    pivot_of.insert(piv.index, reduced.len());
                    let recorded = piv.diam > col.diam;
                    let pt = DiagramPoint { dim, birth: col.diam, death: piv.diam };
                    reduced.push((v_col.clone(), piv.coef));
                    recorded.then_some(pt)
                }
                None => Some(DiagramPoint { dim, birth: col.diam, death: f64::INFINITY }),
            };
            if let Some(pt) = class_point {
                if dim == 1 {
                    cocycle_cols.push((points.len(), v_col.iter().map(|&(s, _, c)| (s, c)).collect()));
                }
                points.push(pt);
            }
        }

        if dim < opts.max_dim {
            let mut next = Vec::new();
            for s in &simplices {
                rips.cofacets(s.index, s.diam, dim, true, &mut verts, |c| {
                    next.push(Entry { coef: 1, ..c });
                    true
                });
            }
            columns = next.iter().filter(|c| !pivot_of.contains_key(&c.index)).copied().collect();
            simplices = next;
        }
    }

    // Final ordering, tracking where each cocycle's class ends up.
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa.dim
            .cmp(&pb.dim)
            .then(pb.persistence().total_cmp(&pa.persistence()))
            .then(pa.birth.total_cmp(&pb.birth))
            .then(a.cmp(&b))
    });
    let mut position = vec![0; points.len()];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new;
    }
    let sorted: Vec<DiagramPoint> = order.iter().map(|&i| points[i]).collect();
    let mut cocycles: Vec<RepresentativeCocycle> = cocycle_cols
        .into_iter()
        .map(|(old, col)| {
            let class = position[old];
            let pt = sorted[class];
            let mut edges: Vec<(usize, usize, u32)> = col
                .into_iter()
                .map(|(s, c)| {
                    let (a, b) = rips.edge_vertices(s);
                    (a, b, c)
                })
                .collect();
            edges.sort();
            RepresentativeCocycle { class, dim: 1, birth: pt.birth, death: pt.death, prime: p, edges }
        })
        .collect();
    cocycles.sort_by_key(|c| c.class);

    Ok(PersistenceResult { diagram: PersistenceDiagram { points: sorted }, cocycles, max_scale: threshold, prime: p })
}
