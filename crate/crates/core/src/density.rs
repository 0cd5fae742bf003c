//! k-nearest-neighbour density and dense core subsets.
//!
//! The density proxy is `1/ρ_k(x)` with `ρ_k(x)` the Euclidean distance from
//! `x` to its k-th nearest other record. Queries go through a vantage-point
//! tree; small inputs use a direct scan. Both paths are exact.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow_io::{PatchDataset, ProvenanceStep};
use crate::points::{euclidean, Points};
use crate::stats::top_count;

/// Inputs at or below this size skip the tree.
const BRUTE_FORCE_LIMIT: usize = 256;
const LEAF_SIZE: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("k = {k} needs more than {n} records")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("q = {0} is not a percentage in (0, 100]")]
    BadPercent(f64),
}

/// Parameters of `X(k, q)`: keep the densest `q` percent by `1/ρ_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreSubsetSpec {
    pub k: usize,
    pub q: f64,
}

impl CoreSubsetSpec {
    pub fn validate(&self, n: usize) -> Result<(), DensityError> {
        if self.k == 0 {
            return Err(DensityError::ZeroK);
        }
        if !(self.q > 0.0 && self.q <= 100.0) {
            return Err(DensityError::BadPercent(self.q));
        }
        if self.k >= n {
            return Err(DensityError::KTooLarge { k: self.k, n });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bounded max-heap of the k best candidates seen so far.
struct KBest {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl KBest {
    fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap.peek().map_or(f64::INFINITY, |c| c.dist)
        }
    }

    fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if c.dist < self.bound() {
            self.heap.pop();
            self.heap.push(c);
        }
    }
}

enum Node {
    Leaf(Vec<usize>),
    Split { vantage: usize, radius: f64, inside: Box<Node>, outside: Box<Node> },
}

/// Vantage-point tree over an immutable point cloud.
pub struct VpTree<'a> {
    points: &'a Points,
    root: Node,
}

impl<'a> VpTree<'a> {
    pub fn build(points: &'a Points) -> Self {
        let idx: Vec<usize> = (0..points.len()).collect();
        let root = Self::build_node(points, idx);
        Self { points, root }
    }

    fn build_node(points: &Points, mut idx: Vec<usize>) -> Node {
        if idx.len() <= LEAF_SIZE {
            return Node::Leaf(idx);
        }
        let vantage = idx.swap_remove(idx.len() / 2);
        let vp = points.point(vantage);
        let mut keyed: Vec<(f64, usize)> = idx.iter().map(|&i| (euclidean(vp, points.point(i)), i)).collect();
        let mid = keyed.len() / 2;
        keyed.select_nth_unstable_by(mid, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let radius = keyed[mid].0;
        let outside: Vec<usize> = keyed[mid..].iter().map(|&(_, i)| i).collect();
        let inside: Vec<usize> = keyed[..mid].iter().map(|&(_, i)| i).collect();
        Node::Split {
            vantage,
            radius,
            inside: Box::new(Self::build_node(points, inside)),
            outside: Box::new(Self::build_node(points, outside)),
        }
    }

    /// Distance from record `query` to its k-th nearest other record.
    pub fn kth_distance(&self, query: usize, k: usize) -> f64 {
        let mut best = KBest::new(k);
        self.search(&self.root, query, &mut best);
        best.bound()
    }

    fn search(&self, node: &Node, query: usize, best: &mut KBest) {
        let q = self.points.point(query);
        match node {
            Node::Leaf(idx) => {
                for &i in idx {
                    if i != query {
                        best.offer(Candidate { dist: euclidean(q, self.points.point(i)), index: i });
                    }
                }
            }
            Node::Split { vantage, radius, inside, outside } => {
                let d = euclidean(q, self.points.point(*vantage));
                if *vantage != query {
                    best.offer(Candidate { dist: d, index: *vantage });
                }
                // Slack absorbs rounding in the triangle inequality.
                let slack = 1e-12 * (1.0 + d + radius);
                let (near, far) = if d < *radius { (inside, outside) } else { (outside, inside) };
                self.search(near, query, best);
                let gap = (d - radius).abs();
                if gap <= best.bound() + slack {
                    self.search(far, query, best);
                }
            }
        }
    }
}

fn brute_force_kth(points: &Points, query: usize, k: usize) -> f64 {
    let q = points.point(query);
    let mut best = KBest::new(k);
    for i in 0..points.len() {
        if i != query {
            best.offer(Candidate { dist: euclidean(q, points.point(i)), index: i });
        }
    }
    best.bound()
}

/// `ρ_k` for every point, self excluded.
pub fn knn_distances_points(points: &Points, k: usize) -> Result<Vec<f64>, DensityError> {
    let n = points.len();
    if k == 0 {
        return Err(DensityError::ZeroK);
    }
    if k >= n {
        return Err(DensityError::KTooLarge { k, n });
    }
    if n <= BRUTE_FORCE_LIMIT {
        return Ok((0..n).into_par_iter().map(|i| brute_force_kth(points, i, k)).collect());
    }
    let tree = VpTree::build(points);
    Ok((0..n).into_par_iter().map(|i| tree.kth_distance(i, k)).collect())
}

/// `ρ_k` for every record, measured in raw ℝ¹⁸.
pub fn knn_distances(ds: &PatchDataset, k: usize) -> Result<Vec<f64>, DensityError> {
    knn_distances_points(&dataset_points(ds), k)
}

fn dataset_points(ds: &PatchDataset) -> Points {
    let rows: Vec<&[f64]> = ds.records.iter().map(|r| r.patch.as_slice()).collect();
    if rows.is_empty() {
        Points::new(crate::patch::FLOW_DIM, Vec::new())
    } else {
        Points::from_rows(&rows)
    }
}

/// Indices of the densest `q` percent, in input order.
///
/// Ranking by `1/ρ_k` descending is ranking by `ρ_k` ascending; every record
/// tied with the last admitted one is kept too.
pub fn core_indices(rho: &[f64], q: f64) -> Vec<usize> {
    if rho.is_empty() {
        return Vec::new();
    }
    let mut sorted = rho.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = sorted[top_count(rho.len(), q) - 1];
    (0..rho.len()).filter(|&i| rho[i] <= cutoff).collect()
}

/// 1-based density rank of every record (1 = densest); ties share the
/// smaller index first.
pub fn density_ranks(rho: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rho.len()).collect();
    order.sort_by(|&a, &b| rho[a].total_cmp(&rho[b]).then(a.cmp(&b)));
    let mut rank = vec![0; rho.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

/// The dense core subset `X(k, q)`.
pub fn core_subset(ds: &PatchDataset, spec: CoreSubsetSpec) -> Result<PatchDataset, DensityError> {
    spec.validate(ds.len())?;
    let rho = knn_distances(ds, spec.k)?;
    let keep = core_indices(&rho, spec.q);
    Ok(ds.subset(&keep, ProvenanceStep::new("core_subset", &[("k", spec.k as f64), ("q", spec.q)])))
}
