//! Dense point clouds and distance matrices shared by the geometric stages.

use rayon::prelude::*;

/// A row-major cloud of `len` points in `dim` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    /// Wraps a flat row-major buffer. Panics if the buffer length is not a
    /// multiple of `dim`.
    pub fn new(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0, "point dimension must be positive");
        assert_eq!(coords.len() % dim, 0, "buffer is not a whole number of points");
        Self { dim, coords }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(1);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), dim, "ragged rows");
            coords.extend_from_slice(r);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    /// The sub-cloud made of the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        Points { dim: self.dim, coords }
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        euclidean(self.point(i), self.point(j))
    }

    /// Scales every coordinate by `s`.
    pub fn scaled(&self, s: f64) -> Points {
        Points { dim: self.dim, coords: self.coords.iter().map(|x| x * s).collect() }
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetric matrix of pairwise distances, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_points(points: &Points) -> Self {
        let n = points.len();
        let mut entries = vec![0.0; n * n];
        entries.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = points.dist(i, j);
            }
        });
        Self { n, entries }
    }

    /// Builds a matrix from explicit entries. Panics unless the input is
    /// square, symmetric and has a zero diagonal.
    pub fn from_entries(n: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), n * n);
        for i in 0..n {
            assert_eq!(entries[i * n + i], 0.0, "nonzero diagonal");
            for j in 0..i {
                assert_eq!(entries[i * n + j], entries[j * n + i], "asymmetric distances");
            }
        }
        Self { n, entries }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// `min_i max_j d(i, j)`: beyond this scale the Rips complex is a cone.
    pub fn enclosing_radius(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).iter().cloned().fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_distance(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }
}

/// Greedy max-min (farthest point) subsample starting at index 0.
///
/// Returns the selected indices and the covering radius, i.e. the largest
/// distance from any point to its nearest selected point.
pub fn maxmin_subsample(points: &Points, count: usize) -> (Vec<usize>, f64) {
    let n = points.len();
    if n == 0 || count == 0 {
        return (Vec::new(), f64::INFINITY);
    }
    let count = count.min(n);
    let mut chosen = vec![0usize];
    let mut nearest: Vec<f64> = (0..n).map(|i| points.dist(0, i)).collect();
    while chosen.len() < count {
        let (far, _) = nearest.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &d)| {
            if d > acc.1 {
                (i, d)
            } else {
                acc
            }
        });
        chosen.push(far);
        for (i, slot) in nearest.iter_mut().enumerate() {
            let d = points.dist(far, i);
            if d < *slot {
                *slot = d;
            }
        }
    }
    let radius = nearest.iter().cloned().fold(0.0, f64::max);
    (chosen, radius)
}

/// Disjoint sets with path halving.
pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins the sets of `a` and `b`; the smaller root survives.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enclosing_radius_of_collinear_points() {
        let p = Points::from_rows(&[[0.0], [1.0], [2.0]]);
        let d = DistanceMatrix::from_points(&p);
        assert_eq!(d.enclosing_radius(), 1.0);
        assert_eq!(d.max_distance(), 2.0);
    }

    #[test]
    fn maxmin_picks_extremes_first() {
        let p = Points::from_rows(&[[0.0], [0.4], [1.0], [0.6]]);
        let (idx, r) = maxmin_subsample(&p, 2);
        assert_eq!(idx, vec![0, 2]);
        assert!((r - 0.4).abs() < 1e-12);
    }
}
