//! Per-fiber DBSCAN, the intersection graph of local clusters, its weight
//! filtration and the identification of step-edge clusters.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::{assign_fibers, build_cover_on, BaseSpace, BundleError, Cover, Fibers};
use crate::circular::{circular_coordinates, CircularCoordinates, CircularError, CircularOptions};
use crate::models::{complement_id, quadratic_patch, step_edge_catalog, step_edge_flow_patch};
use crate::patch::{normalize_patch, predominant_direction, FlowPatch};
use crate::persistence::{rips_persistence_points, PersistenceDiagram, PersistenceError, RipsOptions};
use crate::points::{maxmin_subsample, squared_euclidean, Points, UnionFind};

pub const DEFAULT_EPS: f64 = 0.3;
pub const DEFAULT_MIN_PTS: usize = 5;
pub const DIRECTION_GRID: usize = 64;
pub const POOR_MATCH_DISTANCE: f64 = 0.5;
pub const MIN_COMPONENT_SIZE: usize = 40;
pub const MAX_ANALYSIS_POINTS: usize = 500;
/// A class is dominant when its persistence is at least this multiple of the
/// runner-up's.
pub const DOMINANCE_RATIO: f64 = 2.0;
/// ... and at least this long in absolute terms.
pub const MIN_DOMINANT_PERSISTENCE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid parameter: {0}")]
    BadParams(String),
    #[error("cluster is empty")]
    EmptyCluster,
    #[error("best step-edge match is at distance {distance:.3} (> {POOR_MATCH_DISTANCE})")]
    PoorMatch { distance: f64 },
    #[error("component has {size} points, need at least {MIN_COMPONENT_SIZE}")]
    TooSmall { size: usize },
    #[error("cluster mean has no predominant direction")]
    NoDirection,
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error(transparent)]
    Circular(#[from] CircularError),
}

/// DBSCAN labels (`-1` = noise).
///
/// Neighbourhoods are closed balls of radius `eps` and include the point
/// itself. Seeds are taken in input order and each cluster is expanded fully
/// before the next seed, so a border point belongs to the earliest cluster
/// with a core point in reach.
pub fn dbscan(points: &Points, eps: f64, min_pts: usize) -> Result<Vec<i64>, ClusterError> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(ClusterError::BadParams(format!("dbscan eps={eps}, minPts={min_pts}")));
    }
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = points.point(i);
            (0..n).filter(|&j| squared_euclidean(p, points.point(j)) <= eps2).collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();
    let mut labels = vec![-1i64; n];
    let mut next = 0i64;
    let mut stack = Vec::new();
    for seed in 0..n {
        if labels[seed] != -1 || !core[seed] {
            continue;
        }
        labels[seed] = next;
        stack.push(seed);
        while let Some(p) = stack.pop() {
            if !core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q] == -1 {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    Ok(labels)
}

/// A DBSCAN cluster inside one fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalCluster {
    pub fiber: usize,
    pub label: usize,
    /// Record indices, ascending.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEdge {
    /// Node indices, `a < b`.
    pub a: usize,
    pub b: usize,
    pub shared: usize,
    /// `|∩| / max(|A|, |B|)`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGraph {
    pub nodes: Vec<LocalCluster>,
    pub edges: Vec<ClusterEdge>,
    pub n_records: usize,
}

/// DBSCAN on every fiber, in parallel. `labels[j][m]` labels
/// `fibers.members[j][m]`.
pub fn cluster_fibers(points: &Points, fibers: &Fibers, eps: f64, min_pts: usize) -> Result<Vec<Vec<i64>>, ClusterError> {
    fibers.members.par_iter().map(|m| dbscan(&points.select(m), eps, min_pts)).collect()
}

/// Nodes are the local clusters; two clusters are joined when they share a
/// record. Clusters of one fiber are disjoint, so every edge joins distinct
/// fibers that overlap in the cover.
pub fn build_cluster_graph(fibers: &Fibers, labels: &[Vec<i64>], n_records: usize) -> ClusterGraph {
    let mut nodes = Vec::new();
    for (j, (members, lab)) in fibers.members.iter().zip(labels).enumerate() {
        let count = lab.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
        let mut groups = vec![Vec::new(); count];
        for (&i, &l) in members.iter().zip(lab) {
            if l >= 0 {
                groups[l as usize].push(i);
            }
        }
        for (label, mut members) in groups.into_iter().enumerate() {
            members.sort_unstable();
            nodes.push(LocalCluster { fiber: j, label, members });
        }
    }
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); n_records];
    for (v, node) in nodes.iter().enumerate() {
        for &i in &node.members {
            owners[i].push(v);
        }
    }
    let mut shared: HashMap<(usize, usize), usize> = HashMap::new();
    for own in &owners {
        for (x, &a) in own.iter().enumerate() {
            for &b in &own[x + 1..] {
                *shared.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
    }
    let mut edges: Vec<ClusterEdge> = shared
        .into_iter()
        .map(|((a, b), s)| {
            let big = nodes[a].members.len().max(nodes[b].members.len());
            ClusterEdge { a, b, shared: s, weight: s as f64 / big as f64 }
        })
        .collect();
    edges.sort_by_key(|e| (e.a, e.b));
    ClusterGraph { nodes, edges, n_records }
}

/// Connected components of the graph and the induced record labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalClusters {
    /// Component of each node.
    pub node_component: Vec<usize>,
    /// Component of each record, `-1` when it lies in no cluster.
    pub record_component: Vec<i64>,
    /// Distinct records per component; non-increasing.
    pub sizes: Vec<usize>,
    /// Local clusters per component.
    pub node_counts: Vec<usize>,
}

impl GlobalClusters {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Record indices of component `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.record_component.len()).filter(|&i| self.record_component[i] == c as i64).collect()
    }
}

fn components_above(g: &ClusterGraph, t: f64) -> UnionFind {
    let mut uf = UnionFind::new(g.nodes.len());
    for e in g.edges.iter().filter(|e| e.weight > t) {
        uf.union(e.a, e.b);
    }
    uf
}

/// Components numbered by decreasing record count (ties by first node).
pub fn global_clusters(g: &ClusterGraph) -> GlobalClusters {
    let mut uf = components_above(g, f64::NEG_INFINITY);
    let roots: Vec<usize> = (0..g.nodes.len()).map(|v| uf.find(v)).collect();
    let mut raw: HashMap<usize, usize> = HashMap::new();
    let mut first: Vec<usize> = Vec::new();
    for &r in &roots {
        if !raw.contains_key(&r) {
            raw.insert(r, first.len());
            first.push(r);
        }
    }
    let k = first.len();
    let mut record_raw = vec![-1i64; g.n_records];
    for (v, node) in g.nodes.iter().enumerate() {
        let c = raw[&roots[v]] as i64;
        for &i in &node.members {
            debug_assert!(record_raw[i] == -1 || record_raw[i] == c);
            record_raw[i] = c;
        }
    }
    let mut size = vec![0usize; k];
    for &c in record_raw.iter().filter(|&&c| c >= 0) {
        size[c as usize] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(size[c]), c));
    let mut rank = vec![0usize; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    let node_component: Vec<usize> = roots.iter().map(|r| rank[raw[r]]).collect();
    let mut node_counts = vec![0usize; k];
    for &c in &node_component {
        node_counts[c] += 1;
    }
    GlobalClusters {
        node_component,
        record_component: record_raw.iter().map(|&c| if c < 0 { -1 } else { rank[c as usize] as i64 }).collect(),
        sizes: order.iter().map(|&c| size[c]).collect(),
        node_counts,
    }
}

/// Number of components after deleting every edge of weight `≤ t`.
pub fn filtration_components(g: &ClusterGraph, t: f64) -> usize {
    let mut uf = components_above(g, t);
    (0..g.nodes.len()).filter(|&v| uf.find(v) == v).count()
}

/// Edges with weight `≤ t`, the ones a cut at `t` removes.
pub fn edges_at_or_below(g: &ClusterGraph, t: f64) -> usize {
    g.edges.iter().filter(|e| e.weight <= t).count()
}

/// Per-fiber cluster counts, per-component node counts and component sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub clusters_per_fiber: Vec<usize>,
    pub clusters_per_component: Vec<usize>,
    pub component_sizes: Vec<usize>,
}

impl GraphSummary {
    pub fn new(g: &ClusterGraph, n_fibers: usize, comps: &GlobalClusters) -> Self {
        let mut per_fiber = vec![0; n_fibers];
        for node in &g.nodes {
            per_fiber[node.fiber] += 1;
        }
        Self {
            clusters_per_fiber: per_fiber,
            clusters_per_component: comps.node_counts.clone(),
            component_sizes: comps.sizes.clone(),
        }
    }

    /// `panel,index,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("panel,index,value\n");
        for (name, vals) in [
            ("clusters_per_fiber", &self.clusters_per_fiber),
            ("clusters_per_component", &self.clusters_per_component),
            ("component_size", &self.component_sizes),
        ] {
            for (i, v) in vals.iter().enumerate() {
                out.push_str(&format!("{name},{i},{v}\n"));
            }
        }
        out
    }
}

/// Most frequent value (smallest on ties).
pub fn mode(values: &[usize]) -> Option<usize> {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts.into_iter().max_by_key(|&(v, c)| (c, std::cmp::Reverse(v))).map(|(v, _)| v)
}

/// Mean of the member patches, renormalised.
pub fn cluster_mean(patches: &[FlowPatch], members: &[usize]) -> Result<FlowPatch, ClusterError> {
    if members.is_empty() {
        return Err(ClusterError::EmptyCluster);
    }
    let mut sum = [0.0; 18];
    for &i in members {
        for (s, x) in sum.iter_mut().zip(patches[i].0.iter()) {
            *s += x;
        }
    }
    normalize_patch(&FlowPatch(sum)).map(|n| n.patch).map_err(|_| ClusterError::EmptyCluster)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEdgeMatch {
    pub edge: usize,
    /// Angle of the flow direction `n̂`.
    pub direction: f64,
    pub distance: f64,
    /// The same patch read with the complementary mask and `−n̂`.
    pub antipodal_edge: usize,
    pub antipodal_direction: f64,
}

/// Nearest catalog flow patch to the cluster mean over all masks and a grid
/// of 64 directions, with `n̂` on the `orientation` side of the mean's
/// predominant axis.
pub fn match_step_edge(patches: &[FlowPatch], members: &[usize], orientation: i8) -> Result<StepEdgeMatch, ClusterError> {
    if orientation != 1 && orientation != -1 {
        return Err(ClusterError::BadParams(format!("orientation must be ±1, got {orientation}")));
    }
    let mean = cluster_mean(patches, members)?;
    let axis = predominant_direction(&mean).map_err(|_| ClusterError::NoDirection)?.radians();
    let (ax, ay) = (axis.cos() * orientation as f64, axis.sin() * orientation as f64);
    let mut best: Option<(f64, usize, f64)> = None;
    for k in 0..DIRECTION_GRID {
        let phi = TAU * k as f64 / DIRECTION_GRID as f64;
        let n = [phi.cos(), phi.sin()];
        if n[0] * ax + n[1] * ay <= 0.0 {
            continue;
        }
        for edge in step_edge_catalog() {
            let d = mean.distance(&step_edge_flow_patch(edge, n).expect("unit direction"));
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, edge.id, phi));
            }
        }
    }
    let (distance, edge, direction) = best.expect("half of the grid is admissible");
    if distance > POOR_MATCH_DISTANCE {
        return Err(ClusterError::PoorMatch { distance });
    }
    Ok(StepEdgeMatch {
        edge,
        direction,
        distance,
        antipodal_edge: complement_id(edge).expect("catalog id"),
        antipodal_direction: (direction + PI) % TAU,
    })
}

/// Nearest quadratic patch `P(s, t)` on a 128×128 grid: `(s, t, distance)`.
pub fn nearest_quadratic(p: &FlowPatch) -> (f64, f64, f64) {
    const GRID: usize = 128;
    let mut best = (0.0, 0.0, f64::INFINITY);
    for a in 0..GRID {
        let s = TAU * a as f64 / GRID as f64;
        for b in 0..GRID {
            let t = TAU * b as f64 / GRID as f64;
            let d = p.distance(&quadratic_patch(s, t));
            if d < best.2 {
                best = (s, t, d);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CircleOutcome {
    Circle(CircularCoordinates),
    /// No dominant 1-dimensional class.
    NoClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentAnalysis {
    /// Diagram of the (subsampled) component.
    pub diagram: PersistenceDiagram,
    /// Indices into the component's point list used for persistence.
    pub subsample: Vec<usize>,
    pub outcome: CircleOutcome,
}

/// Persistence of the component (max-min subsampled to 500 points) and,
/// when one class dominates, circular coordinates for every point.
pub fn component_circular_analysis(points: &Points, opts: &CircularOptions) -> Result<ComponentAnalysis, ClusterError> {
    if points.len() < MIN_COMPONENT_SIZE {
        return Err(ClusterError::TooSmall { size: points.len() });
    }
    let subsample = if points.len() > MAX_ANALYSIS_POINTS {
        maxmin_subsample(points, MAX_ANALYSIS_POINTS).0
    } else {
        (0..points.len()).collect()
    };
    let res = rips_persistence_points(
        &points.select(&subsample),
        &RipsOptions { max_dim: 1, max_scale: None, prime: opts.prime },
    )?;
    let outcome = if dominant_class(&res.diagram, res.max_scale) {
        CircleOutcome::Circle(circular_coordinates(points, opts)?)
    } else {
        CircleOutcome::NoClass
    };
    Ok(ComponentAnalysis { diagram: res.diagram, subsample, outcome })
}


/// Whether the most persistent dimension-1 class dominates the others.
/// Essential classes are cut off at `max_scale`.
pub fn dominant_class(diagram: &PersistenceDiagram, max_scale: f64) -> bool {
    let mut pers: Vec<f64> = diagram.dim(1).map(|p| p.death.min(max_scale) - p.birth).collect();
    pers.sort_by(|a, b| b.total_cmp(a));
    match pers.as_slice() {
        [] => false,
        [first, rest @ ..] => {
            *first >= MIN_DOMINANT_PERSISTENCE && rest.first().is_none_or(|&s| *first >= DOMINANCE_RATIO * s)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n_sets: usize,
    pub overlap: f64,
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { n_sets: 16, overlap: 0.5, eps: DEFAULT_EPS, min_pts: DEFAULT_MIN_PTS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPipeline {
    pub cover: Cover,
    pub fibers: Fibers,
    pub graph: ClusterGraph,
    pub components: GlobalClusters,
}

/// Cover of the base, per-fiber DBSCAN, graph and components.
pub fn run_cluster_graph(
    points: &Points,
    base: &[Option<f64>],
    space: BaseSpace,
    config: &ClusterConfig,
) -> Result<ClusterPipeline, ClusterError> {
    let cover = build_cover_on(space, config.n_sets, config.overlap)?;
    let fibers = assign_fibers(base, &cover);
    let labels = cluster_fibers(points, &fibers, config.eps, config.min_pts)?;
    let graph = build_cluster_graph(&fibers, &labels, points.len());
    let components = global_clusters(&graph);
    Ok(ClusterPipeline { cover, fibers, graph, components })
}
