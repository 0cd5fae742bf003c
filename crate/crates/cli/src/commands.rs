//! One function per subcommand. Each reads its inputs, computes everything in
//! memory and only then writes its artifacts and manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use flowbundle::bundle::{lifted_direction, projective_base, run_bundle, BaseSpace, BundleConfig, BundleReport};
use flowbundle::circular::CircularOptions;
use flowbundle::cluster_graph::{
    cluster_mean, component_circular_analysis, edges_at_or_below, filtration_components, match_step_edge,
    nearest_quadratic, run_cluster_graph, CircleOutcome, ClusterConfig, ClusterError, GraphSummary, MIN_COMPONENT_SIZE,
};
use flowbundle::density::{core_indices, density_ranks, knn_distances_points};
use flowbundle::flow_io::{
    downsample, read_flo, sample_patches, top_contrast_filter, FlowField, PatchDataset, ProvenanceStep,
};
use flowbundle::models::{klein_base_angle, sample_model, GroundTruth};
use flowbundle::patch::{embed_patches, plane_projection, FlowPatch};
use flowbundle::persistence::{rips_persistence_points, RipsOptions};
use flowbundle::points::maxmin_subsample;
use flowbundle::stats::circular_correlation;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifacts::{read_artifact, Manifest, StageOutput};
use crate::config::{BaseChoice, PipelineConfig};
use crate::error::{CliError, Result};
use crate::svg::{text_panel, Plot, Series, Style};
use crate::tables::{annotate_locations, directionality_percentiles, locations_csv, percentiles_csv};

pub const STAGES: [&str; 8] = ["synthetic", "ingest", "sample", "preprocess", "density", "persistence", "bundle", "clusters"];

pub const RAW: &str = "raw.ofpd";
pub const PREPROCESSED: &str = "preprocessed.ofpd";
pub const SYNTHETIC: &str = "synthetic.ofpd";
pub const TRUTH: &str = "synthetic_truth.json";

fn finish(out: StageOutput, stage: &str, cfg: &PipelineConfig) -> Result<Manifest> {
    out.commit(&cfg.out_dir, cfg.stage_parameters(stage))
}

fn collect_flo(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() || p.extension().is_some_and(|e| e == "flo") {
                collect_flo(&p, out)?;
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Input `.flo` files in frame order: inputs as listed, directories expanded
/// recursively in sorted order.
pub fn flo_inputs(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    if cfg.inputs.is_empty() {
        return Err(CliError::Config("no inputs: set `inputs` or pass --inputs".into()));
    }
    let mut files = Vec::new();
    for p in &cfg.inputs {
        collect_flo(p, &mut files)?;
    }
    if files.is_empty() {
        return Err(CliError::Data("no .flo files found under the inputs".into()));
    }
    Ok(files)
}

fn read_fields(cfg: &PipelineConfig, out: &mut StageOutput) -> Result<Vec<(PathBuf, FlowField)>> {
    flo_inputs(cfg)?
        .into_iter()
        .map(|p| {
            let bytes = std::fs::read(&p).map_err(|e| CliError::io(&p, e))?;
            out.input(&p.display().to_string(), &bytes);
            let field = read_flo(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok((p, field))
        })
        .collect()
}

fn load_dataset(path: &Path, stage: &str, shown: &str, out: &mut StageOutput) -> Result<PatchDataset> {
    let bytes = read_artifact(path, stage)?;
    out.input(shown, &bytes);
    PatchDataset::from_bytes(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// The dataset a downstream stage analyses: the `dataset` override, else the
/// chosen core subset, the preprocessed dataset or the synthetic sample,
/// whichever exists first. Returns the name recorded in the manifest.
fn analysis_dataset(cfg: &PipelineConfig, subset: Option<usize>, out: &mut StageOutput) -> Result<(String, PatchDataset)> {
    if let Some(p) = &cfg.dataset {
        let shown = p.display().to_string();
        return Ok((shown.clone(), load_dataset(p, "the stage producing it", &shown, out)?));
    }
    let mut names: Vec<String> = subset.and_then(|i| cfg.core_subsets.get(i)).map(|s| s.file_name()).into_iter().collect();
    names.extend([PREPROCESSED.to_string(), SYNTHETIC.to_string()]);
    for name in names {
        let path = cfg.out_dir.join(&name);
        if path.exists() {
            let ds = load_dataset(&path, "density", &name, out)?;
            return Ok((name, ds));
        }
    }
    Err(CliError::MissingArtifact {
        path: cfg.out_dir.join(PREPROCESSED),
        hint: "no analysis dataset; run `preprocess` or `synthetic` first".into(),
    })
}

fn require_nonempty(ds: &PatchDataset, name: &str) -> Result<()> {
    if ds.is_empty() {
        Err(CliError::Data(format!("{name} has no records")))
    } else {
        Ok(())
    }
}

pub fn ingest(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut out = StageOutput::new("ingest");
    let fields = read_fields(cfg, &mut out)?;
    let mut csv = String::from("frame,path,width,height,valid_pixels\n");
    for (frame, (path, f)) in fields.iter().enumerate() {
        let valid = (0..f.height()).flat_map(|r| (0..f.width()).map(move |c| (r, c))).filter(|&(r, c)| f.is_valid(r, c)).count();
        let _ = writeln!(csv, "{frame},{},{},{},{valid}", path.display(), f.width(), f.height());
    }
    out.add("frames.csv", csv);
    finish(out, "ingest", cfg)
}

pub fn sample(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut out = StageOutput::new("sample");
    let fields: Vec<FlowField> = read_fields(cfg, &mut out)?.into_iter().map(|(_, f)| f).collect();
    let ds = sample_patches(&fields, cfg.per_frame, cfg.seeds.sample)?;
    out.add(RAW, ds.to_bytes());
    out.add("raw.csv", ds.to_csv());
    finish(out, "sample", cfg)
}

pub fn preprocess(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut out = StageOutput::new("preprocess");
    let raw = load_dataset(&cfg.out_dir.join(RAW), "sample", RAW, &mut out)?;
    require_nonempty(&raw, RAW)?;
    let top = top_contrast_filter(&raw, cfg.contrast_percent)?;
    let x = downsample(&top, cfg.downsample_n.min(top.len()), cfg.seeds.downsample)?;
    out.add(PREPROCESSED, x.to_bytes());
    out.add("preprocessed.csv", x.to_csv());

    let tiers = annotate_locations(&raw, &cfg.tiers);
    out.add("locations.csv", locations_csv(&raw, &tiers));
    let mut sorted = cfg.tiers.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut plot = Plot::new("High-contrast patch locations", "column", "row (down)");
    for t in sorted {
        let pts = raw
            .records
            .iter()
            .zip(&tiers)
            .filter(|(_, x)| **x == Some(t))
            .map(|(r, _)| (r.col as f64 + 1.0, -(r.row as f64) - 1.0))
            .collect();
        plot = plot.with(Series::new(format!("top {t}%"), pts, Style::Points));
    }
    out.add("locations.svg", plot.render());
    finish(out, "preprocess", cfg)
}

pub fn density(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut out = StageOutput::new("density");
    let (name, ds) = analysis_dataset(cfg, None, &mut out)?;
    require_nonempty(&ds, &name)?;
    let pts = embed_patches(&ds.patches(), cfg.metric.patch_metric());
    let mut rho_by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in &cfg.core_subsets {
        if let std::collections::btree_map::Entry::Vacant(e) = rho_by_k.entry(s.k) {
            e.insert(knn_distances_points(&pts, s.k)?);
        }
    }
    for (k, rho) in &rho_by_k {
        let ranks = density_ranks(rho);
        let mut csv = String::from("index,rho,rank\n");
        for (i, (r, rank)) in rho.iter().zip(&ranks).enumerate() {
            let _ = writeln!(csv, "{i},{r},{rank}");
        }
        out.add(format!("density_k{k}.csv"), csv);
    }
    let mut subsets = Vec::new();
    for s in &cfg.core_subsets {
        let idx = core_indices(&rho_by_k[&s.k], s.q);
        let core = ds.subset(&idx, ProvenanceStep::new("core_subset", &[("k", s.k as f64), ("q", s.q)]));
        out.add(s.file_name(), core.to_bytes());
        subsets.push(core);
    }
    let names: Vec<String> = std::iter::once("dataset".to_string()).chain(cfg.core_subsets.iter().map(|s| s.label())).collect();
    let all: Vec<&PatchDataset> = std::iter::once(&ds).chain(&subsets).collect();
    let curves = directionality_percentiles(&all);
    out.add("directionality_percentiles.csv", percentiles_csv(&names, &curves));
    let mut plot = Plot::new("Directionality percentiles", "percentile", "directionality r");
    plot.y_range = Some((0.0, 1.0));
    for (n, c) in names.iter().zip(&curves) {
        plot = plot.with(Series::new(n.clone(), c.iter().enumerate().map(|(p, &v)| (p as f64, v)).collect(), Style::Line));
    }
    out.add("directionality_percentiles.svg", plot.render());
    finish(out, "density", cfg)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ClassView {
    birth: f64,
    death: Option<f64>,
    persistence: Option<f64>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct PersistenceView {
    dataset: String,
    records: usize,
    landmarks: usize,
    coverage_radius: f64,
    max_scale: f64,
    prime: u32,
    classes_per_dim: Vec<usize>,
    /// Longest-lived classes per dimension, at most five.
    top_classes: Vec<Vec<ClassView>>,
}

pub fn persistence(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut out = StageOutput::new("persistence");
    let p = &cfg.persistence;
    let (name, ds) = analysis_dataset(cfg, Some(p.subset), &mut out)?;
    require_nonempty(&ds, &name)?;
    let patches = ds.patches();
    let pts = embed_patches(&patches, cfg.metric.patch_metric());
    let (idx, coverage) = if pts.len() > p.landmarks { maxmin_subsample(&pts, p.landmarks) } else { ((0..pts.len()).collect(), 0.0) };
    let result = rips_persistence_points(
        &pts.select(&idx),
        &RipsOptions { max_dim: p.max_dim, max_scale: p.max_scale, prime: cfg.prime_p },
    )?;
    let diagram = &result.diagram;
    out.add("diagram.csv", diagram.to_csv());

    let top = result.max_scale * 1.05;
    let mut plot = Plot::new("Persistence diagram", "birth", "death (∞ drawn at top)");
    plot.x_range = Some((0.0, top));
    plot.y_range = Some((0.0, top));
    plot.diagonal = true;
    for d in 0..=p.max_dim {
        let pts = diagram.dim(d).map(|x| (x.birth, if x.death.is_finite() { x.death } else { top })).collect();
        plot = plot.with(Series::new(format!("H{d}"), pts, Style::Points));
    }
    out.add("diagram.svg", plot.render());

    let mut csv = String::from("index,x,y\n");
    let mut proj = Vec::with_capacity(patches.len());
    for (i, q) in patches.iter().enumerate() {
        let [x, y] = plane_projection(q, p.projection_theta);
        let _ = writeln!(csv, "{i},{x},{y}");
        proj.push((x, y));
    }
    out.add("projection.csv", csv);
    let title = format!("Projection onto the θ = {} plane", p.projection_theta);
    out.add("projection.svg", Plot::new(&title, "x", "y").with(Series::new(&name, proj, Style::Points)).render());

    let view = PersistenceView {
        dataset: name,
        records: ds.len(),
        landmarks: idx.len(),
        coverage_radius: coverage,
        max_scale: result.max_scale,
        prime: result.prime,
        classes_per_dim: (0..=p.max_dim).map(|d| diagram.dim(d).count()).collect(),
        top_classes: (0..=p.max_dim)
            .map(|d| {
                let mut v: Vec<_> = diagram.dim(d).collect();
                v.sort_by(|a, b| b.persistence().total_cmp(&a.persistence()));
                v.iter()
                    .take(5)
                    .map(|x| ClassView {
                        birth: x.birth,
                        death: x.death.is_finite().then_some(x.death),
                        persistence: x.death.is_finite().then(|| x.persistence()),
                    })
                    .collect()
            })
            .collect(),
    };
    out.add_json("persistence.json", &view);
    finish(out, "persistence", cfg)
}

/// Ground truth written next to a synthetic sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TruthFile {
    pub model: String,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub truth: Vec<GroundTruth>,
}

pub fn synthetic(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut out = StageOutput::new("synthetic");
    let kind = cfg.synthetic.kind()?;
    let s = sample_model(&kind, cfg.synthetic.n, cfg.synthetic.sigma, cfg.seeds.synthetic)?;
    out.add(SYNTHETIC, s.dataset.to_bytes());
    out.add("synthetic.csv", s.dataset.to_csv());
    let truth = TruthFile {
        model: kind.name().to_string(),
        n: cfg.synthetic.n,
        sigma: cfg.synthetic.sigma,
        seed: cfg.seeds.synthetic,
        truth: s.ground_truth,
    };
    out.add_json(TRUTH, &truth);
    finish(out, "synthetic", cfg)
}

/// Ground truth for `name`, when it is the synthetic sample and its truth
/// file matches it record for record.
fn truth_for(cfg: &PipelineConfig, name: &str, ds: &PatchDataset, out: &mut StageOutput) -> Result<Option<TruthFile>> {
    if cfg.dataset.is_some() || name != SYNTHETIC {
        return Ok(None);
    }
    let path = cfg.out_dir.join(TRUTH);
    let Ok(bytes) = std::fs::read(&path) else { return Ok(None) };
    let t: TruthFile = serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if t.truth.len() != ds.len() {
        return Ok(None);
    }
    out.input(TRUTH, &bytes);
    Ok(Some(t))
}

/// Named ground-truth angles of one record.
fn truth_angles(t: &GroundTruth) -> Vec<(&'static str, f64)> {
    match *t {
        GroundTruth::Torus { alpha, theta } | GroundTruth::Extended { alpha, theta, .. } | GroundTruth::Klein { alpha, theta } => vec![
            ("alpha", alpha),
            ("theta", theta),
            ("alphaPlusTheta", alpha + theta),
            ("alphaMinusTheta", alpha - theta),
        ],
        GroundTruth::LimitCircle { phi } => vec![("phi", phi)],
        GroundTruth::StepEdge { direction, .. } => vec![("direction", direction)],
        GroundTruth::Quadratic { .. } => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CorrelationReport {
    pub records: usize,
    /// Circular correlation of the fiber coordinate with each ground-truth angle.
    pub coordinates: BTreeMap<String, f64>,
    pub best: String,
    pub best_value: f64,
}

fn correlation_report(fiber: &[Option<f64>], truth: &[GroundTruth]) -> Option<CorrelationReport> {
    let mut series: BTreeMap<&'static str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut records = 0;
    for (f, t) in fiber.iter().zip(truth) {
        let Some(f) = f else { continue };
        records += 1;
        for (name, v) in truth_angles(t) {
            let e = series.entry(name).or_default();
            e.0.push(*f);
            e.1.push(v);
        }
    }
    let coordinates: BTreeMap<String, f64> =
        series.iter().map(|(k, (a, b))| (k.to_string(), circular_correlation(a, b))).collect();
    let (best, best_value) = coordinates.iter().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, v)| (k.clone(), *v))?;
    Some(CorrelationReport { records, coordinates, best, best_value })
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct EdgeView {
    j: usize,
    k: usize,
    /// Row-major 2×2 matrix.
    omega: [f64; 4],
    alignment_error: f64,
    sign: i8,
    shared: usize,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SyncView {
    residual: f64,
    spectral_gap: f64,
    gap_warning: bool,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BundleView {
    dataset: String,
    records: usize,
    base_map: BaseChoice,
    base_space: BaseSpace,
    n_sets: usize,
    overlap: f64,
    radius: f64,
    landmarks: Vec<f64>,
    fiber_sizes: Vec<usize>,
    dropped: usize,
    charts: Vec<flowbundle::bundle::ChartSummary>,
    edges: Vec<EdgeView>,
    cycle_product: i8,
    tau: Option<Vec<i8>>,
    verdict: &'static str,
    synchronization: Option<SyncView>,
    degenerate: Option<usize>,
    correlation: Option<CorrelationReport>,
}

fn bundle_view(name: String, n: usize, base_map: BaseChoice, r: &BundleReport, correlation: Option<CorrelationReport>) -> BundleView {
    BundleView {
        dataset: name,
        records: n,
        base_map,
        base_space: r.cover.base,
        n_sets: r.cover.n,
        overlap: r.cover.c,
        radius: r.cover.radius,
        landmarks: r.cover.landmarks.clone(),
        fiber_sizes: r.fibers.members.iter().map(Vec::len).collect(),
        dropped: r.fibers.dropped,
        charts: r.charts.clone(),
        edges: r
            .cocycle
            .edges
            .iter()
            .zip(&r.orientation.signs)
            .map(|(e, s)| {
                let m = e.omega.0;
                EdgeView { j: e.j, k: e.k, omega: [m[0][0], m[0][1], m[1][0], m[1][1]], alignment_error: e.error, sign: s.2, shared: e.shared }
            })
            .collect(),
        cycle_product: r.orientation.cycle_product(),
        tau: r.orientation.potential.clone(),
        verdict: if r.orientable() { "Orientable" } else { "NotCoboundary" },
        synchronization: r.synchronization.as_ref().map(|s| SyncView {
            residual: s.residual,
            spectral_gap: s.spectral_gap,
            gap_warning: s.gap_warning,
        }),
        degenerate: r.trivialization.as_ref().map(|t| t.degenerate),
        correlation,
    }
}

fn base_values(choice: BaseChoice, patches: &[FlowPatch]) -> (Vec<Option<f64>>, BaseSpace) {
    match choice {
        BaseChoice::PredominantDirection | BaseChoice::Auto => (projective_base(patches), BaseSpace::ProjectiveLine),
        BaseChoice::LiftedDirection => (patches.iter().map(|p| lifted_direction(p).ok()).collect(), BaseSpace::Circle),
        BaseChoice::KleinAngle => (patches.iter().map(|p| Some(klein_base_angle(p))).collect(), BaseSpace::Circle),
    }
}

pub fn bundle(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut out = StageOutput::new("bundle");
    let (name, ds) = analysis_dataset(cfg, Some(cfg.bundle.subset), &mut out)?;
    require_nonempty(&ds, &name)?;
    let truth = truth_for(cfg, &name, &ds, &mut out)?;
    let choice = match (cfg.bundle.base, truth.as_ref().map(|t| t.model.as_str())) {
        (BaseChoice::Auto, Some("kleinControl")) => BaseChoice::KleinAngle,
        (BaseChoice::Auto, Some("stepEdgeCircles")) => BaseChoice::LiftedDirection,
        (BaseChoice::Auto, _) => BaseChoice::PredominantDirection,
        (c, _) => c,
    };
    let patches = ds.patches();
    let (base, space) = base_values(choice, &patches);
    let pts = embed_patches(&patches, cfg.metric.patch_metric());
    let config = BundleConfig {
        n_sets: cfg.cover.n_sets,
        overlap: cfg.cover.overlap,
        circular: CircularOptions { n_landmarks: cfg.bundle.landmarks, class_index: 0, prime: cfg.prime_p },
    };
    let report = run_bundle(&pts, &base, space, &config)?;
    let fiber: Vec<Option<f64>> = match &report.trivialization {
        Some(t) => t.fiber.clone(),
        None => vec![None; ds.len()],
    };
    let correlation = truth.as_ref().and_then(|t| correlation_report(&fiber, &t.truth));

    let mut csv = String::from("index,base,fiber\n");
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (i, (b, f)) in base.iter().zip(&fiber).enumerate() {
        let _ = writeln!(csv, "{i},{},{}", fmt(*b), fmt(*f));
    }
    out.add("trivialization.csv", csv);
    let pts: Vec<(f64, f64)> = base.iter().zip(&fiber).filter_map(|(b, f)| Some(((*b)?, (*f)?))).collect();
    let mut plot = Plot::new("Global trivialization", "base angle", "fiber angle")
        .with(Series::new(if report.orientable() { "records" } else { "not orientable" }, pts, Style::Points));
    plot.x_range = Some((0.0, space.period()));
    plot.y_range = Some((0.0, std::f64::consts::TAU));
    out.add("trivialization.svg", plot.render());
    out.add_json("bundle.json", &bundle_view(name, ds.len(), choice, &report, correlation));
    finish(out, "bundle", cfg)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase", tag = "status")]
enum MatchView {
    Matched { edge: usize, direction: f64, distance: f64, antipodal_edge: usize, antipodal_direction: f64 },
    PoorMatch { distance: f64, quadratic_s: f64, quadratic_t: f64, quadratic_distance: f64 },
    Unmatched { reason: String },
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct NodeView {
    id: usize,
    fiber: usize,
    label: usize,
    size: usize,
    component: usize,
    step_edge: MatchView,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ComponentView {
    id: usize,
    records: usize,
    nodes: usize,
    /// `circle`, `noClass`, `tooSmall` or `error`.
    outcome: String,
    class_persistence: Option<f64>,
    coordinates: Option<String>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct GraphView {
    dataset: String,
    records: usize,
    n_sets: usize,
    overlap: f64,
    eps: f64,
    min_pts: usize,
    nodes: Vec<NodeView>,
    edges: Vec<flowbundle::cluster_graph::ClusterEdge>,
    components: Vec<ComponentView>,
    noise: usize,
    weight_cut: f64,
    edges_at_or_below_cut: usize,
    components_after_cut: usize,
}

fn node_match(patches: &[FlowPatch], members: &[usize]) -> MatchView {
    match match_step_edge(patches, members, 1) {
        Ok(m) => MatchView::Matched {
            edge: m.edge,
            direction: m.direction,
            distance: m.distance,
            antipodal_edge: m.antipodal_edge,
            antipodal_direction: m.antipodal_direction,
        },
        Err(ClusterError::PoorMatch { distance }) => {
            let (s, t, d) = cluster_mean(patches, members).map(|m| nearest_quadratic(&m)).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            MatchView::PoorMatch { distance, quadratic_s: s, quadratic_t: t, quadratic_distance: d }
        }
        Err(e) => MatchView::Unmatched { reason: e.to_string() },
    }
}

pub fn clusters(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut out = StageOutput::new("clusters");
    let (name, ds) = analysis_dataset(cfg, Some(cfg.clusters.subset), &mut out)?;
    require_nonempty(&ds, &name)?;
    let patches = ds.patches();
    let pts = embed_patches(&patches, cfg.metric.patch_metric());
    let config = ClusterConfig { n_sets: cfg.cover.n_sets, overlap: cfg.cover.overlap, eps: cfg.dbscan.eps, min_pts: cfg.dbscan.min_pts };
    let run = run_cluster_graph(&pts, &projective_base(&patches), BaseSpace::ProjectiveLine, &config)?;
    let comps = &run.components;

    let nodes: Vec<NodeView> = run
        .graph
        .nodes
        .par_iter()
        .enumerate()
        .map(|(id, n)| NodeView {
            id,
            fiber: n.fiber,
            label: n.label,
            size: n.members.len(),
            component: comps.node_component[id],
            step_edge: node_match(&patches, &n.members),
        })
        .collect();

    let opts = CircularOptions { prime: cfg.prime_p, ..Default::default() };
    let analyses: Vec<(ComponentView, Option<String>)> = (0..comps.len())
        .into_par_iter()
        .map(|c| {
            let members = comps.members(c);
            let mut view = ComponentView {
                id: c,
                records: members.len(),
                nodes: comps.node_counts[c],
                outcome: "tooSmall".into(),
                class_persistence: None,
                coordinates: None,
            };
            if members.len() < MIN_COMPONENT_SIZE {
                return (view, None);
            }
            match component_circular_analysis(&pts.select(&members), &opts) {
                Ok(a) => match a.outcome {
                    CircleOutcome::Circle(cc) => {
                        let mut csv = String::from("point_index,angle\n");
                        for (i, v) in members.iter().zip(&cc.values) {
                            let _ = writeln!(csv, "{i},{v}");
                        }
                        view.outcome = "circle".into();
                        view.class_persistence = Some(cc.class_persistence);
                        view.coordinates = Some(format!("component_{c}.csv"));
                        (view, Some(csv))
                    }
                    CircleOutcome::NoClass => {
                        view.outcome = "noClass".into();
                        (view, None)
                    }
                },
                Err(e) => {
                    view.outcome = format!("error: {e}");
                    (view, None)
                }
            }
        })
        .collect();
    let mut components = Vec::with_capacity(analyses.len());
    for (view, csv) in analyses {
        if let (Some(file), Some(csv)) = (&view.coordinates, csv) {
            out.add(file.clone(), csv);
        }
        components.push(view);
    }

    let summary = GraphSummary::new(&run.graph, run.cover.n, comps);
    out.add("summary.csv", summary.to_csv());
    let series = |name: &str, v: &[usize]| Series::new(name, v.iter().enumerate().map(|(i, &x)| (i as f64, x as f64)).collect(), Style::Line);
    let plot = Plot::new("Cluster graph summary", "index", "count")
        .with(series("clusters per fiber", &summary.clusters_per_fiber))
        .with(series("clusters per component", &summary.clusters_per_component));
    out.add("summary.svg", plot.render());
    let sizes = Plot::new("Component cardinalities", "component", "records").with(series("records", &summary.component_sizes));
    out.add("component_sizes.svg", sizes.render());

    let view = GraphView {
        dataset: name,
        records: ds.len(),
        n_sets: cfg.cover.n_sets,
        overlap: cfg.cover.overlap,
        eps: cfg.dbscan.eps,
        min_pts: cfg.dbscan.min_pts,
        nodes,
        edges: run.graph.edges.clone(),
        components,
        noise: comps.record_component.iter().filter(|&&c| c < 0).count(),
        weight_cut: cfg.weight_cut,
        edges_at_or_below_cut: edges_at_or_below(&run.graph, cfg.weight_cut),
        components_after_cut: filtration_components(&run.graph, cfg.weight_cut),
    };
    out.add_json("graph.json", &view);
    finish(out, "clusters", cfg)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct StageEntry {
    stage: String,
    parameter_hash: String,
    inputs: Vec<String>,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ReportView {
    stages: Vec<StageEntry>,
    /// Headline numbers from each stage's main artifact.
    results: BTreeMap<String, Value>,
}

fn pick(v: &Value, keys: &[&str]) -> Value {
    let mut m = serde_json::Map::new();
    for k in keys {
        if let Some(x) = v.get(*k) {
            m.insert(k.to_string(), x.clone());
        }
    }
    Value::Object(m)
}

fn read_json(path: &Path) -> Result<Value> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn report(cfg: &PipelineConfig) -> Result<Manifest> {
    let mut out = StageOutput::new("report");
    let mut stages = Vec::new();
    let mut results = BTreeMap::new();
    let mut lines = Vec::new();
    for stage in STAGES {
        let path = cfg.out_dir.join(Manifest::file_name(stage));
        if !path.exists() {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        out.input(&Manifest::file_name(stage), &bytes);
        let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        lines.push(format!("{stage}: {} artifacts, parameters {}", m.artifacts.len(), &m.parameter_hash[..12]));
        let main = match stage {
            "persistence" => Some(("persistence.json", &["landmarks", "maxScale", "classesPerDim", "topClasses"][..])),
            "bundle" => Some(("bundle.json", &["verdict", "cycleProduct", "synchronization", "correlation", "baseMap"][..])),
            "clusters" => Some(("graph.json", &["records", "noise", "edgesAtOrBelowCut", "componentsAfterCut"][..])),
            _ => None,
        };
        if let Some((file, keys)) = main {
            let p = cfg.out_dir.join(file);
            if p.exists() {
                let v = read_json(&p)?;
                let mut picked = pick(&v, keys);
                if stage == "clusters" {
                    let comps = v.get("components").and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[]);
                    let circles = comps.iter().filter(|c| c.get("outcome").and_then(Value::as_str) == Some("circle")).count();
                    picked["components"] = comps.len().into();
                    picked["circleComponents"] = circles.into();
                }
                if stage == "bundle" {
                    if let Some(verdict) = picked.get("verdict").and_then(Value::as_str) {
                        lines.push(format!("  verdict: {verdict}"));
                    }
                    if let Some(c) = picked.get("correlation").filter(|c| !c.is_null()) {
                        lines.push(format!("  best correlation: {} = {}", c["best"], c["bestValue"]));
                    }
                }
                results.insert(stage.to_string(), picked);
            }
        }
        stages.push(StageEntry {
            stage: stage.to_string(),
            parameter_hash: m.parameter_hash,
            inputs: m.inputs.into_iter().map(|d| d.path).collect(),
            artifacts: m.artifacts.into_iter().map(|d| d.path).collect(),
        });
    }
    if stages.is_empty() {
        return Err(CliError::MissingArtifact {
            path: cfg.out_dir.join("manifest_*.json"),
            hint: "no stage has been run in this output directory".into(),
        });
    }
    out.add_json("report.json", &ReportView { stages, results });
    out.add("report.svg", text_panel("flowbundle run summary", &lines));
    finish(out, "report", cfg)
}
