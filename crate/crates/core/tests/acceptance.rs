//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line and then asserts.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use flowbundle::bundle::{lifted_direction, projective_base, run_bundle, BaseSpace, BundleConfig};
use flowbundle::circular::{circular_coordinates, CircularOptions};
use flowbundle::cluster_graph::{
    component_circular_analysis, dbscan, dominant_class, filtration_components, match_step_edge, mode,
    run_cluster_graph, CircleOutcome, ClusterConfig, MIN_COMPONENT_SIZE,
};
use flowbundle::density::{core_subset, knn_distances_points, CoreSubsetSpec};
use flowbundle::flow_io::{downsample, read_flo, sample_patches, top_contrast_filter, write_flo, FlowField, PatchDataset};
use flowbundle::models::{
    complement_id, enumerate_step_edge_patches, extended_patch, klein_base_angle, perp_patch,
    sample_model, tau, torus_patch, GroundTruth, ModelKind,
};
use flowbundle::patch::{
    d_matrix, directionality, embed_patches, predominant_direction, FlowPatch, PatchMetric, ProjectiveAngle, PIXELS,
};
use flowbundle::persistence::{rips_persistence_points, PersistenceDiagram, RipsOptions};
use flowbundle::points::{euclidean, Points};
use flowbundle::stats::{circular_correlation, nearest_rank_percentile, winding_number};
use nalgebra::{Matrix2, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum length of a Rips scale window with the torus Betti numbers.
const BETTI_WINDOW_MIN: f64 = 0.1;

fn verdict(n: u32, ok: bool, elapsed: Duration, limit: Option<Duration>, detail: &str) {
    let in_time = limit.is_none_or(|l| elapsed < l);
    let pass = ok && in_time;
    println!(
        "criterion {n}: {} ({detail}; {:.2}s{})",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.map(|l| format!(" of {}s", l.as_secs())).unwrap_or_default()
    );
    assert!(ok, "criterion {n} failed: {detail}");
    assert!(in_time, "criterion {n} exceeded its time budget");
}

fn mtm_eigenvalues(p: &FlowPatch) -> (f64, f64) {
    let (u, v) = (p.u(), p.v());
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let m = Matrix2::new(dot(u, u), dot(u, v), dot(v, u), dot(v, v));
    let e = SymmetricEigen::new(m).eigenvalues;
    (e[0].max(e[1]), e[0].min(e[1]))
}

#[test]
fn criterion_01_proposition_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = [0.0f64; 6];
    for _ in 0..1000 {
        let r: f64 = 1.0 - rng.random_range(0.0..1.0);
        let a = rng.random_range(0.0..TAU);
        let t = rng.random_range(0.0..TAU);
        let p = extended_patch(r, a, t).unwrap();
        let mean = (p.u().iter().sum::<f64>() / 9.0).abs().max((p.v().iter().sum::<f64>() / 9.0).abs());
        let norm = d_matrix().flow_inner(&p, &p).sqrt();
        let dir = predominant_direction(&p).unwrap().distance(ProjectiveAngle::new(t));
        let cover = p.distance(&extended_patch(r, a + PI, t + PI).unwrap());
        let (hi, lo) = mtm_eigenvalues(&p);
        let (c2, s2) = (tau(r).cos().powi(2), tau(r).sin().powi(2));
        let vals = [mean, (norm - 1.0).abs(), (directionality(&p) - r).abs(), dir, cover, (hi - c2).abs().max((lo - s2).abs())];
        for (w, v) in worst.iter_mut().zip(vals) {
            *w = w.max(v);
        }
    }
    let limits = [1e-12, 1e-9, 1e-9, 1e-6, 1e-12, 1e-9];
    let ok = worst.iter().zip(limits).all(|(w, l)| *w <= l);
    let detail = format!(
        "mean {:.1e}, norm {:.1e}, r {:.1e}, dir {:.1e}, cover {:.1e}, eig {:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4], worst[5]
    );
    verdict(1, ok, start.elapsed(), Some(Duration::from_secs(5)), &detail);
}

#[test]
fn criterion_02_perp_orthogonality() {
    let start = Instant::now();
    let d = d_matrix();
    let grid: Vec<f64> = (0..20).map(|k| TAU * k as f64 / 20.0).collect();
    let mut worst = [0.0f64; 5];
    for &a in &grid {
        for &t in &grid {
            let perp = perp_patch(a, t);
            worst[4] = worst[4].max((d.flow_inner(&perp, &perp) - 1.0).abs());
            for &x in &grid {
                let fa = torus_patch(x, t);
                let ft = torus_patch(a, x);
                worst[0] = worst[0].max(perp.dot(&fa).abs());
                worst[1] = worst[1].max(perp.dot(&ft).abs());
                worst[2] = worst[2].max(d.flow_inner(&perp, &fa).abs().max((d.flow_inner(&fa, &fa) - 1.0).abs()));
                worst[3] = worst[3].max(d.flow_inner(&perp, &ft).abs().max((d.flow_inner(&ft, &ft) - 1.0).abs()));
            }
        }
    }
    let ok = worst.iter().all(|&w| w <= 1e-12);
    let detail = format!(
        "I {:.1e}, II {:.1e}, III {:.1e}, IV {:.1e}, unit {:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    );
    verdict(2, ok, start.elapsed(), Some(Duration::from_secs(5)), &detail);
}

/// Longest run of scales in `[0, max_scale)` with the given Betti numbers.
fn longest_window(diagram: &PersistenceDiagram, max_scale: f64, target: [usize; 3]) -> f64 {
    let mut crit: Vec<f64> = diagram
        .points
        .iter()
        .flat_map(|p| [p.birth, p.death])
        .filter(|x| x.is_finite() && *x < max_scale)
        .chain([0.0, max_scale])
        .collect();
    crit.sort_by(f64::total_cmp);
    crit.dedup();
    let (mut best, mut run) = (0.0f64, 0.0);
    for w in crit.windows(2) {
        if diagram.betti_at_scale(0.5 * (w[0] + w[1])) == target {
            run += w[1] - w[0];
            best = best.max(run);
        } else {
            run = 0.0;
        }
    }
    best
}

#[test]
fn criterion_03_torus_betti_signature() {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, sigma) in [(ModelKind::Torus, 0.0), (ModelKind::Torus, 0.05), (ModelKind::Extended, 0.0), (ModelKind::Extended, 0.05)] {
        let s = sample_model(&kind, 500, sigma, 0).unwrap();
        let pts = embed_patches(&s.dataset.patches(), PatchMetric::Euclidean);
        let res = rips_persistence_points(&pts, &RipsOptions { max_dim: 2, ..Default::default() }).unwrap();
        let window = longest_window(&res.diagram, res.max_scale, [1, 2, 1]);
        let this = match kind {
            ModelKind::Torus => window >= BETTI_WINDOW_MIN,
            _ => window < BETTI_WINDOW_MIN && dominant_class(&res.diagram, res.max_scale),
        };
        ok &= this;
        parts.push(format!("{} σ={sigma}: window {window:.3}", kind.name()));
    }
    verdict(3, ok, start.elapsed(), Some(Duration::from_secs(600)), &parts.join(", "));
}

#[test]
fn criterion_04_extended_bundle() {
    let start = Instant::now();
    let s = sample_model(&ModelKind::Extended, 4000, 0.05, 1).unwrap();
    let patches = s.dataset.patches();
    let pts = embed_patches(&patches, PatchMetric::Euclidean);
    let base = projective_base(&patches);
    let report = run_bundle(&pts, &base, BaseSpace::ProjectiveLine, &BundleConfig::default()).unwrap();
    let residual = report.synchronization.as_ref().map_or(f64::INFINITY, |s| s.residual);
    let mut fiber = Vec::new();
    let (mut sum, mut diff) = (Vec::new(), Vec::new());
    if let Some(t) = &report.trivialization {
        for (i, f) in t.fiber.iter().enumerate() {
            if let (Some(f), GroundTruth::Extended { alpha, theta, .. }) = (f, &s.ground_truth[i]) {
                fiber.push(*f);
                sum.push(alpha + theta);
                diff.push(alpha - theta);
            }
        }
    }
    // The fiber coordinate invariant under (α, θ) ↦ (α + π, θ + π) and
    // continuous down to the limit circle is α + θ: patches that differ only
    // in α − θ merge as r → 0.
    let merge = extended_patch(1e-6, 0.3, 1.1).unwrap().distance(&extended_patch(1e-6, 1.1, 0.3).unwrap());
    let corr = circular_correlation(&fiber, &sum);
    let ok = report.orientable() && residual < 0.3 && corr > 0.9 && merge < 1e-3;
    let detail = format!(
        "coboundary {}, residual {residual:.3}, corr(fiber, α+θ) {corr:.3}, corr(fiber, α−θ) {:.3}, limit merge {merge:.1e}",
        report.orientable(),
        circular_correlation(&fiber, &diff)
    );
    verdict(4, ok, start.elapsed(), Some(Duration::from_secs(600)), &detail);
}

#[test]
fn criterion_05_klein_negative_control() {
    let start = Instant::now();
    let mut non_orientable = 0;
    for seed in 0..100 {
        let s = sample_model(&ModelKind::KleinControl, 4000, 0.05, seed).unwrap();
        let pts = embed_patches(&s.dataset.patches(), PatchMetric::Euclidean);
        let base: Vec<Option<f64>> = s.dataset.records.iter().map(|r| Some(klein_base_angle(&r.patch))).collect();
        if let Ok(r) = run_bundle(&pts, &base, BaseSpace::Circle, &BundleConfig::default()) {
            if !r.orientable() && r.orientation.cycle_product() == -1 {
                non_orientable += 1;
            }
        }
    }
    verdict(
        5,
        non_orientable >= 95,
        start.elapsed(),
        Some(Duration::from_secs(600)),
        &format!("{non_orientable}/100 not a coboundary"),
    );
}

#[test]
fn criterion_06_step_edge_recovery() {
    let start = Instant::now();
    let s = sample_model(&ModelKind::StepEdgeCircles { edges: vec![] }, 28 * 150, 0.03, 0).unwrap();
    let patches = s.dataset.patches();
    let pts = embed_patches(&patches, PatchMetric::Euclidean);
    let base = projective_base(&patches);
    // 150 points per circle leave about 2 points per lift in the overlap of
    // adjacent sets of a 16-set cover; 8 sets keep the local clusters linked.
    let config = ClusterConfig { n_sets: 8, ..Default::default() };
    let run = run_cluster_graph(&pts, &base, BaseSpace::ProjectiveLine, &config).unwrap();
    let comps = &run.components;
    let edge_of = |i: usize| match s.ground_truth[i] {
        GroundTruth::StepEdge { edge, .. } => edge,
        _ => unreachable!(),
    };
    let (mut circles, mut matched, mut mismatched) = (0, 0, 0);
    let mut step_points = Vec::new();
    for c in 0..comps.len() {
        let members = comps.members(c);
        if members.len() < MIN_COMPONENT_SIZE {
            continue;
        }
        let analysis = component_circular_analysis(&pts.select(&members), &CircularOptions::default()).unwrap();
        if !matches!(analysis.outcome, CircleOutcome::Circle(_)) {
            continue;
        }
        circles += 1;
        let truth = edge_of(members[0]);
        let pair = BTreeSet::from([truth, complement_id(truth).unwrap()]);
        let mut all_ok = true;
        for (v, node) in run.graph.nodes.iter().enumerate() {
            if comps.node_component[v] != c {
                continue;
            }
            let ok = match (match_step_edge(&patches, &node.members, 1), match_step_edge(&patches, &node.members, -1)) {
                (Ok(p), Ok(q)) => BTreeSet::from([p.edge, q.edge]) == pair && q.edge == p.antipodal_edge,
                _ => false,
            };
            all_ok &= ok;
        }
        if all_ok {
            matched += 1;
            step_points.extend(members);
        } else {
            mismatched += 1;
        }
    }
    let step: Vec<FlowPatch> = step_points.iter().map(|&i| patches[i]).collect();
    let lifted: Vec<Option<f64>> = step.iter().map(|p| lifted_direction(p).ok()).collect();
    let bundle = run_bundle(&embed_patches(&step, PatchMetric::Euclidean), &lifted, BaseSpace::Circle, &BundleConfig::default());
    let trivial = bundle.as_ref().is_ok_and(|r| r.orientable() && r.trivialization.as_ref().is_some_and(|t| t.degenerate == 0));
    let defaults = run_cluster_graph(&pts, &base, BaseSpace::ProjectiveLine, &ClusterConfig::default()).unwrap();
    let ok = circles >= 26 && mismatched == 0 && trivial;
    let detail = format!(
        "{circles} circle components, {matched} matched, {mismatched} mismatched, lifted bundle trivial {trivial}; 16-set cover: {} components",
        defaults.components.len()
    );
    verdict(6, ok, start.elapsed(), Some(Duration::from_secs(900)), &detail);
}

/// DBSCAN written from the definition: core points by counting, clusters as
/// components of the core graph numbered by smallest core index, border
/// points to the lowest-numbered reachable cluster.
fn reference_dbscan(points: &Points, eps: f64, min_pts: usize) -> Vec<i64> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let d: f64 = points.point(i).iter().zip(points.point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        d <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        let mut queue = vec![s];
        comp[s] = next;
        while let Some(p) = queue.pop() {
            for q in 0..n {
                if core[q] && comp[q] == usize::MAX && near(p, q) {
                    comp[q] = next;
                    queue.push(q);
                }
            }
        }
        next += 1;
    }
    (0..n)
        .map(|i| {
            if core[i] {
                comp[i] as i64
            } else {
                (0..n).filter(|&j| core[j] && near(i, j)).map(|j| comp[j] as i64).min().unwrap_or(-1)
            }
        })
        .collect()
}

#[test]
fn criterion_07_oracle_equivalences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut dbscan_ok = 0;
    for _ in 0..20 {
        let n = rng.random_range(100..=300);
        let dim = rng.random_range(2..=4);
        let flat: Vec<f64> = (0..n * dim).map(|_| rng.random_range(0.0..3.0)).collect();
        let p = Points::new(dim, flat);
        let (eps, min_pts) = (rng.random_range(0.2..0.6), rng.random_range(2..7));
        dbscan_ok += (dbscan(&p, eps, min_pts).unwrap() == reference_dbscan(&p, eps, min_pts)) as usize;
    }

    let mut knn_ok = true;
    for (n, k) in [(2000, 15), (500, 1), (777, 50)] {
        let flat: Vec<f64> = (0..n * 18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = Points::new(18, flat);
        let got = knn_distances_points(&p, k).unwrap();
        for i in 0..n {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| euclidean(p.point(i), p.point(j))).collect();
            d.sort_by(f64::total_cmp);
            knn_ok &= got[i] == d[k - 1];
        }
    }

    let square = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
    let sq = rips_persistence_points(&square, &RipsOptions { max_dim: 2, max_scale: Some(2.0), ..Default::default() }).unwrap();
    let h0: Vec<(f64, f64)> = sq.diagram.dim(0).map(|p| (p.birth, p.death)).collect();
    let h1: Vec<(f64, f64)> = sq.diagram.dim(1).map(|p| (p.birth, p.death)).collect();
    let square_ok = h0.len() == 4
        && h0.iter().filter(|p| p.1 == 1.0).count() == 3
        && h0.iter().any(|p| p.1.is_infinite())
        && h1 == vec![(1.0, 2f64.sqrt())]
        && sq.diagram.dim(2).count() == 0;
    // Regular hexagon of unit side: H1 born at 1, killed at √3 when the
    // first triangle (alternate vertices) fills it.
    let hexagon: Vec<[f64; 2]> = (0..6).map(|k| [(k as f64 * PI / 3.0).cos(), (k as f64 * PI / 3.0).sin()]).collect();
    let hx = rips_persistence_points(&Points::from_rows(&hexagon), &RipsOptions { max_dim: 1, max_scale: Some(3.0), ..Default::default() }).unwrap();
    let hx1: Vec<(f64, f64)> = hx.diagram.dim(1).map(|p| (p.birth, p.death)).collect();
    let hexagon_ok = hx1.len() == 1 && (hx1[0].0 - 1.0).abs() < 1e-12 && (hx1[0].1 - 3f64.sqrt()).abs() < 1e-12;

    let truth: Vec<f64> = (0..100).map(|k| TAU * k as f64 / 100.0).collect();
    let circle = Points::from_rows(&truth.iter().map(|t| [t.cos(), t.sin()]).collect::<Vec<_>>());
    let cc = circular_coordinates(&circle, &CircularOptions::default()).unwrap();
    let winding = winding_number(&cc.values, &truth);
    let corr = circular_correlation(&cc.values, &truth);

    let ok = dbscan_ok == 20 && knn_ok && square_ok && hexagon_ok && winding.abs() == 1 && corr > 0.99;
    let detail = format!(
        "dbscan {dbscan_ok}/20, knn exact {knn_ok}, square {square_ok}, hexagon {hexagon_ok}, circle winding {winding} corr {corr:.4}"
    );
    verdict(7, ok, start.elapsed(), None, &detail);
}

#[test]
fn criterion_08_format_fidelity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut flo_ok = 0;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let data: Vec<[f32; 2]> = (0..w * h).map(|_| [f32::from_bits(rng.random()), f32::from_bits(rng.random())]).collect();
        let f = FlowField::new(w, h, data);
        let bytes = write_flo(&f);
        let back = read_flo(&bytes).unwrap();
        flo_ok += (back.bits_eq(&f) && write_flo(&back) == bytes) as usize;
    }

    let s = sample_model(&ModelKind::Extended, 300, 0.05, 8).unwrap();
    let bytes = s.dataset.to_bytes();
    let back = PatchDataset::from_bytes(&bytes).unwrap();
    let dataset_ok = back.records_bits_eq(&s.dataset) && back.to_bytes() == bytes;

    let f = FlowField::new(2, 2, vec![[1.0, -1.0], [0.5, 2.0], [0.0, -0.0], [-2.5, 0.25]]);
    let golden: [u8; 44] = [
        0x50, 0x49, 0x45, 0x48, 0x02, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00,
        0x80, 0xbf, 0x00, 0x00, 0x00, 0x3f, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80,
        0x00, 0x00, 0x20, 0xc0, 0x00, 0x00, 0x80, 0x3e,
    ];
    let golden_ok = write_flo(&f) == golden && read_flo(&golden).unwrap().bits_eq(&f);
    let ok = flo_ok == 100 && dataset_ok && golden_ok;
    verdict(8, ok, start.elapsed(), None, &format!("flo {flo_ok}/100, dataset {dataset_ok}, golden {golden_ok}"));
}

#[test]
fn criterion_09_step_edge_enumeration() {
    let start = Instant::now();
    let masks = enumerate_step_edge_patches().unwrap();
    let codes: BTreeSet<u16> = masks.iter().map(|m| m.code()).collect();
    let closed = codes.iter().all(|c| codes.contains(&(!c & ((1 << PIXELS) - 1))));
    let elapsed = start.elapsed();
    let ok = masks.len() == 56 && codes.len() == 56 && closed;
    verdict(9, ok, elapsed, Some(Duration::from_secs(1)), &format!("{} masks, complement-closed {closed}", masks.len()));
}

fn flo_files(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            flo_files(&p, out);
        } else if p.extension().is_some_and(|e| e == "flo") {
            out.push(p);
        }
    }
}

fn percentile_curve(ds: &PatchDataset) -> Vec<f64> {
    let mut r: Vec<f64> = ds.records.iter().map(|x| directionality(&x.patch)).collect();
    r.sort_by(f64::total_cmp);
    (0..=100).map(|p| nearest_rank_percentile(&r, p as f64)).collect()
}

/// Runs only when `FLOWBUNDLE_SINTEL_DIR` points at a directory of
/// ground-truth `.flo` files.
#[test]
fn criterion_10_real_data() {
    let Some(dir) = std::env::var_os("FLOWBUNDLE_SINTEL_DIR") else {
        println!("criterion 10: SKIP (FLOWBUNDLE_SINTEL_DIR not set)");
        return;
    };
    let start = Instant::now();
    let mut files = Vec::new();
    flo_files(Path::new(&dir), &mut files);
    if files.is_empty() {
        println!("criterion 10: SKIP (no .flo files under {})", Path::new(&dir).display());
        return;
    }
    let fields: Vec<FlowField> = files.iter().map(|p| read_flo(&std::fs::read(p).unwrap()).unwrap()).collect();
    let raw = sample_patches(&fields, 4000, 0).unwrap();
    let top = top_contrast_filter(&raw, 20.0).unwrap();
    let x = downsample(&top, 250_000.min(top.len()), 0).unwrap();
    let subsets: Vec<PatchDataset> = [(1500, 30.0), (1500, 50.0), (50, 60.0)]
        .iter()
        .map(|&(k, q)| core_subset(&x, CoreSubsetSpec { k, q }).unwrap())
        .collect();
    let curves: Vec<Vec<f64>> = subsets.iter().chain([&x]).map(percentile_curve).collect();
    // "Strictly below": lower at every interior percentile.
    let ordered = curves.windows(2).all(|w| (1..100).all(|p| w[0][p] < w[1][p]));

    let core = &subsets[2];
    let patches = core.patches();
    let pts = embed_patches(&patches, PatchMetric::Euclidean);
    let run = run_cluster_graph(&pts, &projective_base(&patches), BaseSpace::ProjectiveLine, &ClusterConfig::default()).unwrap();
    let mut per_fiber = vec![0usize; run.cover.n];
    for node in &run.graph.nodes {
        per_fiber[node.fiber] += 1;
    }
    let cluster_mode = mode(&per_fiber).unwrap_or(0);
    let secondary = run.components.node_counts.iter().filter(|&&c| c == 2 * run.cover.n).count();
    let after_cut = filtration_components(&run.graph, 0.07);
    let ok = ordered
        && cluster_mode.abs_diff(57) <= 5
        && secondary.abs_diff(23) <= 3
        && after_cut.abs_diff(45) <= 3;
    let detail = format!(
        "{} frames, percentile order {ordered}, cluster mode {cluster_mode}, {secondary} components of {} clusters, {after_cut} components after cut",
        files.len(),
        2 * run.cover.n
    );
    verdict(10, ok, start.elapsed(), None, &detail);
}
