//! Pipeline configuration: a JSON document whose fields all have defaults.
//! Unknown fields are rejected so that typos surface as config errors.

use std::path::{Path, PathBuf};

use flowbundle::models::ModelKind;
use flowbundle::patch::PatchMetric;
use flowbundle::persistence::{is_prime, MAX_POINTS_DIM2};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// `.flo` files or directories searched recursively.
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    /// Analyse this dataset file instead of the stage's default input.
    pub dataset: Option<PathBuf>,
    pub seeds: Seeds,
    pub per_frame: usize,
    pub contrast_percent: f64,
    pub downsample_n: usize,
    pub core_subsets: Vec<CoreSubset>,
    /// Contrast tiers (percent) for the location overlay.
    pub tiers: Vec<f64>,
    pub cover: CoverConfig,
    pub dbscan: DbscanConfig,
    pub weight_cut: f64,
    pub prime_p: u32,
    pub metric: Metric,
    pub persistence: PersistenceStage,
    pub bundle: BundleStage,
    pub clusters: ClusterStage,
    pub synthetic: SyntheticStage,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            out_dir: PathBuf::from("out"),
            dataset: None,
            seeds: Seeds::default(),
            per_frame: 4000,
            contrast_percent: 20.0,
            downsample_n: 250_000,
            core_subsets: vec![CoreSubset { k: 1500, q: 50.0 }, CoreSubset { k: 50, q: 60.0 }],
            tiers: vec![20.0, 1.0],
            cover: CoverConfig::default(),
            dbscan: DbscanConfig::default(),
            weight_cut: 0.07,
            prime_p: 47,
            metric: Metric::Euclidean,
            persistence: PersistenceStage::default(),
            bundle: BundleStage::default(),
            clusters: ClusterStage::default(),
            synthetic: SyntheticStage::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct Seeds {
    pub sample: u64,
    pub downsample: u64,
    pub synthetic: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self { sample: seed, downsample: seed, synthetic: seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreSubset {
    pub k: usize,
    pub q: f64,
}

impl CoreSubset {
    /// Label used in file names and CSV headers, e.g. `k1500_q50`.
    pub fn label(&self) -> String {
        format!("k{}_q{}", self.k, self.q)
    }

    pub fn file_name(&self) -> String {
        format!("core_{}.ofpd", self.label())
    }
}

impl std::str::FromStr for CoreSubset {
    type Err = String;

    /// `K:Q`, e.g. `1500:50`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (k, q) = s.split_once(':').ok_or_else(|| format!("expected K:Q, got {s:?}"))?;
        Ok(CoreSubset {
            k: k.trim().parse().map_err(|e| format!("bad k in {s:?}: {e}"))?,
            q: q.trim().parse().map_err(|e| format!("bad q in {s:?}: {e}"))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct CoverConfig {
    pub n_sets: usize,
    pub overlap: f64,
}

impl Default for CoverConfig {
    fn default() -> Self {
        Self { n_sets: 16, overlap: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct DbscanConfig {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self { eps: 0.3, min_pts: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "camelCase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Euclidean distance between DCT coordinates.
    Contrast,
}

impl Metric {
    pub fn patch_metric(self) -> PatchMetric {
        match self {
            Metric::Euclidean => PatchMetric::Euclidean,
            Metric::Contrast => PatchMetric::Contrast,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct PersistenceStage {
    /// Index into `coreSubsets` of the preferred input.
    pub subset: usize,
    pub max_dim: usize,
    /// Max-min landmarks used for the Rips complex.
    pub landmarks: usize,
    pub max_scale: Option<f64>,
    /// Plane angle for the projection artifact.
    pub projection_theta: f64,
}

impl Default for PersistenceStage {
    fn default() -> Self {
        Self { subset: 0, max_dim: 2, landmarks: 500, max_scale: None, projection_theta: 0.0 }
    }
}

/// Feature map giving each record its base value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "camelCase")]
pub enum BaseChoice {
    /// `kleinAngle` for the Klein control, `liftedDirection` for step-edge
    /// circles, `predominantDirection` otherwise.
    #[default]
    Auto,
    PredominantDirection,
    LiftedDirection,
    KleinAngle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct BundleStage {
    pub subset: usize,
    pub base: BaseChoice,
    pub landmarks: Option<usize>,
}

impl Default for BundleStage {
    fn default() -> Self {
        Self { subset: 0, base: BaseChoice::Auto, landmarks: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct ClusterStage {
    pub subset: usize,
}

impl Default for ClusterStage {
    fn default() -> Self {
        Self { subset: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct SyntheticStage {
    pub model: String,
    pub n: usize,
    pub sigma: f64,
    /// Minority-mask ids for `stepEdgeCircles`; empty means all 28.
    pub edges: Vec<usize>,
}

impl Default for SyntheticStage {
    fn default() -> Self {
        Self { model: "extended".into(), n: 4000, sigma: 0.05, edges: Vec::new() }
    }
}

impl SyntheticStage {
    pub fn kind(&self) -> Result<ModelKind> {
        match ModelKind::parse(&self.model) {
            Some(ModelKind::StepEdgeCircles { .. }) => Ok(ModelKind::StepEdgeCircles { edges: self.edges.clone() }),
            Some(kind) => Ok(kind),
            None => Err(CliError::Config(format!(
                "unknown model {:?}; expected torus, extended, limitCircle, quadratic, stepEdgeCircles or kleinControl",
                self.model
            ))),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Rejects values the library would refuse later.
    pub fn validate(&self) -> Result<()> {
        check(self.per_frame > 0, || "perFrame must be positive".into())?;
        check(self.contrast_percent > 0.0 && self.contrast_percent <= 100.0, || {
            format!("contrastPercent {} not in (0, 100]", self.contrast_percent)
        })?;
        check(self.downsample_n > 0, || "downsampleN must be positive".into())?;
        for s in &self.core_subsets {
            check(s.k > 0, || format!("coreSubsets: k must be positive in {}", s.label()))?;
            check(s.q > 0.0 && s.q <= 100.0, || format!("coreSubsets: q {} not in (0, 100]", s.q))?;
        }
        for &t in &self.tiers {
            check(t > 0.0 && t <= 100.0, || format!("tier {t} not in (0, 100]"))?;
        }
        check(self.cover.n_sets >= 3, || format!("cover.nSets {} < 3", self.cover.n_sets))?;
        check(self.cover.overlap > 0.0 && self.cover.overlap <= 0.5, || {
            format!("cover.overlap {} not in (0, 1/2]", self.cover.overlap)
        })?;
        check(self.dbscan.eps > 0.0 && self.dbscan.eps.is_finite(), || format!("dbscan.eps {} must be positive", self.dbscan.eps))?;
        check(self.dbscan.min_pts >= 1, || "dbscan.minPts must be at least 1".into())?;
        check((0.0..=1.0).contains(&self.weight_cut), || format!("weightCut {} not in [0, 1]", self.weight_cut))?;
        check(is_prime(self.prime_p), || format!("primeP {} is not prime", self.prime_p))?;
        let p = &self.persistence;
        check(p.max_dim <= 2, || format!("persistence.maxDim {} > 2", p.max_dim))?;
        check(p.landmarks >= 2, || "persistence.landmarks must be at least 2".into())?;
        check(p.max_dim < 2 || p.landmarks <= MAX_POINTS_DIM2, || {
            format!("persistence.landmarks {} exceeds {MAX_POINTS_DIM2} for maxDim 2", p.landmarks)
        })?;
        check(p.max_scale.is_none_or(|s| s > 0.0), || "persistence.maxScale must be positive".into())?;
        check(p.projection_theta.is_finite(), || "persistence.projectionTheta must be finite".into())?;
        check(self.bundle.landmarks.is_none_or(|l| l >= 3), || "bundle.landmarks must be at least 3".into())?;
        check(self.synthetic.n > 0, || "synthetic.n must be positive".into())?;
        check(self.synthetic.sigma >= 0.0 && self.synthetic.sigma.is_finite(), || {
            format!("synthetic.sigma {} must be non-negative", self.synthetic.sigma)
        })?;
        self.synthetic.kind()?;
        for &e in &self.synthetic.edges {
            check(flowbundle::models::minority_edge_ids().contains(&e), || format!("synthetic.edges: {e} is not a minority mask id"))?;
        }
        Ok(())
    }

    /// Parameters that determine a stage's output, as canonical JSON. Paths
    /// of inputs are recorded with content hashes in the manifest instead.
    pub fn stage_parameters(&self, stage: &str) -> Value {
        match stage {
            "ingest" => json!({}),
            "sample" => json!({ "perFrame": self.per_frame, "seed": self.seeds.sample }),
            "preprocess" => json!({
                "contrastPercent": self.contrast_percent,
                "downsampleN": self.downsample_n,
                "seed": self.seeds.downsample,
                "tiers": self.tiers,
            }),
            "density" => json!({ "coreSubsets": self.core_subsets, "metric": self.metric }),
            "persistence" => json!({
                "persistence": self.persistence,
                "coreSubset": self.core_subsets.get(self.persistence.subset),
                "primeP": self.prime_p,
                "metric": self.metric,
            }),
            "bundle" => json!({
                "bundle": self.bundle,
                "coreSubset": self.core_subsets.get(self.bundle.subset),
                "cover": self.cover,
                "primeP": self.prime_p,
                "metric": self.metric,
            }),
            "clusters" => json!({
                "clusters": self.clusters,
                "coreSubset": self.core_subsets.get(self.clusters.subset),
                "cover": self.cover,
                "dbscan": self.dbscan,
                "weightCut": self.weight_cut,
                "primeP": self.prime_p,
                "metric": self.metric,
            }),
            "synthetic" => json!({ "synthetic": self.synthetic, "seed": self.seeds.synthetic }),
            _ => json!({}),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Hash of a JSON value; object keys are sorted by `serde_json`'s map.
pub fn value_hash(v: &Value) -> String {
    sha256_hex(v.to_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"cover": {"nSets": 8}, "seeds": {"sample": 3}}"#).unwrap();
        assert_eq!(c.cover, CoverConfig { n_sets: 8, overlap: 0.5 });
        assert_eq!(c.seeds, Seeds { sample: 3, downsample: 0, synthetic: 0 });
        assert_eq!(c.per_frame, 4000);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"perFrames": 10}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"dbscan": {"epsilon": 1}}"#).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let bad: Vec<Box<dyn Fn(&mut PipelineConfig)>> = vec![
            Box::new(|c| c.contrast_percent = 0.0),
            Box::new(|c| c.cover.n_sets = 2),
            Box::new(|c| c.cover.overlap = 0.6),
            Box::new(|c| c.dbscan.eps = -1.0),
            Box::new(|c| c.prime_p = 48),
            Box::new(|c| c.weight_cut = 1.5),
            Box::new(|c| c.persistence.landmarks = 5000),
            Box::new(|c| c.synthetic.model = "sphere".into()),
            Box::new(|c| c.synthetic.edges = vec![1000]),
            Box::new(|c| c.core_subsets = vec![CoreSubset { k: 0, q: 10.0 }]),
            Box::new(|c| c.tiers = vec![120.0]),
        ];
        for (i, f) in bad.iter().enumerate() {
            let mut c = PipelineConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(CliError::Config(_))), "case {i}");
        }
    }

    #[test]
    fn parameter_hashes_track_relevant_fields() {
        let a = PipelineConfig::default();
        let h = |c: &PipelineConfig, s: &str| value_hash(&c.stage_parameters(s));
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        b.dbscan.eps = 0.4;
        assert_eq!(h(&a, "synthetic"), h(&b, "synthetic"));
        assert_eq!(h(&a, "bundle"), h(&b, "bundle"));
        assert_ne!(h(&a, "clusters"), h(&b, "clusters"));
        b.synthetic.sigma = 0.1;
        assert_ne!(h(&a, "synthetic"), h(&b, "synthetic"));
    }

    #[test]
    fn core_subset_parsing() {
        assert_eq!("1500:50".parse::<CoreSubset>().unwrap(), CoreSubset { k: 1500, q: 50.0 });
        assert_eq!(CoreSubset { k: 50, q: 62.5 }.file_name(), "core_k50_q62.5.ofpd");
        assert!("1500".parse::<CoreSubset>().is_err());
    }
}
