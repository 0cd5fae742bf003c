//! Argument parsing. Flags are named after the config fields they override
//! and are applied on top of the `--config` file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::artifacts::Manifest;
use crate::commands;
use crate::config::{BaseChoice, CoreSubset, Metric, PipelineConfig, Seeds};
use crate::error::{CliError, Result};

pub const THREADS_ENV: &str = "FLOWBUNDLE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "flowbundle", version, about = "Topological analysis of optical-flow patch spaces")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sets every seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset file to analyse instead of the stage default.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub metric: Option<Metric>,
    #[arg(long, global = true)]
    pub prime_p: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate input .flo files and list them as frames.
    Ingest(InputArgs),
    /// Sample 3×3 patches from the input frames.
    Sample(SampleArgs),
    /// Keep high-contrast patches, normalise and downsample.
    Preprocess(PreprocessArgs),
    /// k-nearest-neighbour densities and core subsets.
    Density(DensityArgs),
    /// Rips persistence of a (landmarked) dataset.
    Persistence(PersistenceArgs),
    /// Discrete circle bundle over the direction circle.
    Bundle(BundleArgs),
    /// Fiberwise clustering and the cluster graph.
    Clusters(ClusterArgs),
    /// Sample one of the model spaces.
    Synthetic(SyntheticArgs),
    /// Summarise every stage found in the output directory.
    Report,
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// .flo files or directories.
    #[arg(long, num_args = 1..)]
    pub inputs: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub per_frame: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub contrast_percent: Option<f64>,
    #[arg(long)]
    pub downsample_n: Option<usize>,
    /// Comma-separated contrast tiers in percent.
    #[arg(long, value_delimiter = ',')]
    pub tiers: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DensityArgs {
    /// Comma-separated K:Q pairs, e.g. 1500:50,50:60.
    #[arg(long, value_delimiter = ',')]
    pub core_subsets: Option<Vec<CoreSubset>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PersistenceArgs {
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long)]
    pub max_dim: Option<usize>,
    #[arg(long)]
    pub landmarks: Option<usize>,
    #[arg(long)]
    pub max_scale: Option<f64>,
    #[arg(long)]
    pub projection_theta: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CoverArgs {
    #[arg(long)]
    pub n_sets: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BundleArgs {
    #[arg(long)]
    pub subset: Option<usize>,
    #[command(flatten)]
    pub cover: CoverArgs,
    #[arg(long, value_enum)]
    pub base: Option<BaseChoice>,
    #[arg(long)]
    pub landmarks: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub subset: Option<usize>,
    #[command(flatten)]
    pub cover: CoverArgs,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
    #[arg(long)]
    pub weight_cut: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SyntheticArgs {
    /// torus, extended, limitCircle, quadratic, stepEdgeCircles or kleinControl.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Comma-separated minority-mask ids for stepEdgeCircles.
    #[arg(long, value_delimiter = ',')]
    pub edges: Option<Vec<usize>>,
}

fn set<T>(slot: &mut T, v: &Option<T>)
where
    T: Clone,
{
    if let Some(v) = v {
        *slot = v.clone();
    }
}

impl CoverArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set(&mut c.cover.n_sets, &self.n_sets);
        set(&mut c.cover.overlap, &self.overlap);
    }
}

impl Cli {
    /// The effective configuration: defaults, then the file, then flags.
    pub fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.common.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let g = &self.common;
        if let Some(s) = g.seed {
            c.seeds = Seeds::all(s);
        }
        set(&mut c.out_dir, &g.out);
        if g.dataset.is_some() {
            c.dataset = g.dataset.clone();
        }
        set(&mut c.metric, &g.metric);
        set(&mut c.prime_p, &g.prime_p);
        match &self.command {
            Command::Ingest(a) => set(&mut c.inputs, &a.inputs),
            Command::Sample(a) => {
                set(&mut c.inputs, &a.input.inputs);
                set(&mut c.per_frame, &a.per_frame);
            }
            Command::Preprocess(a) => {
                set(&mut c.contrast_percent, &a.contrast_percent);
                set(&mut c.downsample_n, &a.downsample_n);
                set(&mut c.tiers, &a.tiers);
            }
            Command::Density(a) => set(&mut c.core_subsets, &a.core_subsets),
            Command::Persistence(a) => {
                let p = &mut c.persistence;
                set(&mut p.subset, &a.subset);
                set(&mut p.max_dim, &a.max_dim);
                set(&mut p.landmarks, &a.landmarks);
                if a.max_scale.is_some() {
                    p.max_scale = a.max_scale;
                }
                set(&mut p.projection_theta, &a.projection_theta);
            }
            Command::Bundle(a) => {
                a.cover.apply(&mut c);
                set(&mut c.bundle.subset, &a.subset);
                set(&mut c.bundle.base, &a.base);
                if a.landmarks.is_some() {
                    c.bundle.landmarks = a.landmarks;
                }
            }
            Command::Clusters(a) => {
                a.cover.apply(&mut c);
                set(&mut c.clusters.subset, &a.subset);
                set(&mut c.dbscan.eps, &a.eps);
                set(&mut c.dbscan.min_pts, &a.min_pts);
                set(&mut c.weight_cut, &a.weight_cut);
            }
            Command::Synthetic(a) => {
                set(&mut c.synthetic.model, &a.model);
                set(&mut c.synthetic.n, &a.n);
                set(&mut c.synthetic.sigma, &a.sigma);
                set(&mut c.synthetic.edges, &a.edges);
            }
            Command::Report => {}
        }
        c.validate()?;
        Ok(c)
    }
}

/// Caps the global worker pool at `FLOWBUNDLE_THREADS` when it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
    // A pool built earlier in the same process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> Result<Manifest> {
    configure_threads()?;
    let cfg = cli.config()?;
    match &cli.command {
        Command::Ingest(_) => commands::ingest(&cfg),
        Command::Sample(_) => commands::sample(&cfg),
        Command::Preprocess(_) => commands::preprocess(&cfg),
        Command::Density(_) => commands::density(&cfg),
        Command::Persistence(_) => commands::persistence(&cfg),
        Command::Bundle(_) => commands::bundle(&cfg),
        Command::Clusters(_) => commands::clusters(&cfg),
        Command::Synthetic(_) => commands::synthetic(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("flowbundle").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"dbscan": {"eps": 0.2, "minPts": 7}, "seeds": {"sample": 4}}"#).unwrap();
        let p = path.to_str().unwrap();
        let c = parse(&["clusters", "--config", p, "--eps", "0.25"]).config().unwrap();
        assert_eq!((c.dbscan.eps, c.dbscan.min_pts), (0.25, 7));
        assert_eq!(c.seeds.sample, 4);
        let c = parse(&["--seed", "9", "synthetic", "--model", "torus", "--n", "10", "--config", p]).config().unwrap();
        assert_eq!(c.seeds, Seeds::all(9));
        assert_eq!((c.synthetic.model.as_str(), c.synthetic.n), ("torus", 10));
    }

    #[test]
    fn list_flags_parse() {
        let c = parse(&["density", "--core-subsets", "100:10,20:30.5"]).config().unwrap();
        assert_eq!(c.core_subsets, vec![CoreSubset { k: 100, q: 10.0 }, CoreSubset { k: 20, q: 30.5 }]);
        let c = parse(&["preprocess", "--tiers", "10,2"]).config().unwrap();
        assert_eq!(c.tiers, vec![10.0, 2.0]);
        let c = parse(&["bundle", "--base", "klein-angle", "--n-sets", "8"]).config().unwrap();
        assert_eq!((c.bundle.base, c.cover.n_sets), (BaseChoice::KleinAngle, 8));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let e = parse(&["clusters", "--overlap", "0.9"]).config().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = parse(&["synthetic", "--model", "mobius"]).config().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = parse(&["report", "--config", "/nonexistent/config.json"]).config().unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
