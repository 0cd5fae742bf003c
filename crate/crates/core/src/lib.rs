//! Topological models for spaces of 3×3 optical-flow patches.
//!
//! The crate is organised around the pipeline stages:
//!
//! * [`patch`]: the 18-dimensional patch space, the contrast form `D`, the
//!   DCT bases and per-patch features (predominant direction, directionality).
//! * [`flow_io`]: Middlebury `.flo` ingestion, window sampling, contrast
//!   filtering and the dataset file formats.
//! * [`models`]: closed-form generators for the flow torus, the extended
//!   3-manifold, the limit circle, quadratic patches and binary step edges.
//! * [`density`]: exact k-nearest-neighbour densities and dense core subsets.
//! * [`persistence`]: Vietoris–Rips persistent cohomology with cocycles.
//! * [`circular`]: sparse circular coordinates from a cohomology class.
//! * [`bundle`]: discrete approximate circle bundles over a circle base.
//! * [`cluster_graph`]: per-fiber DBSCAN and the local-cluster graph.

pub mod bundle;
pub mod circular;
pub mod cluster_graph;
pub mod density;
pub mod flow_io;
pub mod models;
pub mod patch;
pub mod persistence;
pub mod points;
pub mod stats;

pub use points::Points;
