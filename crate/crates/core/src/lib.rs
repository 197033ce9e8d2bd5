//! Global point cloud registration robust to degenerate correspondence sets.
//!
//! The pipeline downsamples both clouds, matches FPFH descriptors, prunes the
//! matches to a length-consistent clique, estimates rotation with graduated
//! non-convexity on translation-invariant measurements and finally solves the
//! translation one axis at a time. The default rotation model is yaw-only,
//! which needs a single inlier correspondence instead of three.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cote;
pub mod error;
pub mod features;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod pruning;
pub mod rotation;
mod spatial;

pub use error::{Error, Result, Stage};
pub use features::{Correspondence, CorrespondenceSet, FpfhDescriptor};
pub use geometry::{Point3, PointCloud, RigidTransform, RotationMode};
pub use pipeline::{PipelineConfig, RegistrationResult, Solver};
pub use pruning::{CompatGraph, TimSet};
pub use rotation::{GncConfig, RotationEstimate};
