//! Dynamic rides networks built from taxi trip records.
//!
//! The pipeline runs in stages that mirror the module layout:
//!
//! - [`ingest`] parses and cleans raw trip rows into [`ingest::TripRecord`]s.
//! - [`grid`] partitions the city bounding box into square tiles.
//! - [`dynnet`] aggregates trips into directed O-D networks per time window.
//! - [`metrics`] extracts the per-snapshot topological features.
//! - [`sharing`] computes routing-agnostic ride-sharing utilization.
//! - [`model`] fits linear regressions of utilization on the features.
//! - [`synth`] generates seeded synthetic trip stores with planted ground truth.
//! - [`pipeline`] glues the stages together for the command-line tool.

pub mod dynnet;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sharing;
pub mod synth;

pub use error::{Error, Result};

/// Seconds since the Unix epoch. Trip timestamps carry no time zone; local
/// wall-clock times are stored as if they were UTC.
pub type Timestamp = i64;
