//! Character facial-consistency measurement for video.
//!
//! The pipeline decodes each video into frames, caps their resolution, keeps
//! the primary face of every frame (frames without a face are skipped),
//! embeds the aligned crops with one or more recognition models and scores
//! each video under two comparison modes:
//!
//! * **Mode 1** compares every valid frame against a representative frame.
//! * **Mode 2** compares a seeded sample of random frame pairs.
//!
//! Per-video means are averaged per source and rendered as a
//! source × model table where the best generated source in each column is
//! highlighted.
//!
//! Module map:
//!
//! | module        | role                                                   |
//! |---------------|--------------------------------------------------------|
//! | [`manifest`]  | run configuration file                                 |
//! | [`frameio`]   | frame decoding and resolution capping                  |
//! | [`facegate`]  | primary-face detection, alignment and cropping         |
//! | [`embed`]     | model registry, embedding backends, on-disk cache      |
//! | [`consistency`] | distance metrics, Mode 1/2 scoring, aggregation      |
//! | [`report`]    | benchmark tables, CSV/JSON exports, plot data          |
//! | [`pipeline`]  | extract / score / report stages used by the CLI        |

pub mod consistency;
pub mod embed;
pub mod facegate;
pub mod frameio;
pub mod manifest;
#[cfg(feature = "onnx")]
mod onnx_graph;
pub mod parallel;
pub mod pipeline;
pub mod raster;
pub mod report;

pub use consistency::{ConsistencyScore, MetricKind, ScoreMode, SourceAggregate, VideoScore};
pub use embed::{Embedding, EmbeddingSet, ModelRegistry, ModelSpec};
pub use facegate::{DetectorKind, FaceObservation};
pub use frameio::FrameRecord;
pub use manifest::{Manifest, ReferenceChoice, SourceGroup, SourceKind};
pub use parallel::Executor;
pub use report::BenchmarkReport;

/// Toolkit version recorded in every export.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
