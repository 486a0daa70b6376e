//! Sequence runner, identity metrics, feature-stream I/O and comparison reports.

mod ingest;
mod losses;
mod metrics;
mod report;
mod runner;

pub use ingest::{load_feature_stream, parse_feature_stream, write_feature_stream};
pub use losses::{evaluate_losses, LossReport};
pub use metrics::{evaluate_tracks, evaluate_tracks_with, match_detections, Correspondence, Metrics, ObjectMetrics};
pub use report::{compare_memory_report, ComparisonReport, ConfigurationReport, OrderingCheck, ScenarioRun};
pub use runner::{run_sequence, FrameRecord, TrackResult};
