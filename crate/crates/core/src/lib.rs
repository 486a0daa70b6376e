//! Latest-object-memory video instance tracking.
//!
//! The crate tracks object queries across frames with a per-slot memory,
//! occupancy-guided assignment and adaptive anchors. A synthetic simulator
//! stands in for the segmentation network, and the [`harness`] module runs
//! sequences, scores identities and compares memory and anchor variants.
//!
//! ```
//! use lomm::simulator::{generate_scenario, presets};
//! use lomm::harness::{evaluate_tracks, run_sequence};
//! use lomm::tracker::TrackerConfig;
//!
//! let scenario = generate_scenario(&presets::static_scene(7)).unwrap();
//! let frames = scenario.render_all().unwrap();
//! let result = run_sequence(&frames, &TrackerConfig::default()).unwrap();
//! let metrics = evaluate_tracks(&result, &scenario).unwrap();
//! assert_eq!(metrics.id_switches, 0);
//! ```

pub mod association;
pub mod error;
pub mod harness;
pub mod memory;
pub mod objectives;
pub mod primitives;
pub mod simulator;
pub mod tracker;

pub use error::{Error, Result};
pub use memory::{MemoryKind, MemoryState};
pub use primitives::{ClassLabel, ClassProbMatrix, FeatureMatrix, MaskSet};
pub use tracker::{AnchorKind, FrameObservation, ReadoutMode, TrackerConfig};

/// Engine identifier written into every result file.
pub const ENGINE_VERSION: &str = concat!("lomm ", env!("CARGO_PKG_VERSION"));
