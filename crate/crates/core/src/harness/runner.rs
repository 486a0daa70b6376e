use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryState;
use crate::primitives::{ClassLabel, FeatureMatrix};
use crate::tracker::{pipeline_step, FrameObservation, TrackerConfig};
use crate::ENGINE_VERSION;

/// What the tracker decided on one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: usize,
    /// Slot `n` holds detection `perm[n]`.
    pub perm: Vec<usize>,
    pub classes: Vec<ClassLabel>,
    pub foreground: Vec<f64>,
    pub frame_occupancy: Vec<bool>,
    pub cumulative_occupancy: Vec<bool>,
    /// Memory after this frame.
    pub memory: FeatureMatrix,
    /// Readout weights of each slot's existing-object query over detections.
    pub existing_weights: Vec<Vec<f64>>,
    pub chain_perm: Vec<usize>,
}

impl FrameRecord {
    /// Slot holding each detection.
    pub fn slot_of_detection(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (slot, &det) in self.perm.iter().enumerate() {
            inv[det] = slot;
        }
        inv
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub engine: String,
    pub config: TrackerConfig,
    pub frames: Vec<FrameRecord>,
    pub final_state: MemoryState,
}

impl TrackResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("track result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Runs the pipeline over a whole video from a fresh state.
pub fn run_sequence(frames: &[FrameObservation], config: &TrackerConfig) -> Result<TrackResult> {
    config.validate()?;
    let first = frames.first().ok_or_else(|| Error::invalid("empty frame sequence"))?;
    let mut state = MemoryState::fresh(first.slots(), first.queries.cols());
    let mut records = Vec::with_capacity(frames.len());
    for frame in frames {
        let (next, out) = pipeline_step(&state, frame, config)?;
        records.push(FrameRecord {
            t: frame.t,
            perm: out.perm,
            classes: out.classes,
            foreground: out.foreground,
            frame_occupancy: next.frame_occupancy.clone(),
            cumulative_occupancy: next.cumulative_occupancy.clone(),
            memory: next.memory.clone(),
            existing_weights: out.existing_weights,
            chain_perm: out.chain_perm,
        });
        state = next;
    }
    Ok(TrackResult {
        engine: ENGINE_VERSION.to_string(),
        config: config.clone(),
        frames: records,
        final_state: state,
    })
}
