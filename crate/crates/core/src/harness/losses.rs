use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{match_ground_truth, sim_loss, total_loss, track_loss, LossRecord, LossWeights};
use crate::simulator::Scenario;
use crate::tracker::{FrameObservation, SlotPredictions};
use crate::ENGINE_VERSION;

use super::runner::TrackResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub engine: String,
    pub weights: LossWeights,
    pub early: bool,
    /// Slot matched to each ground-truth object.
    pub assignment: Vec<usize>,
    pub losses: Vec<LossRecord>,
}

impl LossReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.losses.iter().find(|l| l.name == name).map(|l| l.value)
    }
}

/// Evaluates the tracking objectives of a finished run against ground truth.
///
/// `early` matches ground truth against raw-chain predictions instead of the
/// final slot predictions.
pub fn evaluate_losses(
    result: &TrackResult,
    scenario: &Scenario,
    frames: &[FrameObservation],
    weights: &LossWeights,
    early: bool,
) -> Result<LossReport> {
    weights.validate()?;
    scenario.gt.validate()?;
    if result.frames.len() != frames.len() || frames.len() != scenario.gt.frames {
        return Err(Error::invalid("result, frames and ground truth cover different lengths"));
    }
    let dot: Vec<SlotPredictions> = result
        .frames
        .iter()
        .zip(frames)
        .map(|(r, f)| SlotPredictions::from_perm(f, &r.perm))
        .collect();
    let hat: Vec<SlotPredictions> = result
        .frames
        .iter()
        .zip(frames)
        .map(|(r, f)| SlotPredictions::from_weights(f, &r.existing_weights))
        .collect();
    let assignment = if early {
        let chain: Vec<SlotPredictions> = result
            .frames
            .iter()
            .zip(frames)
            .map(|(r, f)| SlotPredictions::from_perm(f, &r.chain_perm))
            .collect();
        match_ground_truth(&dot, &chain, &scenario.gt, weights, true)?
    } else {
        match_ground_truth(&dot, &hat, &scenario.gt, weights, false)?
    };

    let track = track_loss(&hat, &dot, &scenario.gt, &assignment, weights)?;
    let sim = if frames.len() < 2 {
        LossRecord {
            name: "sim".into(),
            value: 0.0,
            term_count: 0,
        }
    } else {
        let aligned: Vec<_> = result.frames.iter().zip(frames).map(|(r, f)| f.queries.select_rows(&r.perm)).collect();
        let memory: Vec<_> = result.frames.iter().map(|r| r.memory.clone()).collect();
        let occupancy: Vec<_> = result.frames.iter().map(|r| r.frame_occupancy.clone()).collect();
        sim_loss(&aligned, &memory, &occupancy, &assignment)?
    };
    let total = LossRecord {
        name: "total".into(),
        value: total_loss(track.value, sim.value, weights),
        term_count: track.term_count + sim.term_count,
    };
    Ok(LossReport {
        engine: ENGINE_VERSION.to_string(),
        weights: *weights,
        early,
        assignment,
        losses: vec![track, sim, total],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run_sequence;
    use crate::simulator::{generate_scenario, presets};
    use crate::tracker::TrackerConfig;

    #[test]
    fn losses_are_finite_and_consistent() {
        let s = generate_scenario(&presets::new_object(8, 0.02)).unwrap();
        let frames = s.render_all().unwrap();
        let r = run_sequence(&frames, &TrackerConfig::default()).unwrap();
        let w = LossWeights::default();
        for early in [false, true] {
            let rep = evaluate_losses(&r, &s, &frames, &w, early).unwrap();
            let (track, sim, total) = (rep.get("track").unwrap(), rep.get("sim").unwrap(), rep.get("total").unwrap());
            assert!(track.is_finite() && sim.is_finite());
            assert!((total - (track + w.sim * sim)).abs() < 1e-12);
            assert_eq!(rep.losses[0].term_count, 2 * 3 * frames.len());
        }
    }
}
