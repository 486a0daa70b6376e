use serde::{Deserialize, Serialize};

use crate::association::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::primitives::cosine_unchecked;
use crate::simulator::Scenario;
use crate::tracker::FrameObservation;

use super::runner::TrackResult;

/// How ground-truth objects are located among a frame's detections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correspondence {
    /// Detection mask identical to the object's mask.
    ExactMask,
    /// Best one-to-one IoU at or above the threshold.
    Iou(f64),
    /// Closest detection embedding to the object's latent.
    Embedding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub object: usize,
    pub frames_present: usize,
    pub frames_detected: usize,
    pub id_switches: usize,
    pub majority_slot: Option<usize>,
    pub accuracy: f64,
    /// Slot per frame, `None` where the object was absent or not found.
    pub slots: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub id_switches: usize,
    /// Fraction of present (object, frame) pairs held by the object's majority slot.
    pub association_accuracy: f64,
    pub pairs: usize,
    pub per_object: Vec<ObjectMetrics>,
}

fn iou(a: &[f64], b: &[f64]) -> f64 {
    let (mut inter, mut union) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        inter += x.min(y);
        union += x.max(y);
    }
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn one_to_one(present: &[usize], n: usize, cost: impl Fn(usize, usize) -> f64) -> Result<Vec<(usize, usize, f64)>> {
    if present.is_empty() {
        return Ok(Vec::new());
    }
    let mut data = Vec::with_capacity(present.len() * n);
    for &o in present {
        for j in 0..n {
            data.push(cost(o, j));
        }
    }
    let cm = CostMatrix::new(present.len(), n, data)?;
    let a = solve_assignment(&cm)?;
    Ok(a.pairs.iter().map(|&(r, c)| (present[r], c, cm.get(r, c))).collect())
}

/// Detection index of each object in frame `frame.t`, `None` where absent or unmatched.
pub fn match_detections(scenario: &Scenario, frame: &FrameObservation, mode: Correspondence) -> Result<Vec<Option<usize>>> {
    let t = frame.t;
    let objects = &scenario.gt.objects;
    let n = frame.slots();
    let present: Vec<usize> = (0..objects.len()).filter(|&o| objects[o].presence[t - 1]).collect();
    let mut found = vec![None; objects.len()];
    let mode = if frame.masks.is_none() { Correspondence::Embedding } else { mode };
    match mode {
        Correspondence::ExactMask => {
            let masks = frame.masks.as_ref().expect("checked above");
            if masks.cells() != scenario.gt.height * scenario.gt.width {
                return Err(Error::dim("detection masks differ from the ground-truth grid"));
            }
            let mut claimed = vec![false; n];
            for &o in &present {
                let target = objects[o].mask_at(t);
                if let Some(j) = (0..n).find(|&j| !claimed[j] && masks.mask(j) == target) {
                    claimed[j] = true;
                    found[o] = Some(j);
                }
            }
        }
        Correspondence::Iou(threshold) => {
            let masks = frame.masks.as_ref().expect("checked above");
            if masks.cells() != scenario.gt.height * scenario.gt.width {
                return Err(Error::dim("detection masks differ from the ground-truth grid"));
            }
            for (o, j, c) in one_to_one(&present, n, |o, j| 1.0 - iou(objects[o].mask_at(t), masks.mask(j)))? {
                if 1.0 - c >= threshold {
                    found[o] = Some(j);
                }
            }
        }
        Correspondence::Embedding => {
            if frame.queries.cols() != scenario.config.channels {
                return Err(Error::dim("detection embeddings differ from the scenario channels"));
            }
            for (o, j, _) in one_to_one(&present, n, |o, j| 1.0 - cosine_unchecked(&scenario.latents[o], frame.queries.row(j)))? {
                found[o] = Some(j);
            }
        }
    }
    Ok(found)
}

/// Scores a simulator run, re-rendering frames and matching by exact mask.
pub fn evaluate_tracks(result: &TrackResult, scenario: &Scenario) -> Result<Metrics> {
    evaluate_tracks_with(result, scenario, &scenario.render_all()?, Correspondence::ExactMask)
}

/// Scores `result` against the scenario's ground truth using the given frames
/// to locate each object.
pub fn evaluate_tracks_with(
    result: &TrackResult,
    scenario: &Scenario,
    frames: &[FrameObservation],
    mode: Correspondence,
) -> Result<Metrics> {
    let total = scenario.gt.frames;
    if result.frames.len() != total || frames.len() != total {
        return Err(Error::invalid(format!(
            "result has {} frames and input {}, scenario has {total}",
            result.frames.len(),
            frames.len()
        )));
    }
    let n_obj = scenario.gt.objects.len();
    let mut slots = vec![vec![None; total]; n_obj];
    for (i, (rec, frame)) in result.frames.iter().zip(frames).enumerate() {
        if rec.t != i + 1 || frame.t != i + 1 {
            return Err(Error::Sequencing(format!("frame {} out of order", i + 1)));
        }
        if rec.perm.len() != frame.slots() {
            return Err(Error::dim(format!("frame {}: result and input slot counts differ", i + 1)));
        }
        let inv = rec.slot_of_detection();
        for (o, det) in match_detections(scenario, frame, mode)?.into_iter().enumerate() {
            slots[o][i] = det.map(|j| inv[j]);
        }
    }

    let mut per_object = Vec::with_capacity(n_obj);
    let (mut switches, mut hits, mut pairs) = (0, 0, 0);
    for (o, slot_seq) in slots.into_iter().enumerate() {
        let present = scenario.gt.objects[o].presence.iter().filter(|&&p| p).count();
        let detected: Vec<usize> = slot_seq.iter().flatten().copied().collect();
        let id_switches = detected.windows(2).filter(|w| w[0] != w[1]).count();
        let mut counts = std::collections::BTreeMap::new();
        for &s in &detected {
            *counts.entry(s).or_insert(0usize) += 1;
        }
        // highest count, lowest slot on ties
        let majority = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&s, &c)| (s, c));
        let held = majority.map_or(0, |m| m.1);
        switches += id_switches;
        hits += held;
        pairs += present;
        per_object.push(ObjectMetrics {
            object: o,
            frames_present: present,
            frames_detected: detected.len(),
            id_switches,
            majority_slot: majority.map(|m| m.0),
            accuracy: if present == 0 { 1.0 } else { held as f64 / present as f64 },
            slots: slot_seq,
        });
    }
    Ok(Metrics {
        id_switches: switches,
        association_accuracy: if pairs == 0 { 1.0 } else { hits as f64 / pairs as f64 },
        pairs,
        per_object,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run_sequence;
    use crate::simulator::{generate_scenario, presets};
    use crate::tracker::TrackerConfig;

    #[test]
    fn iou_values() {
        assert_eq!(iou(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]), 0.5);
        assert_eq!(iou(&[0.0; 3], &[0.0; 3]), 0.0);
    }

    #[test]
    fn static_scene_is_perfect() {
        let s = generate_scenario(&presets::static_scene(5)).unwrap();
        let r = run_sequence(&s.render_all().unwrap(), &TrackerConfig::default()).unwrap();
        let m = evaluate_tracks(&r, &s).unwrap();
        assert_eq!((m.id_switches, m.association_accuracy), (0, 1.0));
        assert_eq!(m.pairs, 3 * 8);
    }

    #[test]
    fn correspondence_modes_agree_on_clean_frames() {
        let s = generate_scenario(&presets::reappearance(3, 5, 0.02, 0.5)).unwrap();
        for t in [1, 5, 10] {
            let f = s.render_frame(t).unwrap();
            let exact = match_detections(&s, &f, Correspondence::ExactMask).unwrap();
            assert_eq!(exact, match_detections(&s, &f, Correspondence::Iou(0.5)).unwrap());
            assert_eq!(exact, match_detections(&s, &f, Correspondence::Embedding).unwrap());
        }
    }

    #[test]
    fn swapped_slots_count_two_switches() {
        let s = generate_scenario(&presets::static_scene(5)).unwrap();
        let frames = s.render_all().unwrap();
        let mut r = run_sequence(&frames, &TrackerConfig::default()).unwrap();
        let a = match_detections(&s, &frames[0], Correspondence::ExactMask).unwrap();
        let (sa, sb) = (r.frames[0].slot_of_detection()[a[0].unwrap()], r.frames[0].slot_of_detection()[a[1].unwrap()]);
        for rec in r.frames.iter_mut().skip(4) {
            rec.perm.swap(sa, sb);
        }
        let m = evaluate_tracks(&r, &s).unwrap();
        assert_eq!(m.id_switches, 2);
        assert_eq!(m.per_object[2].id_switches, 0);
    }

    #[test]
    fn frame_count_mismatch() {
        let s = generate_scenario(&presets::static_scene(5)).unwrap();
        let frames = s.render_all().unwrap();
        let r = run_sequence(&frames[..3], &TrackerConfig::default()).unwrap();
        assert!(evaluate_tracks(&r, &s).is_err());
    }
}
