//! The per-frame tracking pipeline.
//!
//! Each frame runs: existing-object readout from memory, occupancy-guided
//! matching, anchor construction, all-object readout, then the memory and
//! occupancy updates. The two learned trackers are replaced by deterministic
//! cosine attention readouts over the current detections.

use serde::{Deserialize, Serialize};

use crate::association::{
    adaptive_anchor_with, build_cost_matrix, ohm_align_with_reference, solve_assignment, TieBreak,
};
use crate::error::{Error, Result};
use crate::memory::{
    update_lom, update_momentum_memory, update_occupancy, update_similarity_memory, MemoryKind, MemoryState,
    DEFAULT_MOMENTUM,
};
use crate::primitives::{
    cosine_unchecked, foreground_unchecked, ClassLabel, ClassProbMatrix, FeatureMatrix, MaskSet,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    /// Copy the most similar candidate.
    Hard,
    /// Softmax-weighted mix of candidates at temperature τ.
    Soft,
}

/// Which query anchors the all-object readout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    Adaptive,
    CurrentOnly,
    MemoryOnly,
    EarlyChain,
}

impl AnchorKind {
    pub fn name(self) -> &'static str {
        match self {
            AnchorKind::Adaptive => "adaptive",
            AnchorKind::CurrentOnly => "current",
            AnchorKind::MemoryOnly => "memory",
            AnchorKind::EarlyChain => "early",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub mode: ReadoutMode,
    pub temperature: f64,
    pub memory_kind: MemoryKind,
    pub anchor_kind: AnchorKind,
    pub momentum_alpha: f64,
    /// Clamp the adaptive blend weight to [0, 1].
    pub adp_clamp: bool,
    /// Slots never occupied before this frame have no object in memory; their
    /// anchor is the aligned detection alone.
    pub gate_new_slots: bool,
    /// Break exact matching ties by memory similarity.
    pub memory_tiebreak: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            mode: ReadoutMode::Hard,
            temperature: 0.1,
            memory_kind: MemoryKind::Lom,
            anchor_kind: AnchorKind::Adaptive,
            momentum_alpha: DEFAULT_MOMENTUM,
            adp_clamp: true,
            gate_new_slots: true,
            memory_tiebreak: true,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.momentum_alpha) {
            return Err(Error::invalid(format!("momentum {} outside [0,1]", self.momentum_alpha)));
        }
        Ok(())
    }
}

/// One frame of segmentation output, detections in arbitrary order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub t: usize,
    pub queries: FeatureMatrix,
    pub class_probs: ClassProbMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<MaskSet>,
}

impl FrameObservation {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::invalid("frame index must be >= 1"));
        }
        let n = self.queries.rows();
        if self.class_probs.rows() != n {
            return Err(Error::dim(format!(
                "frame {}: {} class rows for {n} queries",
                self.t,
                self.class_probs.rows()
            )));
        }
        if let Some(m) = &self.masks {
            if m.count() != n {
                return Err(Error::dim(format!("frame {}: {} masks for {n} queries", self.t, m.count())));
            }
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        self.queries.rows()
    }
}

/// Per-slot class and mask predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotPredictions {
    pub probs: ClassProbMatrix,
    pub masks: Option<MaskSet>,
}

impl SlotPredictions {
    /// Predictions decoded from attention weights over a frame's detections.
    pub fn from_weights(frame: &FrameObservation, weights: &[Vec<f64>]) -> Self {
        Self {
            probs: frame.class_probs.mix(weights),
            masks: frame.masks.as_ref().map(|m| m.mix(weights)),
        }
    }

    /// Predictions taken from detections `perm[n]`.
    pub fn from_perm(frame: &FrameObservation, perm: &[usize]) -> Self {
        Self {
            probs: frame.class_probs.select_rows(perm),
            masks: frame.masks.as_ref().map(|m| m.select(perm)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    /// Final per-slot features.
    pub q_dot: FeatureMatrix,
    pub aligned_probs: ClassProbMatrix,
    pub aligned_masks: Option<MaskSet>,
    /// Slot `n` holds detection `perm[n]`.
    pub perm: Vec<usize>,
    pub classes: Vec<ClassLabel>,
    /// Foreground probability per slot, used as the memory update weight.
    pub foreground: Vec<f64>,
    /// Existing-object readout and its attention weights over detections.
    pub existing: FeatureMatrix,
    pub existing_weights: Vec<Vec<f64>>,
    /// Matched detections, row `n` = detection `perm[n]`.
    pub aligned: FeatureMatrix,
    pub anchor: FeatureMatrix,
    /// Frame-to-frame raw alignment and its permutation.
    pub chain: FeatureMatrix,
    pub chain_perm: Vec<usize>,
}

impl FrameOutput {
    pub fn dot_predictions(&self) -> SlotPredictions {
        SlotPredictions {
            probs: self.aligned_probs.clone(),
            masks: self.aligned_masks.clone(),
        }
    }
}

fn readout_weights(anchors: &FeatureMatrix, candidates: &FeatureMatrix, config: &TrackerConfig) -> Vec<Vec<f64>> {
    let m = candidates.rows();
    anchors
        .iter_rows()
        .map(|a| {
            let sims: Vec<f64> = candidates.iter_rows().map(|c| cosine_unchecked(a, c)).collect();
            match config.mode {
                ReadoutMode::Hard => {
                    let mut best = 0;
                    for j in 1..m {
                        if sims[j] > sims[best] {
                            best = j;
                        }
                    }
                    let mut w = vec![0.0; m];
                    w[best] = 1.0;
                    w
                }
                ReadoutMode::Soft => {
                    let top = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = sims.iter().map(|s| ((s - top) / config.temperature).exp()).collect();
                    let z: f64 = e.iter().sum();
                    e.into_iter().map(|x| x / z).collect()
                }
            }
        })
        .collect()
}

fn apply_weights(candidates: &FeatureMatrix, weights: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_fn(weights.len(), candidates.cols(), |n, out| {
        let w = &weights[n];
        if let Some(j) = one_hot(w) {
            out.copy_from_slice(candidates.row(j));
            return;
        }
        for (j, &wj) in w.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(candidates.row(j)) {
                *o += wj * c;
            }
        }
    })
}

fn one_hot(w: &[f64]) -> Option<usize> {
    let j = w.iter().position(|&x| x == 1.0)?;
    w.iter().enumerate().all(|(i, &x)| i == j || x == 0.0).then_some(j)
}

/// Attention of `anchors` over `candidates`, returning features and weights.
pub fn attention_readout_weighted(
    anchors: &FeatureMatrix,
    candidates: &FeatureMatrix,
    config: &TrackerConfig,
) -> Result<(FeatureMatrix, Vec<Vec<f64>>)> {
    anchors.same_shape(candidates, "attention readout")?;
    let weights = readout_weights(anchors, candidates, config);
    Ok((apply_weights(candidates, &weights), weights))
}

/// Hard mode copies the candidate with the highest cosine to each anchor
/// (lowest index on ties); soft mode mixes candidates by `softmax(cos / τ)`.
pub fn attention_readout(anchors: &FeatureMatrix, candidates: &FeatureMatrix, config: &TrackerConfig) -> Result<FeatureMatrix> {
    attention_readout_weighted(anchors, candidates, config).map(|(f, _)| f)
}

/// Existing-object features read out from the previous memory.
pub fn track_existing(memory: &FeatureMatrix, detections: &FeatureMatrix, config: &TrackerConfig) -> Result<FeatureMatrix> {
    attention_readout(memory, detections, config)
}

/// Final features read out with the constructed anchor.
pub fn align_all(anchor: &FeatureMatrix, detections: &FeatureMatrix, config: &TrackerConfig) -> Result<FeatureMatrix> {
    attention_readout(anchor, detections, config)
}

/// Reorders `detections` to follow `previous` by minimum-cost assignment.
/// Returns the reordered rows and the source index of each.
pub fn raw_chain_match(previous: &FeatureMatrix, detections: &FeatureMatrix) -> Result<(FeatureMatrix, Vec<usize>)> {
    previous.same_shape(detections, "raw chain matching")?;
    let assignment = solve_assignment(&build_cost_matrix(previous, detections)?)?;
    let perm: Vec<usize> = assignment.pairs.iter().map(|p| p.1).collect();
    Ok((detections.select_rows(&perm), perm))
}

/// Occupied slots whose existing-object readouts are bitwise identical all
/// claim the same detection. The slot whose memory is closest keeps the claim;
/// the others get a zero query, which costs the same against every detection.
pub fn resolve_duplicates(existing: &FeatureMatrix, memory: &FeatureMatrix, occupancy: &[bool]) -> FeatureMatrix {
    let mut out = existing.clone();
    let occupied: Vec<usize> = (0..existing.rows()).filter(|&i| occupancy[i]).collect();
    let mut done = vec![false; existing.rows()];
    for (k, &i) in occupied.iter().enumerate() {
        if done[i] {
            continue;
        }
        let group: Vec<usize> = occupied[k..]
            .iter()
            .copied()
            .filter(|&j| existing.row(j) == existing.row(i))
            .collect();
        if group.len() < 2 {
            continue;
        }
        let claim = existing.row(i);
        let keep = group.iter().copied().fold(group[0], |best, j| {
            if cosine_unchecked(memory.row(j), claim) > cosine_unchecked(memory.row(best), claim) {
                j
            } else {
                best
            }
        });
        for &j in &group {
            done[j] = true;
            if j != keep {
                out.row_mut(j).fill(0.0);
            }
        }
    }
    out
}

/// Advances one video by one frame.
pub fn pipeline_step(
    state: &MemoryState,
    frame: &FrameObservation,
    config: &TrackerConfig,
) -> Result<(MemoryState, FrameOutput)> {
    config.validate()?;
    frame.validate()?;
    if frame.t != state.t + 1 {
        return Err(Error::Sequencing(format!(
            "expected frame {}, got frame {}",
            state.t + 1,
            frame.t
        )));
    }
    let detections = &frame.queries;
    let n = detections.rows();
    let first = state.t == 0;
    if !first {
        detections.same_shape(&state.memory, "frame vs memory")?;
    }

    let memory_prev = if first { detections.clone() } else { state.memory.clone() };
    let occupancy_prev = if first { vec![false; n] } else { state.cumulative_occupancy.clone() };

    let (existing, existing_weights) = attention_readout_weighted(&memory_prev, detections, config)?;

    let (aligned, perm) = if first {
        (detections.clone(), (0..n).collect::<Vec<_>>())
    } else {
        let weights: Vec<f64> = frame.class_probs.iter_rows().map(foreground_unchecked).collect();
        let tiebreak = config.memory_tiebreak.then_some(TieBreak {
            reference: &memory_prev,
            detection_weight: &weights,
        });
        let queries = if config.memory_tiebreak {
            resolve_duplicates(&existing, &memory_prev, &occupancy_prev)
        } else {
            existing.clone()
        };
        let ohm = ohm_align_with_reference(&queries, detections, &occupancy_prev, tiebreak)?;
        (ohm.aligned, ohm.perm)
    };

    let chain_prev = match (&state.chain, first) {
        (_, true) => detections.clone(),
        (Some(c), false) => c.clone(),
        (None, false) => memory_prev.clone(),
    };
    let (chain, chain_perm) = raw_chain_match(&chain_prev, detections)?;

    let gated = |anchor: FeatureMatrix, source: &FeatureMatrix| -> FeatureMatrix {
        if !config.gate_new_slots {
            return anchor;
        }
        let mut anchor = anchor;
        for (i, _) in occupancy_prev.iter().enumerate().filter(|(_, &o)| !o) {
            anchor.row_mut(i).copy_from_slice(source.row(i));
        }
        anchor
    };
    let anchor = match config.anchor_kind {
        AnchorKind::Adaptive => gated(adaptive_anchor_with(&aligned, &memory_prev, config.adp_clamp)?, &aligned),
        AnchorKind::EarlyChain => gated(adaptive_anchor_with(&chain, &memory_prev, config.adp_clamp)?, &chain),
        AnchorKind::CurrentOnly => aligned.clone(),
        AnchorKind::MemoryOnly => memory_prev.clone(),
    };

    let q_dot = align_all(&anchor, detections, config)?;

    let aligned_probs = frame.class_probs.select_rows(&perm);
    let aligned_masks = frame.masks.as_ref().map(|m| m.select(&perm));
    let classes = aligned_probs.labels();
    let foreground: Vec<f64> = aligned_probs.iter_rows().map(foreground_unchecked).collect();

    let memory = match config.memory_kind {
        MemoryKind::Lom => update_lom(&memory_prev, &q_dot, &foreground)?,
        MemoryKind::Similarity => update_similarity_memory(&memory_prev, &q_dot)?,
        MemoryKind::Momentum => update_momentum_memory(&memory_prev, &q_dot, config.momentum_alpha)?,
    };
    let (cumulative_occupancy, frame_occupancy) = update_occupancy(&occupancy_prev, &classes)?;

    let next = MemoryState {
        memory,
        cumulative_occupancy,
        frame_occupancy,
        t: frame.t,
        chain: Some(chain.clone()),
    };
    let output = FrameOutput {
        q_dot,
        aligned_probs,
        aligned_masks,
        perm,
        classes,
        foreground,
        existing,
        existing_weights,
        aligned,
        anchor,
        chain,
        chain_perm,
    };
    Ok((next, output))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn hard() -> TrackerConfig {
        TrackerConfig::default()
    }

    fn soft(tau: f64) -> TrackerConfig {
        TrackerConfig {
            mode: ReadoutMode::Soft,
            temperature: tau,
            ..TrackerConfig::default()
        }
    }

    fn frame(t: usize, queries: FeatureMatrix, probs: Vec<Vec<f64>>) -> FrameObservation {
        FrameObservation {
            t,
            queries,
            class_probs: ClassProbMatrix::from_rows(probs).unwrap(),
            masks: None,
        }
    }

    #[test]
    fn hard_readout_swaps_rows_back() {
        let out = attention_readout(&fm(&[&[1.0, 0.0], &[0.0, 1.0]]), &fm(&[&[0.0, 1.0], &[1.0, 0.0]]), &hard()).unwrap();
        assert_eq!(out, fm(&[&[1.0, 0.0], &[0.0, 1.0]]));
    }

    #[test]
    fn soft_readout_weight_matches_logistic() {
        let (out, w) = attention_readout_weighted(&fm(&[&[1.0, 0.0], &[1.0, 0.0]]), &fm(&[&[1.0, 0.0], &[0.0, 1.0]]), &soft(0.1)).unwrap();
        // e^10 / (e^10 + 1), frozen from a 40-digit evaluation
        assert!((w[0][0] - 0.999_954_602_131_297_6).abs() < 1e-15);
        assert!((out.row(0)[0] - 0.999_954_602_131_297_6).abs() < 1e-15);
        assert!((out.row(0)[1] - 4.539_786_870_243_439e-5).abs() < 1e-15);
    }

    #[test]
    fn soft_readout_approaches_hard_as_tau_shrinks() {
        let anchors = fm(&[&[1.0, 0.2], &[0.1, 1.0], &[-1.0, 0.4]]);
        let cands = fm(&[&[0.0, 1.0], &[1.0, 0.0], &[-0.8, 0.5]]);
        let h = attention_readout(&anchors, &cands, &hard()).unwrap();
        let s = attention_readout(&anchors, &cands, &soft(1e-3)).unwrap();
        for (a, b) in h.as_slice().iter().zip(s.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn track_existing_examples() {
        let mem = fm(&[&[0.6, 0.8], &[1.0, 0.0]]);
        let det = fm(&[&[0.0, 1.0], &[0.6, 0.8]]);
        assert_eq!(track_existing(&mem, &det, &hard()).unwrap().row(0), &[0.6, 0.8]);

        // all detections orthogonal to the memory slot: lowest index wins
        let mem = fm(&[&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0]]);
        let det = fm(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert_eq!(track_existing(&mem, &det, &hard()).unwrap().row(0), &[1.0, 0.0, 0.0]);

        // one dominant match, cos 0.99 against 0 elsewhere
        let c99 = (1.0f64 - 0.99 * 0.99).sqrt();
        let mem = fm(&[&[0.99, c99, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0]]);
        let det = fm(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, -1.0]]);
        let mem0_vs_det: Vec<f64> = det.iter_rows().map(|d| cosine_unchecked(mem.row(0), d)).collect();
        assert!((mem0_vs_det[0] - 0.99).abs() < 1e-12 && mem0_vs_det[1] == 0.0 && mem0_vs_det[2] == 0.0);
        let out = track_existing(&mem, &det, &soft(0.1)).unwrap();
        let dist: f64 = out.row(0).iter().zip(det.row(0)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 0.01, "distance {dist}");
    }

    #[test]
    fn align_all_examples() {
        let anchor = fm(&[&[0.6, 0.8], &[1.0, 0.0]]);
        let det = fm(&[&[1.0, 0.0], &[0.6, 0.8]]);
        assert_eq!(align_all(&anchor, &det, &hard()).unwrap(), fm(&[&[0.6, 0.8], &[1.0, 0.0]]));
        let orth = fm(&[&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0]]);
        let det3 = fm(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert_eq!(align_all(&orth, &det3, &hard()).unwrap().row(1), &[1.0, 0.0, 0.0]);
        let soft_out = align_all(&fm(&[&[1.0, 0.0], &[0.0, 1.0]]), &fm(&[&[1.0, 0.0], &[0.0, 1.0]]), &soft(0.1)).unwrap();
        assert!((soft_out.row(0)[0] - 0.999_954_602_131_297_6).abs() < 1e-12);
    }

    #[test]
    fn duplicate_claims_keep_the_closest_memory() {
        let existing = fm(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let memory = fm(&[&[0.0, 1.0], &[0.9, 0.1], &[0.6, 0.8], &[0.0, 1.0]]);
        let out = resolve_duplicates(&existing, &memory, &[true, true, false, true]);
        // slot 2 is unoccupied and left alone
        assert_eq!(out, fm(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]));
        assert_eq!(resolve_duplicates(&existing, &memory, &[false; 4]), existing);
    }

    #[test]
    fn raw_chain_examples() {
        let a = fm(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (out, perm) = raw_chain_match(&a, &a).unwrap();
        assert_eq!((out, perm), (a.clone(), vec![0, 1]));
        let swapped = fm(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let (out, perm) = raw_chain_match(&a, &swapped).unwrap();
        assert_eq!(out, a);
        assert_eq!(perm, vec![1, 0]);
    }

    #[test]
    fn rejects_bad_config_and_order() {
        let state = MemoryState::fresh(2, 2);
        let f = frame(2, fm(&[&[1.0, 0.0], &[0.0, 1.0]]), vec![vec![1.0, 0.0]; 2]);
        assert!(matches!(pipeline_step(&state, &f, &hard()), Err(Error::Sequencing(_))));
        let f1 = FrameObservation { t: 1, ..f };
        assert!(matches!(pipeline_step(&state, &f1, &soft(0.0)), Err(Error::Validation(_))));
    }

    #[test]
    fn first_frame_initializes_from_detections() {
        let q = fm(&[&[1.0, 0.0], &[0.0, 1.0], &[0.6, -0.8]]);
        let probs = vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]];
        let f = frame(1, q.clone(), probs);
        let (state, out) = pipeline_step(&MemoryState::fresh(3, 2), &f, &hard()).unwrap();
        assert_eq!(out.perm, vec![0, 1, 2]);
        assert_eq!(out.q_dot, q);
        assert_eq!(state.t, 1);
        assert_eq!(state.cumulative_occupancy, vec![true, false, true]);
        assert_eq!(state.frame_occupancy, state.cumulative_occupancy);
        let expected = update_lom(&q, &out.q_dot, &out.foreground).unwrap();
        assert_eq!(state.memory, expected);
    }

    #[test]
    fn shuffled_detections_keep_their_slots() {
        let q1 = fm(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 0.1]]);
        let p1 = vec![vec![0.95, 0.0, 0.05], vec![0.0, 0.95, 0.05], vec![0.0, 0.001, 0.999]];
        let (s1, _) = pipeline_step(&MemoryState::fresh(3, 3), &frame(1, q1.clone(), p1.clone()), &hard()).unwrap();
        // frame 2 presents the same objects in order [2, 0, 1]
        let order = [2, 0, 1];
        let q2 = q1.select_rows(&order);
        let p2: Vec<Vec<f64>> = order.iter().map(|&i| p1[i].clone()).collect();
        let (s2, out) = pipeline_step(&s1, &frame(2, q2, p2), &hard()).unwrap();
        assert_eq!(out.perm, vec![1, 2, 0]);
        assert_eq!(out.aligned, q1);
        assert_eq!(s2.memory, s1.memory);
    }
}
