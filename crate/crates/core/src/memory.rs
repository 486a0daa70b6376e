//! Per-slot object memory and occupancy bookkeeping.
//!
//! The tracker's memory is a foreground-weighted running blend ([`update_lom`]).
//! Two reference memories are kept alongside it for comparison runs: a
//! similarity-gated blend and a fixed-momentum average.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitives::{cosine_unchecked, ClassLabel, FeatureMatrix};

/// Default momentum weight on the previous memory.
pub const DEFAULT_MOMENTUM: f64 = 0.99;

/// Memory update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Lom,
    Similarity,
    Momentum,
}

impl MemoryKind {
    pub const ALL: [MemoryKind; 3] = [MemoryKind::Lom, MemoryKind::Similarity, MemoryKind::Momentum];

    pub fn name(self) -> &'static str {
        match self {
            MemoryKind::Lom => "lom",
            MemoryKind::Similarity => "similarity",
            MemoryKind::Momentum => "momentum",
        }
    }
}

/// Sequential per-video tracker state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub memory: FeatureMatrix,
    pub cumulative_occupancy: Vec<bool>,
    pub frame_occupancy: Vec<bool>,
    /// Index of the last processed frame; 0 before the first frame.
    pub t: usize,
    /// Previous raw-chain alignment, kept only for the early-training anchor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<FeatureMatrix>,
}

impl MemoryState {
    /// State before any frame. The memory is a placeholder replaced by the first frame.
    pub fn fresh(slots: usize, channels: usize) -> Self {
        Self {
            memory: FeatureMatrix::zeros(slots, channels),
            cumulative_occupancy: vec![false; slots],
            frame_occupancy: vec![false; slots],
            t: 0,
            chain: None,
        }
    }

    pub fn slots(&self) -> usize {
        self.memory.rows()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("memory state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let n = state.memory.rows();
        if state.cumulative_occupancy.len() != n || state.frame_occupancy.len() != n {
            return Err(Error::dim("occupancy length differs from memory slot count"));
        }
        if let Some(chain) = &state.chain {
            chain.same_shape(&state.memory, "chain vs memory")?;
        }
        Ok(state)
    }
}

/// `(1-w)·a + w·b`, exact at the endpoints and clamped to the segment [a, b].
#[inline]
pub(crate) fn blend(a: f64, b: f64, w: f64) -> f64 {
    if w == 0.0 {
        return a;
    }
    if w == 1.0 {
        return b;
    }
    let v = (1.0 - w) * a + w * b;
    v.clamp(a.min(b), a.max(b))
}

fn blend_rows(prev: &FeatureMatrix, obs: &FeatureMatrix, weight: impl Fn(usize) -> f64) -> FeatureMatrix {
    FeatureMatrix::from_fn(prev.rows(), prev.cols(), |n, out| {
        let w = weight(n);
        for ((o, &a), &b) in out.iter_mut().zip(prev.row(n)).zip(obs.row(n)) {
            *o = blend(a, b, w);
        }
    })
}

/// Foreground-weighted memory update: `M_t^n = (1 - p^n) M_{t-1}^n + p^n Q̇_t^n`.
pub fn update_lom(prev: &FeatureMatrix, observed: &FeatureMatrix, p: &[f64]) -> Result<FeatureMatrix> {
    prev.same_shape(observed, "memory update")?;
    if p.len() != prev.rows() {
        return Err(Error::dim(format!(
            "{} foreground weights for {} slots",
            p.len(),
            prev.rows()
        )));
    }
    if let Some((n, v)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("foreground probability {v} at slot {n} outside [0,1]")));
    }
    Ok(blend_rows(prev, observed, |n| p[n]))
}

/// Occupancy update. Returns `(cumulative, per_frame)`.
pub fn update_occupancy(cumulative_prev: &[bool], classes: &[ClassLabel]) -> Result<(Vec<bool>, Vec<bool>)> {
    if cumulative_prev.len() != classes.len() {
        return Err(Error::dim(format!(
            "occupancy of length {} with {} class labels",
            cumulative_prev.len(),
            classes.len()
        )));
    }
    let frame: Vec<bool> = classes.iter().map(|c| c.is_object()).collect();
    let cumulative = cumulative_prev.iter().zip(&frame).map(|(&a, &b)| a || b).collect();
    Ok((cumulative, frame))
}

/// Similarity-gated blend: weight is the clamped cosine between memory and observation.
pub fn update_similarity_memory(prev: &FeatureMatrix, observed: &FeatureMatrix) -> Result<FeatureMatrix> {
    prev.same_shape(observed, "similarity memory update")?;
    Ok(blend_rows(prev, observed, |n| {
        cosine_unchecked(prev.row(n), observed.row(n)).max(0.0)
    }))
}

/// Momentum average: `M_t = alpha M_{t-1} + (1 - alpha) Q̇_t`.
pub fn update_momentum_memory(prev: &FeatureMatrix, observed: &FeatureMatrix, alpha: f64) -> Result<FeatureMatrix> {
    prev.same_shape(observed, "momentum memory update")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("momentum {alpha} outside [0,1]")));
    }
    Ok(FeatureMatrix::from_fn(prev.rows(), prev.cols(), |n, out| {
        for ((o, &a), &b) in out.iter_mut().zip(prev.row(n)).zip(observed.row(n)) {
            *o = if alpha == 1.0 {
                a
            } else if alpha == 0.0 {
                b
            } else {
                (alpha * a + (1.0 - alpha) * b).clamp(a.min(b), a.max(b))
            };
        }
    }))
}
