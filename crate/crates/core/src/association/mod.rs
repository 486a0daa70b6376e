//! Cost construction, the assignment solver, occupancy-guided matching and
//! adaptive anchors.

mod hungarian;

pub use hungarian::{solve_assignment, solve_assignment_with_tiebreak, Assignment, CostMatrix};

use crate::error::{Error, Result};
use crate::memory::blend;
use crate::primitives::{cosine_unchecked, FeatureMatrix};

/// `cost[i][j] = 1 - cos(a_i, b_j)`, in [0, 2].
pub fn build_cost_matrix(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<CostMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim(format!(
            "cost between {}-channel and {}-channel features",
            a.cols(),
            b.cols()
        )));
    }
    let mut data = Vec::with_capacity(a.rows() * b.rows());
    for ra in a.iter_rows() {
        for rb in b.iter_rows() {
            data.push(1.0 - cosine_unchecked(ra, rb));
        }
    }
    CostMatrix::new(a.rows(), b.rows(), data)
}

/// Result of occupancy-guided matching.
#[derive(Clone, Debug, PartialEq)]
pub struct OhmAlignment {
    /// Row `n` is an exact copy of detection `perm[n]`.
    pub aligned: FeatureMatrix,
    pub perm: Vec<usize>,
    /// Slots matched in the first stage (occupied), ascending.
    pub occupied: Vec<usize>,
    pub occupied_cost: f64,
    pub unoccupied_cost: f64,
}

/// Occupancy-guided two-stage matching.
///
/// Occupied slots of `existing` are matched against all detections first;
/// unoccupied slots then share the detections left over.
pub fn ohm_align(
    existing: &FeatureMatrix,
    detections: &FeatureMatrix,
    occupancy: &[bool],
) -> Result<(FeatureMatrix, Vec<usize>)> {
    let out = ohm_align_with_reference(existing, detections, occupancy, None)?;
    Ok((out.aligned, out.perm))
}

/// Secondary matching preference used only among equal-cost assignments.
#[derive(Clone, Copy, Debug)]
pub struct TieBreak<'a> {
    /// Per-slot reference features, normally the memory.
    pub reference: &'a FeatureMatrix,
    /// Per-detection weight, normally the foreground probability.
    pub detection_weight: &'a [f64],
}

impl TieBreak<'_> {
    fn cost(&self, slots: &[usize], detections: &FeatureMatrix, cols: &[usize]) -> Result<CostMatrix> {
        let base = build_cost_matrix(&self.reference.select_rows(slots), &detections.select_rows(cols))?;
        let mut data = Vec::with_capacity(slots.len() * cols.len());
        for r in 0..slots.len() {
            for (c, &j) in cols.iter().enumerate() {
                data.push(self.detection_weight[j] * base.get(r, c));
            }
        }
        CostMatrix::new(slots.len(), cols.len(), data)
    }
}

/// [`ohm_align`] with an optional tie-break.
///
/// When two slots tie exactly on the primary cost, e.g. because both existing
/// readouts copied the same detection, the assignment minimizing the weighted
/// reference cost wins. Without a tie-break ties fall back to slot order.
pub fn ohm_align_with_reference(
    existing: &FeatureMatrix,
    detections: &FeatureMatrix,
    occupancy: &[bool],
    tiebreak: Option<TieBreak<'_>>,
) -> Result<OhmAlignment> {
    existing.same_shape(detections, "occupancy-guided matching")?;
    let n = existing.rows();
    if occupancy.len() != n {
        return Err(Error::dim(format!("occupancy of length {} for {n} slots", occupancy.len())));
    }
    if let Some(tb) = &tiebreak {
        tb.reference.same_shape(existing, "matching reference")?;
        if tb.detection_weight.len() != n {
            return Err(Error::dim(format!("{} detection weights for {n} detections", tb.detection_weight.len())));
        }
    }

    let occupied: Vec<usize> = (0..n).filter(|&i| occupancy[i]).collect();
    let unoccupied: Vec<usize> = (0..n).filter(|&i| !occupancy[i]).collect();
    let mut perm = vec![usize::MAX; n];
    let mut taken = vec![false; n];

    let solve = |slots: &[usize], cols: &[usize]| -> Result<(Assignment, f64)> {
        let rows = existing.select_rows(slots);
        let cands = detections.select_rows(cols);
        let cost = build_cost_matrix(&rows, &cands)?;
        let assignment = match &tiebreak {
            Some(tb) => solve_assignment_with_tiebreak(&cost, &tb.cost(slots, detections, cols)?)?,
            None => solve_assignment(&cost)?,
        };
        let total = assignment.total_cost(&cost);
        Ok((assignment, total))
    };

    let mut occupied_cost = 0.0;
    if !occupied.is_empty() {
        let all: Vec<usize> = (0..n).collect();
        let (assignment, total) = solve(&occupied, &all)?;
        for &(r, c) in &assignment.pairs {
            perm[occupied[r]] = c;
            taken[c] = true;
        }
        occupied_cost = total;
    }

    let mut unoccupied_cost = 0.0;
    if !unoccupied.is_empty() {
        let remaining: Vec<usize> = (0..n).filter(|&j| !taken[j]).collect();
        let (assignment, total) = solve(&unoccupied, &remaining)?;
        for &(r, c) in &assignment.pairs {
            perm[unoccupied[r]] = remaining[c];
        }
        unoccupied_cost = total;
    }

    debug_assert!(perm.iter().all(|&j| j < n));
    Ok(OhmAlignment {
        aligned: detections.select_rows(&perm),
        perm,
        occupied,
        occupied_cost,
        unoccupied_cost,
    })
}

/// Adaptive anchor with the blend weight clamped to [0, 1].
pub fn adaptive_anchor(aligned: &FeatureMatrix, memory: &FeatureMatrix) -> Result<FeatureMatrix> {
    adaptive_anchor_with(aligned, memory, true)
}

/// Per slot: `s = cos(Â, M)`, anchor `= s·Â + (1 - s)·M`. With `clamp`, `s` is
/// limited to [0, 1] so the anchor stays on the segment between the two.
pub fn adaptive_anchor_with(aligned: &FeatureMatrix, memory: &FeatureMatrix, clamp: bool) -> Result<FeatureMatrix> {
    aligned.same_shape(memory, "adaptive anchor")?;
    Ok(FeatureMatrix::from_fn(aligned.rows(), aligned.cols(), |n, out| {
        let a = aligned.row(n);
        let m = memory.row(n);
        let s = cosine_unchecked(a, m);
        if clamp {
            let s = s.max(0.0);
            for ((o, &mi), &ai) in out.iter_mut().zip(m).zip(a) {
                *o = blend(mi, ai, s);
            }
        } else {
            for ((o, &mi), &ai) in out.iter_mut().zip(m).zip(a) {
                *o = s * ai + (1.0 - s) * mi;
            }
        }
    }))
}
