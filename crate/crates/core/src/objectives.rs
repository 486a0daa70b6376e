//! Training objectives as pure evaluators.
//!
//! Nothing here trains anything: each loss takes predictions and targets and
//! returns a number. The similarity loss also has an analytic gradient with
//! respect to the aligned features, used for finite-difference checks.

use serde::{Deserialize, Serialize};

use crate::association::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::primitives::{cosine_unchecked, dot, norm, validate_prob_row, ClassLabel, FeatureMatrix, MaskSet, ZERO_NORM};
use crate::tracker::SlotPredictions;

/// Floor applied inside logarithms.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub bce: f64,
    pub dice: f64,
    pub sim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 2.0,
            bce: 5.0,
            dice: 5.0,
            sim: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("cls", self.cls), ("bce", self.bce), ("dice", self.dice), ("sim", self.sim)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("loss weight {name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Ground-truth objects over a video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub objects: Vec<GtObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    /// Foreground class in 1..=K.
    pub class: usize,
    /// Presence per frame, index `t - 1`.
    pub presence: Vec<bool>,
    /// One mask per frame; all-zero where absent.
    pub masks: MaskSet,
}

impl GtObject {
    /// First frame (1-based) in which the object is present.
    pub fn first_appearance(&self) -> Option<usize> {
        self.presence.iter().position(|&p| p).map(|i| i + 1)
    }

    pub fn label_at(&self, t: usize) -> ClassLabel {
        if self.presence[t - 1] {
            ClassLabel::Class(self.class)
        } else {
            ClassLabel::NoObject
        }
    }

    pub fn mask_at(&self, t: usize) -> &[f64] {
        self.masks.mask(t - 1)
    }
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            if o.class == 0 {
                return Err(Error::invalid(format!("object {i} has class 0; classes are 1-based")));
            }
            if o.presence.len() != self.frames || o.masks.count() != self.frames {
                return Err(Error::dim(format!("object {i} does not cover {} frames", self.frames)));
            }
            if o.masks.height() != self.height || o.masks.width() != self.width {
                return Err(Error::dim(format!("object {i} masks are not {}x{}", self.height, self.width)));
            }
            if o.first_appearance().is_none() {
                return Err(Error::invalid(format!("object {i} is never present")));
            }
        }
        Ok(())
    }
}

/// Ground truth with each object blanked (no-object, zero mask) at its first
/// appearance and wherever it is absent.
pub fn modified_gt(gt: &GroundTruth) -> GroundTruth {
    let cells = gt.height * gt.width;
    let objects = gt
        .objects
        .iter()
        .map(|o| {
            let first = o.first_appearance().unwrap_or(usize::MAX);
            let presence: Vec<bool> = (1..=gt.frames).map(|t| o.presence[t - 1] && t > first).collect();
            let mut data = Vec::with_capacity(gt.frames * cells);
            for t in 1..=gt.frames {
                if presence[t - 1] {
                    data.extend_from_slice(o.mask_at(t));
                } else {
                    data.extend(std::iter::repeat_n(0.0, cells));
                }
            }
            GtObject {
                class: o.class,
                presence,
                masks: MaskSet::new(gt.frames, gt.height, gt.width, data).expect("masks copied from valid ground truth"),
            }
        })
        .collect();
    GroundTruth {
        frames: gt.frames,
        height: gt.height,
        width: gt.width,
        objects,
    }
}

fn check_masks(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::dim(format!("mask of {} cells vs {} cells", pred.len(), gt.len())));
    }
    if pred.iter().chain(gt).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("mask value outside [0,1]"));
    }
    Ok(())
}

fn ln_floor(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// Mean binary cross-entropy over cells.
pub fn binary_cross_entropy(pred: &[f64], gt: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let mut l = 0.0;
            if g > 0.0 {
                l -= g * ln_floor(p);
            }
            if g < 1.0 {
                l -= (1.0 - g) * ln_floor(1.0 - p);
            }
            l
        })
        .sum();
    total / pred.len() as f64
}

/// Dice loss with smoothing 1: `1 - (2Σpq + 1) / (Σp + Σq + 1)`.
pub fn dice_loss(pred: &[f64], gt: &[f64]) -> f64 {
    let inter: f64 = pred.iter().zip(gt).map(|(p, q)| p * q).sum();
    let sp: f64 = pred.iter().sum();
    let sq: f64 = gt.iter().sum();
    1.0 - (2.0 * inter + 1.0) / (sp + sq + 1.0)
}

/// Weighted cross-entropy + BCE + dice for one prediction/target pair.
///
/// Mask terms are skipped when the target is no-object or either mask is missing.
pub fn instance_loss(
    pred_probs: &[f64],
    pred_mask: Option<&[f64]>,
    gt_label: ClassLabel,
    gt_mask: Option<&[f64]>,
    w: &LossWeights,
) -> Result<f64> {
    validate_prob_row(pred_probs)?;
    let k = pred_probs.len() - 1;
    if let ClassLabel::Class(c) = gt_label {
        if c == 0 || c > k {
            return Err(Error::invalid(format!("class {c} outside 1..={k}")));
        }
    }
    let mut loss = -w.cls * ln_floor(pred_probs[gt_label.column(k)]);
    if let (true, Some(p), Some(g)) = (gt_label.is_object(), pred_mask, gt_mask) {
        check_masks(p, g)?;
        loss += w.bce * binary_cross_entropy(p, g) + w.dice * dice_loss(p, g);
    }
    Ok(loss)
}

/// Pairwise matching cost: `-λ_cls·prob(gt)` plus the mask terms.
pub fn matching_cost(
    pred_probs: &[f64],
    pred_mask: Option<&[f64]>,
    gt_label: ClassLabel,
    gt_mask: Option<&[f64]>,
    w: &LossWeights,
) -> Result<f64> {
    validate_prob_row(pred_probs)?;
    let k = pred_probs.len() - 1;
    let mut cost = -w.cls * pred_probs[gt_label.column(k)];
    if let (true, Some(p), Some(g)) = (gt_label.is_object(), pred_mask, gt_mask) {
        check_masks(p, g)?;
        cost += w.bce * binary_cross_entropy(p, g) + w.dice * dice_loss(p, g);
    }
    Ok(cost)
}

fn pred_at(preds: &[SlotPredictions], t: usize, slot: usize) -> Result<(&[f64], Option<&[f64]>)> {
    let p = preds
        .get(t - 1)
        .ok_or_else(|| Error::invalid(format!("no predictions for frame {t}")))?;
    if slot >= p.probs.rows() {
        return Err(Error::dim(format!("slot {slot} outside {} predictions", p.probs.rows())));
    }
    Ok((p.probs.row(slot), p.masks.as_ref().map(|m| m.mask(slot))))
}

/// Slot assigned to each ground-truth object, found by minimum matching cost
/// evaluated at each object's first-appearance frame. `early` matches against
/// `hat` predictions instead of `dot`.
pub fn match_ground_truth(
    dot_preds: &[SlotPredictions],
    hat_preds: &[SlotPredictions],
    gt: &GroundTruth,
    w: &LossWeights,
    early: bool,
) -> Result<Vec<usize>> {
    let preds = if early { hat_preds } else { dot_preds };
    let n_gt = gt.objects.len();
    if n_gt == 0 {
        return Ok(Vec::new());
    }
    let slots = preds
        .first()
        .map(|p| p.probs.rows())
        .ok_or_else(|| Error::invalid("empty prediction sequence"))?;
    if n_gt > slots {
        return Err(Error::Capacity(format!("{n_gt} ground-truth objects for {slots} slots")));
    }
    let mut data = Vec::with_capacity(n_gt * slots);
    for (i, o) in gt.objects.iter().enumerate() {
        let f = o
            .first_appearance()
            .ok_or_else(|| Error::invalid(format!("object {i} is never present")))?;
        for s in 0..slots {
            let (probs, mask) = pred_at(preds, f, s)?;
            data.push(matching_cost(probs, mask, o.label_at(f), Some(o.mask_at(f)), w)?);
        }
    }
    let assignment = solve_assignment(&CostMatrix::new(n_gt, slots, data)?)?;
    Ok(assignment.pairs.iter().map(|p| p.1).collect())
}

/// Evaluated loss with the number of summed terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub name: String,
    pub value: f64,
    pub term_count: usize,
}

/// Sum over objects (outer) and frames (inner) of the existing-object loss
/// against the modified targets plus the all-object loss against the real ones.
pub fn track_loss(
    hat_preds: &[SlotPredictions],
    dot_preds: &[SlotPredictions],
    gt: &GroundTruth,
    assignment: &[usize],
    w: &LossWeights,
) -> Result<LossRecord> {
    if assignment.len() != gt.objects.len() {
        return Err(Error::dim(format!(
            "assignment covers {} of {} objects",
            assignment.len(),
            gt.objects.len()
        )));
    }
    let modified = modified_gt(gt);
    let mut total = 0.0;
    let mut terms = 0;
    for ((o, m), &slot) in gt.objects.iter().zip(&modified.objects).zip(assignment) {
        for t in 1..=gt.frames {
            let (hp, hm) = pred_at(hat_preds, t, slot)?;
            let (dp, dm) = pred_at(dot_preds, t, slot)?;
            let existing = instance_loss(hp, hm, m.label_at(t), Some(m.mask_at(t)), w)?;
            let all = instance_loss(dp, dm, o.label_at(t), Some(o.mask_at(t)), w)?;
            total += existing + all;
            terms += 2;
        }
    }
    Ok(LossRecord {
        name: "track".into(),
        value: total,
        term_count: terms,
    })
}

fn check_sim_inputs(
    aligned: &[FeatureMatrix],
    memory: &[FeatureMatrix],
    frame_occupancy: &[Vec<bool>],
    assignment: &[usize],
) -> Result<()> {
    let frames = aligned.len();
    if frames < 2 {
        return Err(Error::invalid(format!("similarity loss needs at least 2 frames, got {frames}")));
    }
    if memory.len() != frames || frame_occupancy.len() != frames {
        return Err(Error::dim("aligned, memory and occupancy sequences differ in length"));
    }
    for (a, m) in aligned.iter().zip(memory) {
        a.same_shape(m, "aligned vs memory")?;
    }
    let slots = aligned[0].rows();
    if let Some(&s) = assignment.iter().find(|&&s| s >= slots) {
        return Err(Error::dim(format!("assigned slot {s} outside {slots} slots")));
    }
    if frame_occupancy.iter().any(|o| o.len() != slots) {
        return Err(Error::dim("occupancy length differs from slot count"));
    }
    Ok(())
}

/// Mean squared gap between `cos(Â_t, M_{t-1})` and the previous frame's
/// occupancy, over matched slots and frames 2..=T, normalized by `T·N_GT`.
///
/// Sequences are indexed by `t - 1`: `memory[t - 1]` is the memory after frame `t`.
pub fn sim_loss(
    aligned: &[FeatureMatrix],
    memory: &[FeatureMatrix],
    frame_occupancy: &[Vec<bool>],
    assignment: &[usize],
) -> Result<LossRecord> {
    check_sim_inputs(aligned, memory, frame_occupancy, assignment)?;
    let frames = aligned.len();
    let mut total = 0.0;
    let mut terms = 0;
    for &slot in assignment {
        for t in 2..=frames {
            let s = cosine_unchecked(aligned[t - 1].row(slot), memory[t - 2].row(slot));
            let target = if frame_occupancy[t - 2][slot] { 1.0 } else { 0.0 };
            total += (s - target).powi(2);
            terms += 1;
        }
    }
    let value = if assignment.is_empty() {
        0.0
    } else {
        total / (frames * assignment.len()) as f64
    };
    Ok(LossRecord {
        name: "sim".into(),
        value,
        term_count: terms,
    })
}

/// Gradient of [`sim_loss`] with respect to each frame's aligned features.
pub fn sim_loss_gradient(
    aligned: &[FeatureMatrix],
    memory: &[FeatureMatrix],
    frame_occupancy: &[Vec<bool>],
    assignment: &[usize],
) -> Result<Vec<FeatureMatrix>> {
    check_sim_inputs(aligned, memory, frame_occupancy, assignment)?;
    let frames = aligned.len();
    let mut grads: Vec<FeatureMatrix> = aligned.iter().map(|a| FeatureMatrix::zeros(a.rows(), a.cols())).collect();
    if assignment.is_empty() {
        return Ok(grads);
    }
    let scale = 2.0 / (frames * assignment.len()) as f64;
    for &slot in assignment {
        for t in 2..=frames {
            let a = aligned[t - 1].row(slot);
            let m = memory[t - 2].row(slot);
            let (na, nm) = (norm(a), norm(m));
            if na < ZERO_NORM || nm < ZERO_NORM {
                continue;
            }
            let s = dot(a, m) / (na * nm);
            let target = if frame_occupancy[t - 2][slot] { 1.0 } else { 0.0 };
            let coef = scale * (s - target);
            let g = grads[t - 1].row_mut(slot);
            for ((gi, &ai), &mi) in g.iter_mut().zip(a).zip(m) {
                *gi += coef * (mi / (na * nm) - s * ai / (na * na));
            }
        }
    }
    Ok(grads)
}

pub fn total_loss(track: f64, sim: f64, w: &LossWeights) -> f64 {
    track + w.sim * sim
}

/// Contrastive embedding loss `log(1 + Σ exp(v·k⁻ - v·k⁺))`, 0 without negatives.
pub fn embed_loss(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>]) -> Result<f64> {
    let c = anchor.len();
    if positive.len() != c || negatives.iter().any(|k| k.len() != c) {
        return Err(Error::dim("embedding lengths differ"));
    }
    if negatives.is_empty() {
        return Ok(0.0);
    }
    let pos = dot(anchor, positive);
    let z: Vec<f64> = negatives.iter().map(|k| dot(anchor, k) - pos).collect();
    let top = z.iter().copied().fold(0.0f64, f64::max);
    let sum: f64 = (-top).exp() + z.iter().map(|zi| (zi - top).exp()).sum::<f64>();
    Ok(top + sum.ln())
}
