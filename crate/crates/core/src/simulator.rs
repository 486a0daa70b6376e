//! Synthetic scenes standing in for a segmentation network.
//!
//! A scenario fixes object identities (unit latent embeddings), presence
//! schedules and trajectories. Frames are rendered on demand from `(seed, t)`,
//! so any frame can be regenerated independently of the others.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{GroundTruth, GtObject};
use crate::primitives::{cosine_unchecked, norm, ClassProbMatrix, FeatureMatrix, MaskSet};
use crate::tracker::FrameObservation;

pub const MAX_LATENT_ATTEMPTS: usize = 10_000;
/// Norm of background detection embeddings.
pub const BACKGROUND_NORM: f64 = 0.1;
/// Default no-object probability of background detections.
pub const BACKGROUND_NO_OBJECT: f64 = 0.999;
/// Share of an object's residual probability placed on no-object.
const RESIDUAL_NO_OBJECT: f64 = 0.9;
/// Slack on the pairwise latent cosine bound.
const GAP_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    #[default]
    Disc,
    Rect,
}

/// Linear motion reflected at the grid border. Positions are `[row, col]` in cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: [f64; 2],
    #[serde(default)]
    pub velocity: [f64; 2],
    pub radius: f64,
    #[serde(default)]
    pub shape: Shape,
}

/// Constrains an object's latent to a fixed cosine with an earlier object's latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTie {
    pub object: usize,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: usize,
    /// Inclusive 1-based frame intervals in which the object is present.
    pub intervals: Vec<(usize, usize)>,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Probability on the true class, in (0.5, 1].
    pub confidence: f64,
    /// Noise used instead of `noise_sigma` on present frames next to an absence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flank_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_tie: Option<LatentTie>,
}

impl ObjectSpec {
    pub fn present_at(&self, t: usize) -> bool {
        self.intervals.iter().any(|&(a, b)| a <= t && t <= b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub slots: usize,
    pub channels: usize,
    pub classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub min_pairwise_cosine_gap: f64,
    /// No-object probability of background detections, in [0.5, 1].
    #[serde(default = "default_background")]
    pub background_no_object: f64,
    pub seed: u64,
}

fn default_background() -> f64 {
    BACKGROUND_NO_OBJECT
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 || self.channels == 0 || self.classes == 0 || self.frames == 0 {
            return Err(Error::invalid("slots, channels, classes and frames must be positive"));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("mask grid must be at least 1x1"));
        }
        if self.objects.len() > self.slots {
            return Err(Error::Capacity(format!(
                "{} objects for {} slots",
                self.objects.len(),
                self.slots
            )));
        }
        if !(0.0..=2.0).contains(&self.min_pairwise_cosine_gap) {
            return Err(Error::invalid(format!(
                "cosine gap {} outside [0,2]",
                self.min_pairwise_cosine_gap
            )));
        }
        if !(0.5..=1.0).contains(&self.background_no_object) {
            return Err(Error::invalid(format!(
                "background no-object probability {} outside [0.5,1]",
                self.background_no_object
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.class == 0 || o.class > self.classes {
                return Err(Error::invalid(format!("object {i}: class {} outside 1..={}", o.class, self.classes)));
            }
            if o.intervals.is_empty() {
                return Err(Error::invalid(format!("object {i} has no presence interval")));
            }
            if let Some(&(a, b)) = o.intervals.iter().find(|&&(a, b)| a == 0 || a > b || b > self.frames) {
                return Err(Error::invalid(format!(
                    "object {i}: interval [{a}, {b}] not within [1, {}]",
                    self.frames
                )));
            }
            let sigmas = [Some(o.noise_sigma), o.flank_sigma];
            if sigmas.iter().flatten().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::invalid(format!("object {i}: noise must be finite and >= 0")));
            }
            if !(o.confidence > 0.5 && o.confidence <= 1.0) {
                return Err(Error::invalid(format!("object {i}: confidence {} outside (0.5, 1]", o.confidence)));
            }
            if !(o.trajectory.radius > 0.0 && o.trajectory.radius.is_finite()) {
                return Err(Error::invalid(format!("object {i}: radius must be positive")));
            }
            if o.trajectory.start.iter().chain(&o.trajectory.velocity).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("object {i}: non-finite trajectory")));
            }
            if let Some(tie) = &o.latent_tie {
                if tie.object >= i {
                    return Err(Error::invalid(format!("object {i}: latent tie must reference an earlier object")));
                }
                if !(-1.0..=1.0).contains(&tie.cosine) {
                    return Err(Error::invalid(format!("object {i}: tie cosine {} outside [-1,1]", tie.cosine)));
                }
                if self.channels < 2 {
                    return Err(Error::invalid("latent ties need at least 2 channels"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub latents: Vec<Vec<f64>>,
    pub gt: GroundTruth,
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const LATENT_STREAM: u64 = u64::MAX;

fn gaussian_vec(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    (0..c).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm(&v);
    (n > 1e-9).then(|| v.into_iter().map(|x| x / n).collect())
}

fn random_unit(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    loop {
        if let Some(u) = unit(gaussian_vec(rng, c)) {
            return u;
        }
    }
}

fn sample_latents(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let c = config.channels;
    let mut latents: Vec<Vec<f64>> = Vec::with_capacity(config.objects.len());
    for o in &config.objects {
        let v = match &o.latent_tie {
            None => random_unit(rng, c),
            Some(tie) => {
                let base = &latents[tie.object];
                let ortho = loop {
                    let mut g = gaussian_vec(rng, c);
                    let proj: f64 = g.iter().zip(base).map(|(a, b)| a * b).sum();
                    for (gi, bi) in g.iter_mut().zip(base) {
                        *gi -= proj * bi;
                    }
                    if let Some(u) = unit(g) {
                        break u;
                    }
                };
                let s = (1.0 - tie.cosine * tie.cosine).max(0.0).sqrt();
                let v: Vec<f64> = base.iter().zip(&ortho).map(|(b, u)| tie.cosine * b + s * u).collect();
                unit(v).expect("combination of orthonormal vectors has unit norm")
            }
        };
        latents.push(v);
    }
    latents
}

fn pairwise_ok(latents: &[Vec<f64>], gap: f64) -> bool {
    let bound = 1.0 - gap + GAP_SLACK;
    for i in 0..latents.len() {
        for j in 0..i {
            if cosine_unchecked(&latents[i], &latents[j]) > bound {
                return false;
            }
        }
    }
    true
}

/// Reflects `x` into `[0, len]`.
fn reflect(x: f64, len: f64) -> f64 {
    let period = 2.0 * len;
    let m = x.rem_euclid(period);
    if m > len {
        period - m
    } else {
        m
    }
}

fn render_mask(traj: &Trajectory, t: usize, height: usize, width: usize) -> Vec<f64> {
    let dt = (t - 1) as f64;
    let cy = reflect(traj.start[0] + traj.velocity[0] * dt, height as f64);
    let cx = reflect(traj.start[1] + traj.velocity[1] * dt, width as f64);
    let r = traj.radius;
    let mut mask = vec![0.0; height * width];
    let mut any = false;
    for i in 0..height {
        for j in 0..width {
            let dy = i as f64 + 0.5 - cy;
            let dx = j as f64 + 0.5 - cx;
            let inside = match traj.shape {
                Shape::Disc => dy * dy + dx * dx <= r * r,
                Shape::Rect => dy.abs() <= r && dx.abs() <= r,
            };
            if inside {
                mask[i * width + j] = 1.0;
                any = true;
            }
        }
    }
    if !any {
        let i = (cy.floor() as usize).min(height - 1);
        let j = (cx.floor() as usize).min(width - 1);
        mask[i * width + j] = 1.0;
    }
    mask
}

/// Samples latents and builds ground truth. Deterministic in `config.seed`.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    if let Some((i, tie)) = config
        .objects
        .iter()
        .enumerate()
        .find_map(|(i, o)| o.latent_tie.as_ref().map(|t| (i, t)))
        .filter(|(_, t)| t.cosine > 1.0 - config.min_pairwise_cosine_gap + GAP_SLACK)
    {
        return Err(Error::Generation(format!(
            "object {i} is tied at cosine {} which violates the pairwise gap {}",
            tie.cosine, config.min_pairwise_cosine_gap
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, LATENT_STREAM));
    let mut latents = None;
    for _ in 0..MAX_LATENT_ATTEMPTS {
        let candidate = sample_latents(config, &mut rng);
        if pairwise_ok(&candidate, config.min_pairwise_cosine_gap) {
            latents = Some(candidate);
            break;
        }
    }
    let latents = latents.ok_or_else(|| {
        Error::Generation(format!(
            "no latents with pairwise cosine <= {} after {MAX_LATENT_ATTEMPTS} attempts",
            1.0 - config.min_pairwise_cosine_gap
        ))
    })?;

    let (h, w, frames) = (config.height, config.width, config.frames);
    let objects = config
        .objects
        .iter()
        .map(|o| {
            let presence: Vec<bool> = (1..=frames).map(|t| o.present_at(t)).collect();
            let mut data = Vec::with_capacity(frames * h * w);
            for t in 1..=frames {
                if presence[t - 1] {
                    data.extend(render_mask(&o.trajectory, t, h, w));
                } else {
                    data.extend(std::iter::repeat_n(0.0, h * w));
                }
            }
            Ok(GtObject {
                class: o.class,
                presence,
                masks: MaskSet::new(frames, h, w, data)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Scenario {
        config: config.clone(),
        latents,
        gt: GroundTruth {
            frames,
            height: h,
            width: w,
            objects,
        },
    })
}

fn object_class_row(class: usize, k: usize, q: f64) -> Vec<f64> {
    let mut row = vec![0.0; k + 1];
    let rest = 1.0 - q;
    row[class - 1] = q;
    if k == 1 {
        row[k] = rest;
    } else {
        row[k] = RESIDUAL_NO_OBJECT * rest;
        let share = (1.0 - RESIDUAL_NO_OBJECT) * rest / (k - 1) as f64;
        for (c, v) in row.iter_mut().enumerate().take(k) {
            if c != class - 1 {
                *v = share;
            }
        }
    }
    row
}

fn background_class_row(k: usize, no_object: f64) -> Vec<f64> {
    let mut row = vec![(1.0 - no_object) / k as f64; k + 1];
    row[k] = no_object;
    row
}

impl Scenario {
    pub fn frames(&self) -> usize {
        self.config.frames
    }

    /// Renders frame `t` (1-based) with detections in a seeded random order.
    pub fn render_frame(&self, t: usize) -> Result<FrameObservation> {
        let cfg = &self.config;
        if t == 0 || t > cfg.frames {
            return Err(Error::invalid(format!("frame {t} outside 1..={}", cfg.frames)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, t as u64));
        let (n, c, k) = (cfg.slots, cfg.channels, cfg.classes);
        let cells = cfg.height * cfg.width;

        let mut queries: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut probs: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut masks: Vec<f64> = Vec::with_capacity(n * cells);

        for (i, o) in cfg.objects.iter().enumerate() {
            if !o.present_at(t) {
                continue;
            }
            let flanking = (t > 1 && !o.present_at(t - 1)) || (t < cfg.frames && !o.present_at(t + 1));
            let sigma = match (flanking, o.flank_sigma) {
                (true, Some(s)) => s,
                _ => o.noise_sigma,
            };
            let latent = &self.latents[i];
            let emb = if sigma == 0.0 {
                latent.clone()
            } else {
                let noisy: Vec<f64> = latent
                    .iter()
                    .map(|&x| x + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                unit(noisy).unwrap_or_else(|| latent.clone())
            };
            queries.push(emb);
            probs.push(object_class_row(o.class, k, o.confidence));
            masks.extend_from_slice(self.gt.objects[i].mask_at(t));
        }
        while queries.len() < n {
            queries.push(random_unit(&mut rng, c).into_iter().map(|x| x * BACKGROUND_NORM).collect());
            probs.push(background_class_row(k, cfg.background_no_object));
            masks.extend(std::iter::repeat_n(0.0, cells));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let queries = FeatureMatrix::from_rows(order.iter().map(|&i| queries[i].clone()).collect())?;
        let class_probs = ClassProbMatrix::from_rows(order.iter().map(|&i| probs[i].clone()).collect())?;
        let mut shuffled = Vec::with_capacity(n * cells);
        for &i in &order {
            shuffled.extend_from_slice(&masks[i * cells..(i + 1) * cells]);
        }
        Ok(FrameObservation {
            t,
            queries,
            class_probs,
            masks: Some(MaskSet::new(n, cfg.height, cfg.width, shuffled)?),
        })
    }

    pub fn render_all(&self) -> Result<Vec<FrameObservation>> {
        (1..=self.frames()).map(|t| self.render_frame(t)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        s.config.validate()?;
        s.gt.validate()?;
        if s.latents.len() != s.config.objects.len() || s.latents.iter().any(|l| l.len() != s.config.channels) {
            return Err(Error::dim("latents do not match the object list"));
        }
        Ok(s)
    }
}

/// Ready-made scenario configurations.
pub mod presets {
    use super::*;

    fn base(name: &str, seed: u64, frames: usize) -> ScenarioConfig {
        ScenarioConfig {
            name: name.to_string(),
            slots: 6,
            channels: 8,
            classes: 3,
            frames,
            height: 16,
            width: 16,
            objects: Vec::new(),
            min_pairwise_cosine_gap: 0.4,
            background_no_object: BACKGROUND_NO_OBJECT,
            seed,
        }
    }

    fn object(class: usize, intervals: Vec<(usize, usize)>, start: [f64; 2], sigma: f64) -> ObjectSpec {
        ObjectSpec {
            class,
            intervals,
            trajectory: Trajectory {
                start,
                velocity: [0.3, -0.2],
                radius: 2.5,
                shape: Shape::Disc,
            },
            noise_sigma: sigma,
            confidence: 0.95,
            flank_sigma: None,
            latent_tie: None,
        }
    }

    /// Object 0 is present on frames 1..=3, absent for `gap` frames, then
    /// present for 4 more. Object 1 is a distractor tied to object 0 at
    /// `distractor_cosine`; object 2 is an unrelated bystander.
    pub fn reappearance(seed: u64, gap: usize, sigma: f64, distractor_cosine: f64) -> ScenarioConfig {
        let frames = 3 + gap + 4;
        let mut cfg = base("reappearance", seed, frames);
        cfg.min_pairwise_cosine_gap = 1.0 - distractor_cosine.max(0.6);
        cfg.objects.push(object(1, vec![(1, 3), (4 + gap, frames)], [4.0, 4.0], sigma));
        let mut distractor = object(2, vec![(1, frames)], [11.0, 11.0], sigma);
        distractor.latent_tie = Some(LatentTie {
            object: 0,
            cosine: distractor_cosine,
        });
        cfg.objects.push(distractor);
        cfg.objects.push(object(3, vec![(1, frames)], [4.0, 12.0], sigma));
        cfg
    }

    /// Two persistent objects; a third appears at frame 4 with confidence 1.
    pub fn new_object(seed: u64, sigma: f64) -> ScenarioConfig {
        let frames = 10;
        let mut cfg = base("new_object", seed, frames);
        cfg.objects.push(object(1, vec![(1, frames)], [4.0, 4.0], sigma));
        cfg.objects.push(object(2, vec![(1, frames)], [11.0, 11.0], sigma));
        let mut late = object(3, vec![(4, frames)], [4.0, 12.0], sigma);
        late.confidence = 1.0;
        cfg.objects.push(late);
        cfg
    }

    /// Object 0 is present on frames 1..=3 and 14..=16 and absent for the ten
    /// frames between; background detections are certain no-object.
    pub fn disappearance(seed: u64) -> ScenarioConfig {
        let frames = 16;
        let mut cfg = base("disappearance", seed, frames);
        cfg.background_no_object = 1.0;
        cfg.objects.push(object(1, vec![(1, 3), (14, frames)], [4.0, 4.0], 0.0));
        cfg.objects.push(object(2, vec![(1, frames)], [11.0, 11.0], 0.0));
        cfg
    }

    /// Every object present in every frame, no noise.
    pub fn static_scene(seed: u64) -> ScenarioConfig {
        let frames = 8;
        let mut cfg = base("static", seed, frames);
        for (i, start) in [[4.0, 4.0], [11.0, 11.0], [4.0, 12.0]].into_iter().enumerate() {
            cfg.objects.push(object(i + 1, vec![(1, frames)], start, 0.0));
        }
        cfg
    }

    /// Mixed appearances, disappearances and one distractor, drawn from `seed`.
    pub fn stress(seed: u64, sigma: f64) -> ScenarioConfig {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5747_5245_5353));
        let frames = 20;
        let mut cfg = base("stress", seed, frames);
        cfg.slots = 8;
        cfg.classes = 4;
        cfg.height = 24;
        cfg.width = 24;
        cfg.min_pairwise_cosine_gap = 0.4;
        let count = rng.random_range(3..=5);
        for i in 0..count {
            let class = rng.random_range(1..=cfg.classes);
            let intervals = match rng.random_range(0..4) {
                0 => vec![(1, frames)],
                1 => {
                    let start = rng.random_range(2..=frames / 2);
                    vec![(start, frames)]
                }
                2 => {
                    let end = rng.random_range(frames / 2..frames);
                    vec![(1, end)]
                }
                _ => {
                    let a = rng.random_range(2..=6);
                    let b = rng.random_range(a + 3..=a + 8);
                    vec![(1, a), (b, frames)]
                }
            };
            let start = [rng.random_range(2.0..22.0), rng.random_range(2.0..22.0)];
            let mut o = object(class, intervals, start, sigma);
            o.trajectory.velocity = [rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8)];
            o.trajectory.radius = rng.random_range(1.5..4.0);
            o.confidence = rng.random_range(0.8..1.0);
            if i == 1 {
                o.latent_tie = Some(LatentTie {
                    object: 0,
                    cosine: rng.random_range(0.4..0.6),
                });
            }
            cfg.objects.push(o);
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::foreground_probability;

    fn single(sigma: f64, q: f64, intervals: Vec<(usize, usize)>) -> ScenarioConfig {
        ScenarioConfig {
            name: "single".into(),
            slots: 3,
            channels: 4,
            classes: 2,
            frames: 5,
            height: 8,
            width: 8,
            objects: vec![ObjectSpec {
                class: 2,
                intervals,
                trajectory: Trajectory {
                    start: [3.0, 3.0],
                    velocity: [1.0, 0.5],
                    radius: 1.5,
                    shape: Shape::Disc,
                },
                noise_sigma: sigma,
                confidence: q,
                flank_sigma: None,
                latent_tie: None,
            }],
            min_pairwise_cosine_gap: 0.0,
            background_no_object: BACKGROUND_NO_OBJECT,
            seed: 9,
        }
    }

    #[test]
    fn zero_objects_is_valid() {
        let mut cfg = single(0.0, 1.0, vec![(1, 5)]);
        cfg.objects.clear();
        let s = generate_scenario(&cfg).unwrap();
        assert!(s.gt.objects.is_empty() && s.latents.is_empty());
        let f = s.render_frame(1).unwrap();
        assert!(f.class_probs.labels().iter().all(|l| !l.is_object()));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = presets::stress(3, 0.05);
        assert_eq!(generate_scenario(&cfg).unwrap(), generate_scenario(&cfg).unwrap());
        let s = generate_scenario(&cfg).unwrap();
        assert_eq!(s.render_frame(7).unwrap(), s.render_frame(7).unwrap());
    }

    #[test]
    fn pairwise_gap_holds() {
        let mut cfg = single(0.0, 1.0, vec![(1, 5)]);
        cfg.channels = 8;
        cfg.seed = 42;
        cfg.min_pairwise_cosine_gap = 0.5;
        let o = cfg.objects[0].clone();
        cfg.objects.push(ObjectSpec { class: 1, ..o });
        let s = generate_scenario(&cfg).unwrap();
        assert!(cosine_unchecked(&s.latents[0], &s.latents[1]) <= 0.5);
    }

    #[test]
    fn unsatisfiable_gap_fails() {
        let mut cfg = single(0.0, 1.0, vec![(1, 5)]);
        cfg.channels = 2;
        cfg.min_pairwise_cosine_gap = 1.9;
        let o = cfg.objects[0].clone();
        cfg.objects.push(o.clone());
        cfg.objects.push(o);
        assert!(matches!(generate_scenario(&cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn too_many_objects() {
        let mut cfg = single(0.0, 1.0, vec![(1, 5)]);
        let o = cfg.objects[0].clone();
        cfg.objects = vec![o; 4];
        assert!(matches!(generate_scenario(&cfg), Err(Error::Capacity(_))));
    }

    #[test]
    fn tied_latent_has_requested_cosine() {
        let cfg = presets::reappearance(1, 5, 0.02, 0.6);
        let s = generate_scenario(&cfg).unwrap();
        assert!((cosine_unchecked(&s.latents[0], &s.latents[1]) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn noiseless_object_is_recoverable() {
        let s = generate_scenario(&single(0.0, 1.0, vec![(1, 5)])).unwrap();
        for t in 1..=5 {
            let f = s.render_frame(t).unwrap();
            let hits: Vec<usize> = (0..3).filter(|&j| f.queries.row(j) == s.latents[0].as_slice()).collect();
            assert_eq!(hits.len(), 1);
            assert_eq!(foreground_probability(f.class_probs.row(hits[0])).unwrap(), 1.0);
        }
    }

    #[test]
    fn absent_frames_are_background_only() {
        let s = generate_scenario(&single(0.05, 0.9, vec![(1, 2), (5, 5)])).unwrap();
        for t in 3..=4 {
            let f = s.render_frame(t).unwrap();
            assert!(f.class_probs.labels().iter().all(|l| !l.is_object()));
        }
        let f = s.render_frame(5).unwrap();
        assert_eq!(f.class_probs.labels().iter().filter(|l| l.is_object()).count(), 1);
        assert!(s.render_frame(6).is_err());
        assert!(s.render_frame(0).is_err());
    }

    #[test]
    fn class_rows_are_stochastic() {
        for k in 1..5 {
            for q in [0.51, 0.8, 1.0] {
                let r = object_class_row(1, k, q);
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            assert!((background_class_row(k, 0.999).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert_eq!(background_class_row(k, 1.0)[k], 1.0);
        }
    }

    #[test]
    fn masks_follow_reflected_trajectory() {
        assert_eq!(reflect(9.0, 8.0), 7.0);
        assert_eq!(reflect(-1.0, 8.0), 1.0);
        let traj = Trajectory {
            start: [0.0, 0.0],
            velocity: [0.0, 0.0],
            radius: 0.1,
            shape: Shape::Rect,
        };
        // too small to cover a cell centre: nearest cell is set
        assert_eq!(render_mask(&traj, 1, 2, 2), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = generate_scenario(&presets::new_object(4, 0.01)).unwrap();
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn config_validation() {
        let mut cfg = single(0.0, 0.5, vec![(1, 5)]);
        assert!(cfg.validate().is_err());
        cfg.objects[0].confidence = 0.9;
        cfg.objects[0].intervals = vec![(3, 7)];
        assert!(cfg.validate().is_err());
        cfg.objects[0].intervals = vec![];
        assert!(cfg.validate().is_err());
    }
}
