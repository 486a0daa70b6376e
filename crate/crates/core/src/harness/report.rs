use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryKind;
use crate::primitives::cosine_unchecked;
use crate::simulator::Scenario;
use crate::tracker::{AnchorKind, TrackerConfig};
use crate::ENGINE_VERSION;

use super::metrics::{evaluate_tracks, Metrics};
use super::runner::run_sequence;

const ANCHORS: [AnchorKind; 3] = [AnchorKind::Adaptive, AnchorKind::CurrentOnly, AnchorKind::MemoryOnly];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub scenario: String,
    pub seed: u64,
    pub metrics: Metrics,
    /// Per object, per frame: cosine between the memory of the object's
    /// majority slot and its latent. `None` if the object was never tracked.
    pub slot_latent_cosine: Vec<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationReport {
    pub memory: MemoryKind,
    pub anchor: AnchorKind,
    pub mean_association_accuracy: f64,
    pub total_id_switches: usize,
    pub runs: Vec<ScenarioRun>,
}

/// Expected orderings between variants, checked on the report's means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub lom_ge_similarity: bool,
    pub lom_ge_momentum: bool,
    pub adaptive_ge_current: bool,
    pub adaptive_ge_memory: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub engine: String,
    pub base_config: TrackerConfig,
    pub configurations: Vec<ConfigurationReport>,
    pub ordering: OrderingCheck,
}

impl ComparisonReport {
    pub fn find(&self, memory: MemoryKind, anchor: AnchorKind) -> Option<&ConfigurationReport> {
        self.configurations.iter().find(|c| c.memory == memory && c.anchor == anchor)
    }
}

fn run_one(scenario: &Scenario, config: &TrackerConfig) -> Result<ScenarioRun> {
    let frames = scenario.render_all()?;
    let result = run_sequence(&frames, config)?;
    let metrics = evaluate_tracks(&result, scenario)?;
    let slot_latent_cosine = metrics
        .per_object
        .iter()
        .map(|o| {
            result
                .frames
                .iter()
                .map(|rec| o.majority_slot.map(|s| cosine_unchecked(rec.memory.row(s), &scenario.latents[o.object])))
                .collect()
        })
        .collect();
    Ok(ScenarioRun {
        scenario: scenario.config.name.clone(),
        seed: scenario.config.seed,
        metrics,
        slot_latent_cosine,
    })
}

/// Runs every scenario under each memory rule crossed with the adaptive,
/// current-only and memory-only anchors.
pub fn compare_memory_report(scenarios: &[Scenario], base: &TrackerConfig) -> Result<ComparisonReport> {
    base.validate()?;
    if scenarios.is_empty() {
        return Err(Error::invalid("no scenarios to compare"));
    }
    let mut configurations = Vec::with_capacity(9);
    for memory in MemoryKind::ALL {
        for anchor in ANCHORS {
            let config = TrackerConfig {
                memory_kind: memory,
                anchor_kind: anchor,
                ..base.clone()
            };
            let runs = scenarios.iter().map(|s| run_one(s, &config)).collect::<Result<Vec<_>>>()?;
            let mean = runs.iter().map(|r| r.metrics.association_accuracy).sum::<f64>() / runs.len() as f64;
            let switches = runs.iter().map(|r| r.metrics.id_switches).sum();
            configurations.push(ConfigurationReport {
                memory,
                anchor,
                mean_association_accuracy: mean,
                total_id_switches: switches,
                runs,
            });
        }
    }

    let mean = |m: MemoryKind, a: AnchorKind| {
        configurations
            .iter()
            .find(|c| c.memory == m && c.anchor == a)
            .map_or(f64::NAN, |c| c.mean_association_accuracy)
    };
    let lom = mean(MemoryKind::Lom, AnchorKind::Adaptive);
    let checks = [
        ("lom >= similarity", lom >= mean(MemoryKind::Similarity, AnchorKind::Adaptive)),
        ("lom >= momentum", lom >= mean(MemoryKind::Momentum, AnchorKind::Adaptive)),
        ("adaptive >= current", lom >= mean(MemoryKind::Lom, AnchorKind::CurrentOnly)),
        ("adaptive >= memory", lom >= mean(MemoryKind::Lom, AnchorKind::MemoryOnly)),
    ];
    let warnings = checks
        .iter()
        .filter(|c| !c.1)
        .map(|c| format!("expected {} on mean association accuracy", c.0))
        .collect();
    Ok(ComparisonReport {
        engine: ENGINE_VERSION.to_string(),
        base_config: base.clone(),
        ordering: OrderingCheck {
            lom_ge_similarity: checks[0].1,
            lom_ge_momentum: checks[1].1,
            adaptive_ge_current: checks[2].1,
            adaptive_ge_memory: checks[3].1,
            warnings,
        },
        configurations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate_scenario, presets};

    #[test]
    fn nine_configurations() {
        let s = vec![generate_scenario(&presets::static_scene(1)).unwrap()];
        let rep = compare_memory_report(&s, &TrackerConfig::default()).unwrap();
        assert_eq!(rep.configurations.len(), 9);
        let lom = rep.find(MemoryKind::Lom, AnchorKind::Adaptive).unwrap();
        assert_eq!(lom.mean_association_accuracy, 1.0);
        assert_eq!(lom.runs[0].slot_latent_cosine.len(), 3);
        assert!(compare_memory_report(&[], &TrackerConfig::default()).is_err());
    }
}
