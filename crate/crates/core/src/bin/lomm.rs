use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lomm::harness::{
    compare_memory_report, evaluate_losses, evaluate_tracks_with, load_feature_stream, run_sequence,
    write_feature_stream, Correspondence, TrackResult,
};
use lomm::objectives::LossWeights;
use lomm::simulator::{generate_scenario, presets, Scenario, ScenarioConfig};
use lomm::{AnchorKind, Error, MemoryKind, ReadoutMode, Result, TrackerConfig};

#[derive(Parser)]
#[command(name = "lomm", version, about = "Latest-object-memory tracker and synthetic benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Reappearance,
    NewObject,
    Static,
    Stress,
    Disappearance,
}

#[derive(Clone, Copy, ValueEnum)]
enum Anchor {
    Adaptive,
    Current,
    Memory,
    Early,
}

#[derive(Clone, Copy, ValueEnum)]
enum Memory {
    Lom,
    Similarity,
    Momentum,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Hard,
    Soft,
}

#[derive(Args)]
struct TrackerArgs {
    #[arg(long, value_enum, default_value = "hard")]
    mode: Mode,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    adp_clamp: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    gate_new_slots: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    memory_tiebreak: bool,
}

impl TrackerArgs {
    fn config(&self, memory: Memory, anchor: Anchor) -> TrackerConfig {
        TrackerConfig {
            mode: match self.mode {
                Mode::Hard => ReadoutMode::Hard,
                Mode::Soft => ReadoutMode::Soft,
            },
            temperature: self.tau,
            memory_kind: match memory {
                Memory::Lom => MemoryKind::Lom,
                Memory::Similarity => MemoryKind::Similarity,
                Memory::Momentum => MemoryKind::Momentum,
            },
            anchor_kind: match anchor {
                Anchor::Adaptive => AnchorKind::Adaptive,
                Anchor::Current => AnchorKind::CurrentOnly,
                Anchor::Memory => AnchorKind::MemoryOnly,
                Anchor::Early => AnchorKind::EarlyChain,
            },
            momentum_alpha: self.alpha,
            adp_clamp: self.adp_clamp,
            gate_new_slots: self.gate_new_slots,
            memory_tiebreak: self.memory_tiebreak,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario from a config file or a preset.
    Simulate {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a scenario's rendered frames as a JSON-lines feature stream.
    Render {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a scenario or a feature stream.
    Track {
        #[arg(long, conflicts_with = "features", required_unless_present = "features")]
        scenario: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "lom")]
        memory: Memory,
        #[arg(long, value_enum, default_value = "adaptive")]
        anchor: Anchor,
        #[command(flatten)]
        tracker: TrackerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a track result against a scenario's ground truth.
    Eval {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Feature stream the result was produced from; matched by mask IoU.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare memory rules and anchors over every scenario in a directory.
    Compare {
        #[arg(long)]
        scenarios: PathBuf,
        #[command(flatten)]
        tracker: TrackerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the tracking objectives of a track result.
    Losses {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        early: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_scenario(path: &Path) -> Result<Scenario> {
    Scenario::from_json(&fs::read_to_string(path)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

fn frames_for(scenario: &Scenario, features: Option<&Path>) -> Result<(Vec<lomm::FrameObservation>, Correspondence)> {
    match features {
        Some(p) => Ok((load_feature_stream(p)?, Correspondence::Iou(0.5))),
        None => Ok((scenario.render_all()?, Correspondence::ExactMask)),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, preset, seed, out } => {
            let cfg = match (config, preset) {
                (Some(path), _) => serde_json::from_str::<ScenarioConfig>(&fs::read_to_string(path)?)
                    .map_err(|e| Error::Parse {
                        line: e.line(),
                        message: e.to_string(),
                    })?,
                (None, Some(Preset::Reappearance)) => presets::reappearance(seed, 5, 0.02, 0.6),
                (None, Some(Preset::NewObject)) => presets::new_object(seed, 0.0),
                (None, Some(Preset::Static)) => presets::static_scene(seed),
                (None, Some(Preset::Stress)) => presets::stress(seed, 0.05),
                (None, Some(Preset::Disappearance)) => presets::disappearance(seed),
                (None, None) => unreachable!("clap requires one of config or preset"),
            };
            write_json(&out, &generate_scenario(&cfg)?)
        }
        Command::Render { scenario, out } => {
            let frames = read_scenario(&scenario)?.render_all()?;
            fs::write(out, write_feature_stream(&frames))?;
            Ok(())
        }
        Command::Track {
            scenario,
            features,
            memory,
            anchor,
            tracker,
            out,
        } => {
            let frames = match (scenario, features) {
                (Some(s), _) => read_scenario(&s)?.render_all()?,
                (None, Some(f)) => load_feature_stream(f)?,
                (None, None) => unreachable!("clap requires one of scenario or features"),
            };
            let result = run_sequence(&frames, &tracker.config(memory, anchor))?;
            fs::write(out, result.to_json() + "\n")?;
            Ok(())
        }
        Command::Eval {
            result,
            scenario,
            features,
            out,
        } => {
            let scenario = read_scenario(&scenario)?;
            let result = TrackResult::from_json(&fs::read_to_string(result)?)?;
            let (frames, mode) = frames_for(&scenario, features.as_deref())?;
            let metrics = evaluate_tracks_with(&result, &scenario, &frames, mode)?;
            write_json(
                &out,
                &serde_json::json!({
                    "engine": lomm::ENGINE_VERSION,
                    "config": result.config,
                    "correspondence": mode,
                    "metrics": metrics,
                }),
            )
        }
        Command::Compare { scenarios, tracker, out } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&scenarios)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
            paths.sort();
            let list = paths.iter().map(|p| read_scenario(p)).collect::<Result<Vec<_>>>()?;
            let report = compare_memory_report(&list, &tracker.config(Memory::Lom, Anchor::Adaptive))?;
            for w in &report.ordering.warnings {
                eprintln!("warning: {w}");
            }
            write_json(&out, &report)
        }
        Command::Losses {
            result,
            scenario,
            features,
            early,
            out,
        } => {
            let scenario = read_scenario(&scenario)?;
            let result = TrackResult::from_json(&fs::read_to_string(result)?)?;
            let (frames, _) = frames_for(&scenario, features.as_deref())?;
            write_json(&out, &evaluate_losses(&result, &scenario, &frames, &LossWeights::default(), early)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lomm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
