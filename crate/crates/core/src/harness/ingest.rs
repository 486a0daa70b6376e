use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::primitives::{ClassProbMatrix, FeatureMatrix, MaskSet};
use crate::tracker::FrameObservation;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    t: usize,
    queries: Vec<Vec<f64>>,
    class_probs: Vec<Vec<f64>>,
    #[serde(default)]
    masks: Option<Vec<Vec<Vec<f64>>>>,
}

fn in_frame(t: usize, e: Error) -> Error {
    match e {
        Error::Validation(m) => Error::Validation(format!("frame {t}: {m}")),
        Error::Dimension(m) => Error::Dimension(format!("frame {t}: {m}")),
        other => other,
    }
}

fn convert(raw: RawFrame) -> Result<FrameObservation> {
    let t = raw.t;
    let frame = FrameObservation {
        t,
        queries: FeatureMatrix::from_rows(raw.queries).map_err(|e| in_frame(t, e))?,
        class_probs: ClassProbMatrix::from_rows(raw.class_probs).map_err(|e| in_frame(t, e))?,
        masks: raw.masks.map(MaskSet::from_nested).transpose().map_err(|e| in_frame(t, e))?,
    };
    frame.validate()?;
    Ok(frame)
}

/// Parses one JSON frame per line. Blank lines are skipped.
pub fn parse_feature_stream(text: &str) -> Result<Vec<FrameObservation>> {
    let mut frames: Vec<FrameObservation> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawFrame = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let frame = convert(raw)?;
        if let Some(prev) = frames.last() {
            if frame.t <= prev.t {
                return Err(Error::Sequencing(format!(
                    "line {}: frame {} follows frame {}",
                    i + 1,
                    frame.t,
                    prev.t
                )));
            }
            if frame.queries.rows() != prev.queries.rows() || frame.queries.cols() != prev.queries.cols() {
                return Err(Error::dim(format!("frame {}: query shape changes mid-stream", frame.t)));
            }
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(Error::invalid("feature stream is empty"));
    }
    Ok(frames)
}

pub fn load_feature_stream(path: impl AsRef<Path>) -> Result<Vec<FrameObservation>> {
    parse_feature_stream(&std::fs::read_to_string(path)?)
}

/// One compact JSON object per line.
pub fn write_feature_stream(frames: &[FrameObservation]) -> String {
    let mut out = String::new();
    for f in frames {
        out.push_str(&serde_json::to_string(f).expect("frame serializes"));
        out.push('\n');
    }
    out
}
