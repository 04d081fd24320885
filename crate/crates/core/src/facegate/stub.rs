//! Scripted detector driven by a JSON fixture.
//!
//! ```json
//! {
//!   "default": "none",
//!   "frames": {
//!     "0": {"bbox": [10, 12, 40, 40], "confidence": 0.95},
//!     "1": "none",
//!     "2": [{"bbox": [0, 0, 20, 20], "confidence": 0.7},
//!           {"bbox": [30, 30, 30, 30], "confidence": 0.9,
//!            "landmarks": [[38, 42], [52, 42], [45, 48], [40, 54], [50, 54]]}],
//!     "3": "full_frame"
//!   }
//! }
//! ```
//!
//! Keys are decode-order frame indices. Frames not listed use `default`
//! (`"none"` unless given). `bbox` is `[x, y, w, h]` in frame pixels.

use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

use super::{Candidate, DetectError, FaceDetector};
use crate::frameio::FrameRecord;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Entry {
    Marker(String),
    One(Candidate),
    Many(Vec<Candidate>),
}

#[derive(Debug, Clone, PartialEq)]
enum Scripted {
    None,
    FullFrame,
    Faces(Vec<Candidate>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default)]
    default: Option<String>,
    #[serde(default)]
    frames: BTreeMap<String, Entry>,
}

#[derive(Debug, Clone)]
pub struct StubDetector {
    default: Scripted,
    frames: BTreeMap<u64, Scripted>,
}

fn marker(s: &str) -> Result<Scripted, String> {
    match s {
        "none" => Ok(Scripted::None),
        "full_frame" => Ok(Scripted::FullFrame),
        other => Err(format!(
            "unknown marker {other:?} (expected \"none\" or \"full_frame\")"
        )),
    }
}

impl StubDetector {
    pub fn load(path: &Path) -> Result<Self, DetectError> {
        let err = |message: String| DetectError::Script {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: ScriptFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let default = marker(file.default.as_deref().unwrap_or("none")).map_err(err)?;
        let mut frames = BTreeMap::new();
        for (key, entry) in file.frames {
            let index: u64 = key
                .parse()
                .map_err(|_| err(format!("frame key {key:?} is not an index")))?;
            let scripted = match entry {
                Entry::Marker(m) => marker(&m).map_err(err)?,
                Entry::One(c) => Scripted::Faces(vec![c]),
                Entry::Many(cs) => Scripted::Faces(cs),
            };
            frames.insert(index, scripted);
        }
        Ok(StubDetector { default, frames })
    }
}

impl FaceDetector for StubDetector {
    fn candidates(&mut self, frame: &FrameRecord) -> Result<Vec<Candidate>, DetectError> {
        Ok(match self.frames.get(&frame.frame_index).unwrap_or(&self.default) {
            Scripted::None => Vec::new(),
            Scripted::FullFrame => vec![Candidate::full_frame(frame)],
            Scripted::Faces(cs) => cs.clone(),
        })
    }

    fn threshold(&self) -> f32 {
        0.0
    }
}
