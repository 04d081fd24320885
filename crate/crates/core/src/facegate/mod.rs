//! Primary-face gate: detection, frame skipping, alignment and cropping.
//!
//! Each frame yields at most one face, the largest confident candidate.
//! Frames without one are skipped and take no part in scoring.

pub mod align;
#[cfg(feature = "onnx")]
mod neural;
mod stub;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
#[cfg(feature = "onnx")]
use std::sync::Arc;
use thiserror::Error;

use crate::embed::AlignmentTemplate;
use crate::frameio::FrameRecord;
pub use stub::StubDetector;

pub const DEFAULT_THRESHOLD: f32 = 0.6;
pub const DEFAULT_MARGIN: f32 = 0.2;
pub const DEFAULT_DETECTOR_INPUT: [u32; 2] = [320, 240];
pub const MIN_FACE_SIDE: u32 = 8;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("detector model not found: {}", .0.display())]
    ModelMissing(PathBuf),
    #[error("cannot load detector model {}: {message}", path.display())]
    ModelLoad { path: PathBuf, message: String },
    #[error("detector script {}: {message}", path.display())]
    Script { path: PathBuf, message: String },
    #[error("detector inference failed: {0}")]
    Inference(String),
    #[error("neural detection needs ONNX support; rebuild with the `onnx` feature")]
    OnnxDisabled,
}

/// Pixel-aligned box inside the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }
}

/// Raw detector output before gating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    /// `[x, y, w, h]` in frame pixels.
    pub bbox: [f32; 4],
    pub confidence: f32,
    #[serde(default)]
    pub landmarks: Option<[[f32; 2]; 5]>,
}

impl Candidate {
    pub fn full_frame(frame: &FrameRecord) -> Self {
        Candidate {
            bbox: [0.0, 0.0, frame.image.width() as f32, frame.image.height() as f32],
            confidence: 1.0,
            landmarks: None,
        }
    }

    /// Box clipped to a `width × height` frame and snapped outward to whole
    /// pixels; `None` if it ends up smaller than 8 px on a side.
    pub fn pixel_bbox(&self, width: u32, height: u32) -> Option<BBox> {
        let [x, y, w, h] = self.bbox;
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) || w <= 0.0 || h <= 0.0 {
            return None;
        }
        let x0 = x.max(0.0).floor() as i64;
        let y0 = y.max(0.0).floor() as i64;
        let x1 = ((x + w).ceil() as i64).min(width as i64);
        let y1 = ((y + h).ceil() as i64).min(height as i64);
        let (bw, bh) = (x1 - x0, y1 - y0);
        (bw >= MIN_FACE_SIDE as i64 && bh >= MIN_FACE_SIDE as i64).then_some(BBox {
            x: x0 as u32,
            y: y0 as u32,
            w: bw as u32,
            h: bh as u32,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMethod {
    Landmarks,
    BboxCrop,
    /// Landmarks were present but unusable; the bbox crop was used.
    DegenerateFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceObservation {
    pub frame_index: u64,
    pub bbox: BBox,
    pub confidence: f32,
    pub landmarks: Option<[[f32; 2]; 5]>,
    /// Filled by [`align_and_crop`] at the model's input size.
    pub crop: Option<RgbImage>,
    pub alignment: Option<AlignMethod>,
}

pub trait FaceDetector: Send {
    fn candidates(&mut self, frame: &FrameRecord) -> Result<Vec<Candidate>, DetectError>;
    fn threshold(&self) -> f32;
}

/// Treats the whole frame as the face.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullFrameDetector;

impl FaceDetector for FullFrameDetector {
    fn candidates(&mut self, frame: &FrameRecord) -> Result<Vec<Candidate>, DetectError> {
        Ok(vec![Candidate::full_frame(frame)])
    }

    fn threshold(&self) -> f32 {
        0.0
    }
}

/// Largest confident candidate; area ties go to the smaller `y`, then `x`.
pub fn select_primary(candidates: &[Candidate], width: u32, height: u32, threshold: f32) -> Option<(BBox, &Candidate)> {
    candidates
        .iter()
        .filter(|c| (0.0..=1.0).contains(&c.confidence) && c.confidence >= threshold)
        .filter_map(|c| c.pixel_bbox(width, height).map(|b| (b, c)))
        .max_by_key(|(b, _)| (b.area(), std::cmp::Reverse(b.y), std::cmp::Reverse(b.x)))
}

pub fn detect_primary_face(
    frame: &FrameRecord,
    detector: &mut dyn FaceDetector,
) -> Result<Option<FaceObservation>, DetectError> {
    let candidates = detector.candidates(frame)?;
    let (w, h) = frame.image.dimensions();
    Ok(
        select_primary(&candidates, w, h, detector.threshold()).map(|(bbox, c)| FaceObservation {
            frame_index: frame.frame_index,
            bbox,
            confidence: c.confidence,
            landmarks: c.landmarks,
            crop: None,
            alignment: None,
        }),
    )
}

/// Fills `obs.crop` with a `input_size` crop: landmark-aligned onto the
/// template when landmarks are usable, otherwise the margin-expanded square
/// bbox crop.
pub fn align_and_crop(
    frame: &FrameRecord,
    mut obs: FaceObservation,
    input_size: [u32; 2],
    template: &AlignmentTemplate,
    margin: f32,
) -> FaceObservation {
    let [w, h] = input_size;
    let transform = obs.landmarks.as_ref().map(|lm| {
        if align::landmarks_degenerate(lm) {
            return None;
        }
        let src = lm.map(|[x, y]| [x as f64, y as f64]);
        align::estimate_similarity(&src, &template.scaled_to(w, h))
    });
    let (crop, method) = match transform {
        Some(Some(t)) => (align::warp(&frame.image, &t, w, h), AlignMethod::Landmarks),
        other => {
            let b = obs.bbox;
            let crop = align::bbox_crop(&frame.image, (b.x, b.y, b.w, b.h), margin, w, h);
            let method = if other.is_some() {
                AlignMethod::DegenerateFallback
            } else {
                AlignMethod::BboxCrop
            };
            (crop, method)
        }
    };
    obs.crop = Some(crop);
    obs.alignment = Some(method);
    obs
}

/// Detector selection as written in the manifest `[detector]` table.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorKind {
    Neural {
        model: PathBuf,
        threshold: f32,
        input_size: [u32; 2],
    },
    /// Script file, or a directory holding `<video stem>.json` per video.
    Stub {
        script: PathBuf,
    },
    FullFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// Bbox fallback margin as a fraction of `max(w, h)`.
    pub margin: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kind: DetectorKind::FullFrame,
            margin: DEFAULT_MARGIN,
        }
    }
}

/// Loads shared detector state once and hands out one detector per video.
pub struct DetectorFactory {
    config: DetectorConfig,
    #[cfg(feature = "onnx")]
    graph: Option<Arc<neural::NeuralGraph>>,
}

impl DetectorFactory {
    pub fn new(config: &DetectorConfig) -> Result<Self, DetectError> {
        #[cfg(feature = "onnx")]
        let graph = match &config.kind {
            DetectorKind::Neural { model, input_size, .. } => {
                Some(Arc::new(neural::NeuralGraph::load(model, *input_size)?))
            }
            _ => None,
        };
        #[cfg(not(feature = "onnx"))]
        if matches!(config.kind, DetectorKind::Neural { .. }) {
            return Err(DetectError::OnnxDisabled);
        }
        Ok(DetectorFactory {
            config: config.clone(),
            #[cfg(feature = "onnx")]
            graph,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Script used for `video` by a stub detector.
    pub fn stub_script_for(script: &Path, video: &Path) -> PathBuf {
        if script.is_dir() {
            let stem = video.file_stem().unwrap_or(video.as_os_str());
            script.join(format!("{}.json", stem.to_string_lossy()))
        } else {
            script.to_path_buf()
        }
    }

    pub fn for_video(&self, video: &Path) -> Result<Box<dyn FaceDetector>, DetectError> {
        match &self.config.kind {
            DetectorKind::FullFrame => Ok(Box::new(FullFrameDetector)),
            DetectorKind::Stub { script } => Ok(Box::new(StubDetector::load(&Self::stub_script_for(script, video))?)),
            #[cfg(feature = "onnx")]
            DetectorKind::Neural { threshold, .. } => {
                let graph = self.graph.clone().expect("graph loaded for neural detector");
                Ok(Box::new(neural::NeuralDetector::new(graph, *threshold)))
            }
            #[cfg(not(feature = "onnx"))]
            DetectorKind::Neural { .. } => Err(DetectError::OnnxDisabled),
        }
    }
}
