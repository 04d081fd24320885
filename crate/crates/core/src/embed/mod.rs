//! Face-crop embedding: model registry, pluggable backends and the on-disk
//! embedding cache.

pub mod cache;
#[cfg(feature = "onnx")]
mod onnx;
mod registry;
mod toy;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

use crate::facegate::FaceObservation;
pub use registry::{
    AlignmentTemplate, ChannelOrder, ModelRegistry, ModelSpec, Preprocessing, RegistryError, TensorLayout,
};
pub use toy::{toy_embed, ToyEmbedder, TOY_GRID};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("weights for model {model} not found at {}", path.display())]
    WeightsMissing { model: String, path: PathBuf },
    #[error("model {model} has no weights file and no built-in backend")]
    NoBackend { model: String },
    #[error("model {model} needs ONNX support; rebuild with the `onnx` feature")]
    OnnxDisabled { model: String },
    #[error("crop is {got:?}, model {model} expects {expected:?}")]
    CropSize {
        model: String,
        got: (u32, u32),
        expected: (u32, u32),
    },
    #[error("model {model} returned {got} values, registry declares {expected}")]
    DimensionMismatch { model: String, got: usize, expected: usize },
    #[error("model {model} produced a zero-norm embedding")]
    ZeroNorm { model: String },
    #[error("model {model} produced a non-finite embedding")]
    NonFinite { model: String },
    #[error("inference failed for model {model}: {message}")]
    Inference { model: String, message: String },
    #[error("face observation for frame {0} carries no crop")]
    MissingCrop(u64),
}

impl EmbedError {
    /// Output-level failures that drop one frame instead of aborting the video.
    pub fn is_droppable(&self) -> bool {
        matches!(self, EmbedError::ZeroNorm { .. } | EmbedError::NonFinite { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub model_id: String,
    pub frame_index: u64,
}

/// Embeddings of one video's valid frames under one model, in frame order.
///
/// `embeddings.len() + skipped_frames + dropped_frames == total_frames`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub video_id: String,
    pub model_id: String,
    pub embeddings: Vec<Embedding>,
    /// Frames examined by the face gate.
    pub total_frames: u64,
    /// Frames without a detectable face.
    pub skipped_frames: u64,
    /// Frames whose embedding was unusable (zero norm or non-finite).
    pub dropped_frames: u64,
}

impl EmbeddingSet {
    pub fn position_of(&self, frame_index: u64) -> Option<usize> {
        self.embeddings
            .binary_search_by_key(&frame_index, |e| e.frame_index)
            .ok()
    }

    pub fn valid_frames(&self) -> usize {
        self.embeddings.len()
    }

    pub fn frame_indices(&self) -> Vec<u64> {
        self.embeddings.iter().map(|e| e.frame_index).collect()
    }
}

/// An embedding backend. Instances are not shared between workers.
pub trait Embedder: Send {
    fn spec(&self) -> &ModelSpec;

    /// Raw model output for one crop (no validation).
    fn infer(&mut self, crop: &RgbImage) -> Result<Vec<f32>, EmbedError>;

    /// Whether crops of any size are accepted.
    fn accepts_any_size(&self) -> bool {
        false
    }

    /// A new instance sharing loaded weights, when the backend supports it.
    fn try_clone(&self) -> Option<Box<dyn Embedder>> {
        None
    }
}

/// Creates a backend for `spec`.
pub fn new_embedder(spec: &ModelSpec) -> Result<Box<dyn Embedder>, EmbedError> {
    match &spec.weights {
        None if spec.id == toy::TOY_ID => Ok(Box::new(ToyEmbedder::new(spec.clone()))),
        None => Err(EmbedError::NoBackend { model: spec.id.clone() }),
        Some(path) => {
            if !path.is_file() {
                return Err(EmbedError::WeightsMissing {
                    model: spec.id.clone(),
                    path: path.clone(),
                });
            }
            #[cfg(feature = "onnx")]
            {
                Ok(Box::new(onnx::OnnxEmbedder::load(spec.clone())?))
            }
            #[cfg(not(feature = "onnx"))]
            {
                Err(EmbedError::OnnxDisabled { model: spec.id.clone() })
            }
        }
    }
}

/// Embeds one crop and validates the result against the model spec.
pub fn embed_crop(crop: &RgbImage, embedder: &mut dyn Embedder, frame_index: u64) -> Result<Embedding, EmbedError> {
    let spec = embedder.spec();
    let model = spec.id.clone();
    let expected = (spec.input_size[0], spec.input_size[1]);
    let dim = spec.embedding_dim;
    if !embedder.accepts_any_size() && crop.dimensions() != expected {
        return Err(EmbedError::CropSize {
            model,
            got: crop.dimensions(),
            expected,
        });
    }
    let vector = embedder.infer(crop)?;
    if vector.len() != dim {
        return Err(EmbedError::DimensionMismatch {
            model,
            got: vector.len(),
            expected: dim,
        });
    }
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite { model });
    }
    if vector.iter().all(|&v| v == 0.0) {
        return Err(EmbedError::ZeroNorm { model });
    }
    Ok(Embedding {
        vector,
        model_id: model,
        frame_index,
    })
}

/// Frame counts from the face gate for one video.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GateCounts {
    pub examined: u64,
    pub skipped: u64,
}

/// Embeds every observation of a video. Zero-norm and non-finite outputs
/// drop their frame and are counted; other failures abort.
pub fn embed_video<I>(
    observations: I,
    embedder: &mut dyn Embedder,
    video_id: &str,
    gate: GateCounts,
) -> Result<EmbeddingSet, EmbedError>
where
    I: IntoIterator<Item = FaceObservation>,
{
    let mut embeddings = Vec::new();
    let mut dropped = 0;
    for obs in observations {
        let crop = obs.crop.as_ref().ok_or(EmbedError::MissingCrop(obs.frame_index))?;
        match embed_crop(crop, embedder, obs.frame_index) {
            Ok(e) => embeddings.push(e),
            Err(e) if e.is_droppable() => {
                log::warn!("{video_id}: frame {} dropped: {e}", obs.frame_index);
                dropped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    debug_assert!(embeddings.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
    Ok(EmbeddingSet {
        video_id: video_id.to_string(),
        model_id: embedder.spec().id.clone(),
        embeddings,
        total_frames: gate.examined,
        skipped_frames: gate.skipped,
        dropped_frames: dropped,
    })
}
