//! Distance metrics, the two per-video comparison modes and per-source
//! aggregation.
//!
//! Distances are accumulated in `f64` from `f32` embeddings. All statistics
//! are population statistics over a fully defined comparison set, so a score
//! is reproducible from `(EmbeddingSet, config, seed)` alone.

mod sampling;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::embed::EmbeddingSet;
use crate::manifest::ReferenceChoice;
pub use sampling::{fnv1a64, sample_pairs, splitmix64, video_stream_seed, SplitMix64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding set is empty")]
    Empty,
    #[error("reference frame {0} is not among the valid frames")]
    MissingReference(u64),
    #[error("reference index {index} is out of range ({valid} valid frames)")]
    ReferenceOutOfRange { index: u64, valid: usize },
    #[error("video {video_id} has {valid} valid frame(s); at least 2 are required")]
    TooFewFrames { video_id: String, valid: usize },
    #[error("no scorable videos ({unscorable} unscorable)")]
    NoScorableVideos { unscorable: usize },
    #[error("scores mix different models, metrics or modes")]
    MixedScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Cosine,
    Euclidean,
    EuclideanL2,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Cosine, MetricKind::Euclidean, MetricKind::EuclideanL2];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Cosine => "cosine",
            MetricKind::Euclidean => "euclidean",
            MetricKind::EuclideanL2 => "euclidean_l2",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(MetricKind::Cosine),
            "euclidean" => Ok(MetricKind::Euclidean),
            "euclidean_l2" => Ok(MetricKind::EuclideanL2),
            other => Err(format!(
                "unknown metric {other:?} (expected cosine, euclidean or euclidean_l2)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Mode1,
    Mode2,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Mode1 => "mode1",
            ScoreMode::Mode2 => "mode2",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[cfg(test)]
fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Distance between two embeddings; lower means more similar.
///
/// * cosine: `1 - a·b / (|a||b|)`, clamped to `[0, 2]`
/// * euclidean: `|a - b|`
/// * euclidean_l2: `|a/|a| - b/|b||`
pub fn distance(a: &[f32], b: &[f32], metric: MetricKind) -> Result<f64, ScoreError> {
    if a.len() != b.len() {
        return Err(ScoreError::DimensionMismatch(a.len(), b.len()));
    }
    let (aa, bb) = (dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        return Err(ScoreError::ZeroNorm);
    }
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    let d = match metric {
        // sqrt(aa * bb) rather than na * nb: identical inputs give exactly 0
        MetricKind::Cosine => (1.0 - dot(a, b) / (aa * bb).sqrt()).clamp(0.0, 2.0),
        MetricKind::Euclidean => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        MetricKind::EuclideanL2 => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x as f64 / na - y as f64 / nb;
                d * d
            })
            .sum::<f64>()
            .sqrt(),
    };
    Ok(d)
}

/// Score of one video under one (model, metric, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore {
    pub video_id: String,
    pub model_id: String,
    pub metric: MetricKind,
    pub mode: ScoreMode,
    pub mean: f64,
    pub std: f64,
    pub n_comparisons: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_index: Option<u64>,
}

/// A video with fewer than two valid frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnscorableVideo {
    pub video_id: String,
    pub model_id: String,
    pub metric: MetricKind,
    pub mode: ScoreMode,
    pub valid_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VideoScore {
    Scored(ConsistencyScore),
    Unscorable(UnscorableVideo),
}

impl VideoScore {
    fn key(&self) -> (&str, MetricKind, ScoreMode) {
        match self {
            VideoScore::Scored(s) => (&s.model_id, s.metric, s.mode),
            VideoScore::Unscorable(u) => (&u.model_id, u.metric, u.mode),
        }
    }

    pub fn video_id(&self) -> &str {
        match self {
            VideoScore::Scored(s) => &s.video_id,
            VideoScore::Unscorable(u) => &u.video_id,
        }
    }
}

/// Population mean and std. The mean is accumulated as offsets from the
/// first value, so a constant sequence yields that value exactly.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let base = values[0];
    let mean = base + values.iter().map(|v| v - base).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Picks the Mode 1 reference frame and returns its frame index.
pub fn select_reference(set: &EmbeddingSet, choice: ReferenceChoice, metric: MetricKind) -> Result<u64, ScoreError> {
    let first = set.embeddings.first().ok_or(ScoreError::Empty)?;
    match choice {
        ReferenceChoice::FirstValid => Ok(first.frame_index),
        ReferenceChoice::Index(k) => usize::try_from(k)
            .ok()
            .and_then(|k| set.embeddings.get(k))
            .map(|e| e.frame_index)
            .ok_or(ScoreError::ReferenceOutOfRange {
                index: k,
                valid: set.embeddings.len(),
            }),
        ReferenceChoice::Medoid => {
            let n = set.embeddings.len();
            if n == 1 {
                return Ok(first.frame_index);
            }
            let mut best: Option<(f64, u64)> = None;
            for (i, ei) in set.embeddings.iter().enumerate() {
                let mut total = 0.0;
                for (j, ej) in set.embeddings.iter().enumerate() {
                    if i != j {
                        total += distance(&ei.vector, &ej.vector, metric)?;
                    }
                }
                let mean = total / (n - 1) as f64;
                // ascending frame order, strict improvement keeps the lowest index on ties
                if best.is_none_or(|(m, _)| mean < m) {
                    best = Some((mean, ei.frame_index));
                }
            }
            Ok(best.expect("non-empty").1)
        }
    }
}

/// Mode 1: every valid frame against the reference frame.
///
/// The reference's self-comparison is excluded unless `include_self` is set.
pub fn score_mode1(
    set: &EmbeddingSet,
    reference: u64,
    metric: MetricKind,
    include_self: bool,
) -> Result<ConsistencyScore, ScoreError> {
    let n = set.embeddings.len();
    if n < 2 {
        return Err(ScoreError::TooFewFrames {
            video_id: set.video_id.clone(),
            valid: n,
        });
    }
    let ref_pos = set
        .position_of(reference)
        .ok_or(ScoreError::MissingReference(reference))?;
    let anchor = &set.embeddings[ref_pos].vector;
    let distances = set
        .embeddings
        .iter()
        .enumerate()
        .filter(|(i, _)| include_self || *i != ref_pos)
        .map(|(_, e)| distance(&e.vector, anchor, metric))
        .collect::<Result<Vec<_>, _>>()?;
    let (mean, std) = mean_std(&distances);
    Ok(ConsistencyScore {
        video_id: set.video_id.clone(),
        model_id: set.model_id.clone(),
        metric,
        mode: ScoreMode::Mode1,
        mean,
        std,
        n_comparisons: distances.len(),
        reference_index: Some(reference),
    })
}

/// Mode 2: seeded random frame pairs.
pub fn score_mode2(
    set: &EmbeddingSet,
    num_pairs: usize,
    seed: u64,
    metric: MetricKind,
) -> Result<ConsistencyScore, ScoreError> {
    let pairs = sample_pairs(set.embeddings.len(), num_pairs, seed, &set.video_id)?;
    let distances = pairs
        .iter()
        .map(|&(i, j)| distance(&set.embeddings[i].vector, &set.embeddings[j].vector, metric))
        .collect::<Result<Vec<_>, _>>()?;
    let (mean, std) = if distances.is_empty() {
        (0.0, 0.0)
    } else {
        mean_std(&distances)
    };
    Ok(ConsistencyScore {
        video_id: set.video_id.clone(),
        model_id: set.model_id.clone(),
        metric,
        mode: ScoreMode::Mode2,
        mean,
        std,
        n_comparisons: num_pairs,
        reference_index: None,
    })
}

/// Mean of per-video means for one (source, model, metric, mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceAggregate {
    pub source_name: String,
    pub model_id: String,
    pub metric: MetricKind,
    pub mode: ScoreMode,
    pub mean_of_video_means: f64,
    /// Population std of the per-video means.
    pub std_of_video_means: f64,
    pub per_video: Vec<ConsistencyScore>,
    pub n_unscorable: usize,
}

/// Unweighted mean of per-video means; unscorable videos are counted and
/// excluded.
pub fn aggregate_source(source_name: &str, scores: &[VideoScore]) -> Result<SourceAggregate, ScoreError> {
    let first = scores.first().ok_or(ScoreError::NoScorableVideos { unscorable: 0 })?;
    let key = first.key();
    if scores.iter().any(|s| s.key() != key) {
        return Err(ScoreError::MixedScores);
    }
    let per_video: Vec<ConsistencyScore> = scores
        .iter()
        .filter_map(|s| match s {
            VideoScore::Scored(c) => Some(c.clone()),
            VideoScore::Unscorable(_) => None,
        })
        .collect();
    let n_unscorable = scores.len() - per_video.len();
    if per_video.is_empty() {
        return Err(ScoreError::NoScorableVideos {
            unscorable: n_unscorable,
        });
    }
    let means: Vec<f64> = per_video.iter().map(|s| s.mean).collect();
    let (mean, std) = mean_std(&means);
    Ok(SourceAggregate {
        source_name: source_name.to_string(),
        model_id: key.0.to_string(),
        metric: key.1,
        mode: key.2,
        mean_of_video_means: mean,
        std_of_video_means: std,
        per_video,
        n_unscorable,
    })
}
