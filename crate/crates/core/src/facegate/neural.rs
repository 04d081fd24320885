//! ONNX face detector.
//!
//! Graph contract: one `[1, 3, H, W]` RGB input normalized as
//! `(pixel − 127) / 128`, and outputs identified by their last dimension:
//! `[1, N, 2]` class scores (face probability in column 1), `[1, N, 4]`
//! boxes as normalized `(x1, y1, x2, y2)`, and optionally `[1, N, 10]`
//! normalized landmarks `(x, y) × 5`. This matches the common
//! UltraFace/RFB export layout.

use std::path::Path;
use std::sync::Arc;

use super::{Candidate, DetectError, FaceDetector};
use crate::frameio::FrameRecord;
use crate::onnx_graph::{OnnxGraph, Output};
use crate::raster::area_resize;

const PIXEL_MEAN: f32 = 127.0;
const PIXEL_STD: f32 = 128.0;

pub(crate) struct NeuralGraph {
    graph: OnnxGraph,
    input_size: [u32; 2],
}

impl NeuralGraph {
    pub fn load(path: &Path, input_size: [u32; 2]) -> Result<Self, DetectError> {
        if !path.is_file() {
            return Err(DetectError::ModelMissing(path.to_path_buf()));
        }
        let [w, h] = input_size;
        let graph =
            OnnxGraph::load(path, [1, 3, h as usize, w as usize]).map_err(|message| DetectError::ModelLoad {
                path: path.to_path_buf(),
                message,
            })?;
        Ok(NeuralGraph { graph, input_size })
    }
}

pub struct NeuralDetector {
    graph: Arc<NeuralGraph>,
    threshold: f32,
}

impl NeuralDetector {
    pub(crate) fn new(graph: Arc<NeuralGraph>, threshold: f32) -> Self {
        NeuralDetector { graph, threshold }
    }
}

fn by_last_dim(outputs: &[Output], dim: usize) -> Option<&Output> {
    outputs.iter().find(|o| o.shape.last() == Some(&dim))
}

impl FaceDetector for NeuralDetector {
    fn candidates(&mut self, frame: &FrameRecord) -> Result<Vec<Candidate>, DetectError> {
        let [iw, ih] = self.graph.input_size;
        let resized = area_resize(&frame.image, iw, ih);
        let plane = (iw * ih) as usize;
        let mut data = vec![0f32; 3 * plane];
        for (i, p) in resized.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = (p[c] as f32 - PIXEL_MEAN) / PIXEL_STD;
            }
        }
        let outputs = self.graph.graph.run(data).map_err(DetectError::Inference)?;
        let scores =
            by_last_dim(&outputs, 2).ok_or_else(|| DetectError::Inference("no [1,N,2] score output".into()))?;
        let boxes = by_last_dim(&outputs, 4).ok_or_else(|| DetectError::Inference("no [1,N,4] box output".into()))?;
        let marks = by_last_dim(&outputs, 10);
        let n = scores.data.len() / 2;
        if boxes.data.len() != 4 * n || marks.is_some_and(|m| m.data.len() != 10 * n) {
            return Err(DetectError::Inference(
                "detector outputs disagree on candidate count".into(),
            ));
        }
        let (fw, fh) = (frame.image.width() as f32, frame.image.height() as f32);
        let mut out = Vec::new();
        for i in 0..n {
            let confidence = scores.data[2 * i + 1];
            if confidence < self.threshold {
                continue;
            }
            let b = &boxes.data[4 * i..4 * i + 4];
            let landmarks = marks.map(|m| {
                let l = &m.data[10 * i..10 * i + 10];
                std::array::from_fn(|k| [l[2 * k] * fw, l[2 * k + 1] * fh])
            });
            out.push(Candidate {
                bbox: [b[0] * fw, b[1] * fh, (b[2] - b[0]) * fw, (b[3] - b[1]) * fh],
                confidence,
                landmarks,
            });
        }
        Ok(out)
    }

    fn threshold(&self) -> f32 {
        self.threshold
    }
}
