use image::RgbImage;

use super::{EmbedError, Embedder, ModelSpec};
use crate::onnx_graph::OnnxGraph;

/// Recognition model exported to ONNX. The first graph output is the
/// embedding; any batch dimension of 1 is flattened away.
#[derive(Clone)]
pub(super) struct OnnxEmbedder {
    spec: ModelSpec,
    graph: OnnxGraph,
}

impl OnnxEmbedder {
    pub fn load(spec: ModelSpec) -> Result<Self, EmbedError> {
        let weights = spec
            .weights
            .clone()
            .ok_or_else(|| EmbedError::NoBackend { model: spec.id.clone() })?;
        let shape = spec.preprocessing.tensor_shape(spec.input_size[0], spec.input_size[1]);
        let graph = OnnxGraph::load(&weights, shape).map_err(|message| EmbedError::Inference {
            model: spec.id.clone(),
            message,
        })?;
        Ok(OnnxEmbedder { spec, graph })
    }
}

impl Embedder for OnnxEmbedder {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn infer(&mut self, crop: &RgbImage) -> Result<Vec<f32>, EmbedError> {
        let data = self.spec.preprocessing.tensor_data(crop);
        let mut outputs = self.graph.run(data).map_err(|message| EmbedError::Inference {
            model: self.spec.id.clone(),
            message,
        })?;
        if outputs.is_empty() {
            return Err(EmbedError::Inference {
                model: self.spec.id.clone(),
                message: "graph has no outputs".into(),
            });
        }
        Ok(outputs.swap_remove(0).data)
    }

    fn try_clone(&self) -> Option<Box<dyn Embedder>> {
        Some(Box::new(self.clone()))
    }
}
