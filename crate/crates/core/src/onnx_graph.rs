//! Thin wrapper over a tract plan with a fixed single-image input.

use std::path::Path;
use std::sync::Arc;
use tract_onnx::prelude::*;

#[derive(Clone)]
pub(crate) struct OnnxGraph {
    plan: Arc<TypedRunnableModel>,
    input_shape: [usize; 4],
}

/// One graph output, flattened.
pub(crate) struct Output {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl OnnxGraph {
    pub fn load(path: &Path, input_shape: [usize; 4]) -> Result<Self, String> {
        let plan = tract_onnx::onnx()
            .model_for_path(path)
            .and_then(|m| m.with_input_fact(0, f32::fact(input_shape).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| format!("{}: {e:#}", path.display()))?;
        Ok(OnnxGraph { plan, input_shape })
    }

    pub fn run(&self, data: Vec<f32>) -> Result<Vec<Output>, String> {
        let input = Tensor::from_shape(&self.input_shape, &data).map_err(|e| e.to_string())?;
        let outputs = self.plan.run(tvec!(input.into())).map_err(|e| format!("{e:#}"))?;
        outputs
            .iter()
            .map(|t| {
                let t = t.cast_to::<f32>().map_err(|e| e.to_string())?;
                let data = t
                    .to_plain_array_view::<f32>()
                    .map_err(|e| e.to_string())?
                    .iter()
                    .copied()
                    .collect();
                Ok(Output {
                    shape: t.shape().to_vec(),
                    data,
                })
            })
            .collect()
    }
}
