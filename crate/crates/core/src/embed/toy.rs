//! Model-free test backend: an 8×8 luma thumbnail of the crop.

use image::RgbImage;

use super::{EmbedError, Embedder, ModelSpec};
use crate::raster::{area_resize_plane, luma_plane};

pub(super) const TOY_ID: &str = "toy";
pub const TOY_GRID: u32 = 8;

/// Luma, area-resized to 8×8, scaled to `[0, 1]`, with `1e-6` added to the
/// first component so the norm is never zero.
pub fn toy_embed(crop: &RgbImage) -> Vec<f32> {
    let (w, h) = crop.dimensions();
    let luma = luma_plane(crop);
    let mut v: Vec<f32> = area_resize_plane(&luma, w, h, TOY_GRID, TOY_GRID)
        .into_iter()
        .map(|x| (x / 255.0) as f32)
        .collect();
    v[0] += 1e-6;
    v
}

#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    spec: ModelSpec,
}

impl ToyEmbedder {
    pub fn new(spec: ModelSpec) -> Self {
        ToyEmbedder { spec }
    }
}

impl Embedder for ToyEmbedder {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn infer(&mut self, crop: &RgbImage) -> Result<Vec<f32>, EmbedError> {
        Ok(toy_embed(crop))
    }

    fn accepts_any_size(&self) -> bool {
        true
    }

    fn try_clone(&self) -> Option<Box<dyn Embedder>> {
        Some(Box::new(self.clone()))
    }
}
