//! Model registry: a JSON data file listing recognition models, their input
//! geometry, embedding width and preprocessing constants, plus the canonical
//! five-point alignment template.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

const BUILTIN_REGISTRY: &str = include_str!("../../registry/default.json");
pub const REGISTRY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read registry {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid registry {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("registry {origin}: model {id}: {message}")]
    InvalidModel {
        origin: String,
        id: String,
        message: String,
    },
    #[error("model {0:?} listed more than once")]
    DuplicateModel(String),
    #[error("unknown model {id:?}; available: {}", available.join(", "))]
    UnknownModel { id: String, available: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorLayout {
    Nchw,
    Nhwc,
}

/// Per-channel input normalization: `(pixel * scale - mean[c]) / std[c]`,
/// channels taken in `channel_order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    pub scale: f32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
    pub channel_order: ChannelOrder,
    pub layout: TensorLayout,
}

impl Preprocessing {
    /// Normalized input tensor data for one image in `layout` order
    /// (batch dimension of 1 implied).
    pub fn tensor_data(&self, img: &image::RgbImage) -> Vec<f32> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let order: [usize; 3] = match self.channel_order {
            ChannelOrder::Rgb => [0, 1, 2],
            ChannelOrder::Bgr => [2, 1, 0],
        };
        let value = |x: usize, y: usize, c: usize| {
            let src = order[c];
            let p = img.get_pixel(x as u32, y as u32)[src] as f32;
            (p * self.scale - self.mean[c]) / self.std[c]
        };
        let mut out = vec![0f32; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let idx = match self.layout {
                        TensorLayout::Nchw => c * w * h + y * w + x,
                        TensorLayout::Nhwc => (y * w + x) * 3 + c,
                    };
                    out[idx] = value(x, y, c);
                }
            }
        }
        out
    }

    /// Tensor shape for a `width × height` input.
    pub fn tensor_shape(&self, width: u32, height: u32) -> [usize; 4] {
        let (w, h) = (width as usize, height as usize);
        match self.layout {
            TensorLayout::Nchw => [1, 3, h, w],
            TensorLayout::Nhwc => [1, h, w, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    /// `[width, height]` in pixels.
    pub input_size: [u32; 2],
    pub embedding_dim: usize,
    pub preprocessing: Preprocessing,
    /// ONNX graph; absent only for built-in backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

/// Five reference points (left eye, right eye, nose, left and right mouth
/// corner) in a `size` canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentTemplate {
    pub size: [u32; 2],
    pub points: [[f32; 2]; 5],
}

impl AlignmentTemplate {
    /// Template points rescaled to a `width × height` crop.
    pub fn scaled_to(&self, width: u32, height: u32) -> [[f64; 2]; 5] {
        let sx = width as f64 / self.size[0] as f64;
        let sy = height as f64 / self.size[1] as f64;
        self.points.map(|[x, y]| [x as f64 * sx, y as f64 * sy])
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    format_version: u32,
    #[serde(default)]
    alignment_template: Option<AlignmentTemplate>,
    models: Vec<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRegistry {
    pub models: Vec<ModelSpec>,
    pub template: AlignmentTemplate,
    /// Hex SHA-256 of the registry file bytes.
    pub hash: String,
}

impl ModelRegistry {
    /// The registry shipped with the toolkit (toy model only).
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_REGISTRY, None, "<builtin>").expect("builtin registry is valid")
    }

    /// Loads a registry file. Relative weight paths resolve against the
    /// file's directory. The built-in toy model is added when the file does
    /// not define one.
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reg = Self::parse(&text, path.parent(), &path.display().to_string())?;
        let builtin = Self::builtin();
        if reg.get("toy").is_none() {
            reg.models.extend(builtin.models);
        }
        Ok(reg)
    }

    pub fn parse(text: &str, base_dir: Option<&Path>, origin: &str) -> Result<Self, RegistryError> {
        let file: RegistryFile = serde_json::from_str(text).map_err(|e| RegistryError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        if file.format_version != REGISTRY_FORMAT_VERSION {
            return Err(RegistryError::Parse {
                origin: origin.to_string(),
                message: format!(
                    "format_version {} unsupported (expected {REGISTRY_FORMAT_VERSION})",
                    file.format_version
                ),
            });
        }
        let template = match file.alignment_template {
            Some(t) => t,
            None if origin == "<builtin>" => {
                return Err(RegistryError::Parse {
                    origin: origin.into(),
                    message: "missing alignment_template".into(),
                })
            }
            None => Self::builtin().template,
        };
        let mut seen = HashSet::new();
        let mut models = Vec::with_capacity(file.models.len());
        for mut m in file.models {
            if !seen.insert(m.id.clone()) {
                return Err(RegistryError::DuplicateModel(m.id));
            }
            validate_model(&m).map_err(|message| RegistryError::InvalidModel {
                origin: origin.to_string(),
                id: m.id.clone(),
                message,
            })?;
            if let (Some(w), Some(base)) = (&m.weights, base_dir) {
                if w.is_relative() {
                    m.weights = Some(base.join(w));
                }
            }
            models.push(m);
        }
        Ok(ModelRegistry {
            models,
            template,
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    pub fn get(&self, id: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    /// Resolves each id to exactly one spec, in the given order.
    pub fn resolve(&self, ids: &[String]) -> Result<Vec<ModelSpec>, RegistryError> {
        let mut seen = HashSet::new();
        ids.iter()
            .map(|id| {
                if !seen.insert(id.as_str()) {
                    return Err(RegistryError::DuplicateModel(id.clone()));
                }
                self.get(id).cloned().ok_or_else(|| RegistryError::UnknownModel {
                    id: id.clone(),
                    available: self.ids(),
                })
            })
            .collect()
    }
}

fn validate_model(m: &ModelSpec) -> Result<(), String> {
    if m.embedding_dim < 2 {
        return Err(format!("embedding_dim {} < 2", m.embedding_dim));
    }
    let [w, h] = m.input_size;
    if w == 0 || h == 0 {
        return Err("input_size must be non-empty".into());
    }
    if m.weights.is_some() && (w < 16 || h < 16) {
        return Err(format!("input_size {w}x{h} below 16x16"));
    }
    if m.preprocessing.std.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err("preprocessing std must be finite and nonzero".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_has_toy_and_template() {
        let reg = ModelRegistry::builtin();
        let toy = reg.get("toy").unwrap();
        assert_eq!(toy.embedding_dim, 64);
        assert!(toy.weights.is_none());
        assert_eq!(reg.template.size, [112, 112]);
        assert_eq!(reg.hash.len(), 64);
    }

    #[test]
    fn resolve_lookup_duplicates_and_unknowns() {
        let reg = ModelRegistry::builtin();
        assert_eq!(reg.resolve(&["toy".into()]).unwrap().len(), 1);
        assert!(matches!(
            reg.resolve(&["toy".into(), "toy".into()]),
            Err(RegistryError::DuplicateModel(_))
        ));
        let err = reg.resolve(&["vggface-typo".into()]).unwrap_err();
        assert!(err.to_string().contains("toy"), "{err}");
    }

    #[test]
    fn external_registry_resolves_weights_and_adds_toy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        std::fs::write(
            &path,
            r#"{"format_version":1,"models":[{"id":"arcface","input_size":[112,112],"embedding_dim":512,
               "preprocessing":{"scale":1.0,"mean":[127.5,127.5,127.5],"std":[127.5,127.5,127.5],
               "channel_order":"rgb","layout":"nchw"},"weights":"arcface.onnx"}]}"#,
        )
        .unwrap();
        let reg = ModelRegistry::load(&path).unwrap();
        assert_eq!(
            reg.get("arcface").unwrap().weights.as_deref(),
            Some(dir.path().join("arcface.onnx").as_path())
        );
        assert!(reg.get("toy").is_some());
        assert_eq!(reg.template, ModelRegistry::builtin().template);
    }

    #[test]
    fn rejects_bad_entries() {
        let bad_dim = r#"{"format_version":1,"models":[{"id":"m","input_size":[112,112],"embedding_dim":1,
            "preprocessing":{"scale":1.0,"mean":[0,0,0],"std":[1,1,1],"channel_order":"rgb","layout":"nchw"},"weights":"m.onnx"}]}"#;
        assert!(matches!(
            ModelRegistry::parse(bad_dim, None, "t"),
            Err(RegistryError::InvalidModel { .. })
        ));
        let unknown_field = r#"{"format_version":1,"models":[],"extra":1}"#;
        assert!(matches!(
            ModelRegistry::parse(unknown_field, None, "t"),
            Err(RegistryError::Parse { .. })
        ));
        let version = r#"{"format_version":9,"models":[]}"#;
        assert!(matches!(
            ModelRegistry::parse(version, None, "t"),
            Err(RegistryError::Parse { .. })
        ));
    }

    #[test]
    fn preprocessing_layouts_and_channel_order() {
        let img = image::RgbImage::from_fn(2, 1, |x, _| image::Rgb([10 * (x as u8 + 1), 100, 200]));
        let mut p = Preprocessing {
            scale: 1.0,
            mean: [0.0, 0.0, 100.0],
            std: [1.0, 2.0, 4.0],
            channel_order: ChannelOrder::Rgb,
            layout: TensorLayout::Nchw,
        };
        assert_eq!(p.tensor_data(&img), vec![10.0, 20.0, 50.0, 50.0, 25.0, 25.0]);
        assert_eq!(p.tensor_shape(2, 1), [1, 3, 1, 2]);
        p.layout = TensorLayout::Nhwc;
        assert_eq!(p.tensor_data(&img), vec![10.0, 50.0, 25.0, 20.0, 50.0, 25.0]);
        p.channel_order = ChannelOrder::Bgr;
        // channel 0 now reads blue
        assert_eq!(p.tensor_data(&img)[0], 200.0);
    }

    #[test]
    fn template_scaling() {
        let t = ModelRegistry::builtin().template;
        let s = t.scaled_to(224, 224);
        assert!((s[0][0] - 2.0 * 38.2946f32 as f64).abs() < 1e-9);
    }
}
