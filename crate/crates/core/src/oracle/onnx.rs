//! ONNX-backed oracle built on tract.

use std::sync::Arc;

use tract_onnx::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Dims, ImageTensor};

use super::{preprocess_image, ModelManifest, Oracle};

type Plan = Arc<TypedRunnableModel>;

/// A model graph with one `1 x C x H x W` float input and one score output.
pub struct OnnxOracle {
    manifest: ModelManifest,
    plan: Plan,
}

impl std::fmt::Debug for OnnxOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxOracle").field("manifest", &self.manifest).finish()
    }
}

/// Loads and optimizes the graph named by `manifest`, pinning its input to
/// the manifest's dimensions.
pub fn load_external_model(manifest: &ModelManifest) -> Result<OnnxOracle> {
    manifest.validate()?;
    let backend = |message: String| Error::Backend {
        model_id: manifest.model_id.clone(),
        path: manifest.model_path.clone(),
        message,
    };
    if !manifest.model_path.is_file() {
        return Err(backend(format!("model file {} not found", manifest.model_path.display())));
    }
    let shape = [1, manifest.channels(), manifest.input_height, manifest.input_width];
    let model = tract_onnx::onnx()
        .model_for_path(&manifest.model_path)
        .map_err(|e| backend(format!("cannot parse graph: {e:#}")))?;
    if model.inputs.len() != 1 || model.outputs.len() != 1 {
        return Err(backend(format!(
            "expected one input and one output, graph has {} and {}",
            model.inputs.len(),
            model.outputs.len()
        )));
    }
    let typed = model
        .with_input_fact(0, f32::fact(shape).into())
        .and_then(|m| m.into_optimized())
        .map_err(|e| backend(format!("graph does not accept input {shape:?}: {e:#}")))?;
    let out_fact = typed
        .output_fact(0)
        .map_err(|e| backend(format!("{e:#}")))?
        .clone();
    if let Some(concrete) = out_fact.shape.as_concrete() {
        let len: usize = concrete.iter().product();
        if len != manifest.class_count {
            return Err(backend(format!(
                "graph output {concrete:?} has {len} scores, manifest says {}",
                manifest.class_count
            )));
        }
    }
    let plan = typed
        .into_runnable()
        .map_err(|e| backend(format!("cannot build execution plan: {e:#}")))?;
    Ok(OnnxOracle {
        manifest: manifest.clone(),
        plan,
    })
}

impl OnnxOracle {
    pub fn manifest(&self) -> &ModelManifest {
        &self.manifest
    }

    fn backend(&self, message: String) -> Error {
        Error::Backend {
            model_id: self.manifest.model_id.clone(),
            path: self.manifest.model_path.clone(),
            message,
        }
    }
}

impl Oracle for OnnxOracle {
    fn model_id(&self) -> &str {
        &self.manifest.model_id
    }

    fn input_dims(&self) -> Dims {
        Dims {
            height: self.manifest.input_height,
            width: self.manifest.input_width,
            channels: self.manifest.channels(),
        }
    }

    fn class_count(&self) -> usize {
        self.manifest.class_count
    }

    fn preprocess(&self, raw: &ImageTensor) -> Result<ImageTensor> {
        preprocess_image(raw, &self.manifest)
    }

    fn scores(&self, input: &ImageTensor) -> Result<Vec<f64>> {
        self.check_dims(input)?;
        let (h, w, c) = (input.height(), input.width(), input.channels());
        // HWC -> NCHW
        let mut chw = vec![0f32; h * w * c];
        for (i, px) in input.values().chunks(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                chw[ch * h * w + i] = v;
            }
        }
        let tensor = Tensor::from_shape(&[1, c, h, w], &chw).map_err(|e| self.backend(format!("{e:#}")))?;
        let outputs = self
            .plan
            .run(tvec!(tensor.into()))
            .map_err(|e| self.backend(format!("inference failed: {e:#}")))?;
        let view = outputs[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| self.backend(format!("unexpected output type: {e:#}")))?;
        Ok(view.iter().map(|&v| f64::from(v)).collect())
    }
}
