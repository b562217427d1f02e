use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResizeStrategy {
    #[serde(rename = "stretch")]
    Stretch,
    #[serde(rename = "shorter-side-then-center-crop")]
    ShorterSideThenCenterCrop,
}

/// Description of an exported model and the preprocessing it expects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub model_id: String,
    pub architecture_tag: String,
    pub model_path: PathBuf,
    pub input_height: usize,
    pub input_width: usize,
    pub channel_means: Vec<f32>,
    pub channel_stds: Vec<f32>,
    pub resize_strategy: ResizeStrategy,
    pub class_count: usize,
}

impl ModelManifest {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))?;
        manifest.validate().map_err(|e| Error::data(path, e.to_string()))?;
        Ok(manifest)
    }

    pub fn channels(&self) -> usize {
        self.channel_means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("manifest `{}`: {m}", self.model_id)));
        if self.input_height == 0 || self.input_width == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.class_count == 0 {
            return bad("class_count must be positive".into());
        }
        if self.channel_means.is_empty() || self.channel_means.len() != self.channel_stds.len() {
            return bad("channel_means and channel_stds must be nonempty and equally long".into());
        }
        if self.channel_stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("channel_stds must be strictly positive".into());
        }
        if self.channel_means.iter().any(|m| !m.is_finite()) {
            return bad("channel_means must be finite".into());
        }
        Ok(())
    }
}

/// Resizes `raw` to the manifest's input size and normalizes each channel
/// as `(x - mean) / std`. Grayscale inputs are replicated across channels
/// when the model expects more than one.
pub fn preprocess_image(raw: &ImageTensor, manifest: &ModelManifest) -> Result<ImageTensor> {
    let channels = manifest.channels();
    let raw = if raw.channels() == channels {
        raw.clone()
    } else if raw.channels() == 1 {
        let values = raw
            .values()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, channels))
            .collect();
        ImageTensor::new(raw.height(), raw.width(), channels, values)?
    } else {
        return Err(Error::dims(format!("{channels} channels"), format!("{} channels", raw.channels())));
    };

    let (th, tw) = (manifest.input_height, manifest.input_width);
    let resized = match manifest.resize_strategy {
        ResizeStrategy::Stretch => bilinear(&raw, th, tw, 0.0, 0.0, raw.height() as f64, raw.width() as f64),
        ResizeStrategy::ShorterSideThenCenterCrop => {
            let scale = (th as f64 / raw.height() as f64).max(tw as f64 / raw.width() as f64);
            // Source window that maps onto the centered crop.
            let src_h = th as f64 / scale;
            let src_w = tw as f64 / scale;
            let top = (raw.height() as f64 - src_h) / 2.0;
            let left = (raw.width() as f64 - src_w) / 2.0;
            bilinear(&raw, th, tw, top, left, src_h, src_w)
        }
    }?;

    let mut values = resized.into_values();
    for px in values.chunks_mut(channels) {
        for (ch, v) in px.iter_mut().enumerate() {
            *v = (*v - manifest.channel_means[ch]) / manifest.channel_stds[ch];
        }
    }
    ImageTensor::new(th, tw, channels, values)
}

/// Bilinear sampling of the source window `[top, top+src_h) x [left, left+src_w)`
/// onto an `out_h x out_w` grid, pixel centers at half-integers.
fn bilinear(
    img: &ImageTensor,
    out_h: usize,
    out_w: usize,
    top: f64,
    left: f64,
    src_h: f64,
    src_w: f64,
) -> Result<ImageTensor> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    if out_h == h && out_w == w && top == 0.0 && left == 0.0 && src_h == h as f64 && src_w == w as f64 {
        return Ok(img.clone());
    }
    let sample_axis = |i: usize, out: usize, origin: f64, extent: f64, len: usize| {
        let x = origin + (i as f64 + 0.5) * extent / out as f64 - 0.5;
        let x = x.clamp(0.0, (len - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, (x - lo as f64) as f32)
    };
    let mut values = Vec::with_capacity(out_h * out_w * ch);
    for r in 0..out_h {
        let (r0, r1, fr) = sample_axis(r, out_h, top, src_h, h);
        for c in 0..out_w {
            let (c0, c1, fc) = sample_axis(c, out_w, left, src_w, w);
            for k in 0..ch {
                let a = img.pixel(r0, c0)[k] * (1.0 - fc) + img.pixel(r0, c1)[k] * fc;
                let b = img.pixel(r1, c0)[k] * (1.0 - fc) + img.pixel(r1, c1)[k] * fc;
                values.push(a * (1.0 - fr) + b * fr);
            }
        }
    }
    ImageTensor::new(out_h, out_w, ch, values)
}
