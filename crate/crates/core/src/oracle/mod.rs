//! Black-box classifier interface.
//!
//! An [`Oracle`] owns its preprocessing: raw images go through
//! [`Oracle::preprocess`] once, and every mutant is built by masking the
//! preprocessed tensor, so the baseline lives in model-input space.

mod manifest;
#[cfg(feature = "onnx")]
mod onnx;
mod synthetic;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, ImageTensor};

pub use manifest::{preprocess_image, ModelManifest, ResizeStrategy};
#[cfg(feature = "onnx")]
pub use onnx::{load_external_model, OnnxOracle};
pub use synthetic::{make_synthetic_oracle, SyntheticKind, SyntheticOracle, SyntheticOracleSpec};

/// Top class plus the full score vector it was taken from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class_index: usize,
    pub scores: Vec<f64>,
}

impl Classification {
    /// Argmax over `scores`, ties going to the lowest index.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument("empty score vector".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("non-finite score".into()));
        }
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        Ok(Self {
            class_index: best,
            scores,
        })
    }
}

/// Whether an oracle may be called from several threads at once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Concurrency {
    Shared,
    SingleThreaded,
}

pub trait Oracle: Send + Sync {
    fn model_id(&self) -> &str;

    /// Dimensions of the tensors accepted by [`Oracle::classify`].
    fn input_dims(&self) -> Dims;

    fn class_count(&self) -> usize;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Shared
    }

    /// Raw score vector for an input already in model space.
    fn scores(&self, input: &ImageTensor) -> Result<Vec<f64>>;

    /// Maps a raw decoded image into model-input space. The default accepts
    /// only images that already match [`Oracle::input_dims`].
    fn preprocess(&self, raw: &ImageTensor) -> Result<ImageTensor> {
        self.check_dims(raw)?;
        Ok(raw.clone())
    }

    fn check_dims(&self, input: &ImageTensor) -> Result<()> {
        let expected = self.input_dims();
        if input.dims() != expected {
            return Err(Error::dims(expected, input.dims()));
        }
        Ok(())
    }

    fn classify(&self, input: &ImageTensor) -> Result<Classification> {
        self.check_dims(input)?;
        let scores = self.scores(input)?;
        if scores.len() != self.class_count() {
            return Err(Error::dims(
                format!("{} scores", self.class_count()),
                format!("{} scores", scores.len()),
            ));
        }
        Classification::from_scores(scores)
    }

    fn classify_batch(&self, inputs: &[ImageTensor]) -> Result<Vec<Classification>> {
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|x| x.dims() != first.dims()) {
                return Err(Error::dims(first.dims(), bad.dims()));
            }
        }
        inputs.iter().map(|x| self.classify(x)).collect()
    }
}

/// Wraps an oracle and counts classifications.
pub struct CountingOracle<'a> {
    inner: &'a dyn Oracle,
    calls: AtomicU64,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn Oracle) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Oracle for CountingOracle<'_> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn input_dims(&self) -> Dims {
        self.inner.input_dims()
    }

    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    fn concurrency(&self) -> Concurrency {
        self.inner.concurrency()
    }

    fn scores(&self, input: &ImageTensor) -> Result<Vec<f64>> {
        self.inner.scores(input)
    }

    fn preprocess(&self, raw: &ImageTensor) -> Result<ImageTensor> {
        self.inner.preprocess(raw)
    }

    fn classify(&self, input: &ImageTensor) -> Result<Classification> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.classify(input)
    }

    fn classify_batch(&self, inputs: &[ImageTensor]) -> Result<Vec<Classification>> {
        self.calls.fetch_add(inputs.len() as u64, Ordering::Relaxed);
        self.inner.classify_batch(inputs)
    }
}
