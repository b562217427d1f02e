//! Minimal sufficient pixel set (MPS) extraction for black-box image
//! classifiers, plus the geometric and statistical machinery used to compare
//! MPSs across models.
//!
//! The flow for one `(model, image)` pair is:
//!
//! 1. [`oracle`] turns a raw image into the model's input tensor and
//!    classifies it.
//! 2. [`responsibility`] runs a randomized occlusion search built on the
//!    partitions and mutants in [`occlusion`], producing a per-pixel
//!    responsibility landscape.
//! 3. [`extraction`] adds pixels over the baseline in landscape order until
//!    the original class is reproduced.
//!
//! [`setmetrics`] and [`stats`] compare the resulting masks, and [`pipeline`]
//! ties everything together for multi-model runs with persisted records.

pub mod error;
pub mod extraction;
pub mod occlusion;
pub mod oracle;
pub mod pipeline;
pub mod responsibility;
pub mod setmetrics;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use extraction::{area_ratio, extract_mps, rank_pixels, verify_sufficiency, Extraction, MpsRecord};
pub use responsibility::{build_landscape, ResponsibilityLandscape, SearchConfig};
pub use occlusion::{BaselineSpec, Partition, Region, SubsetMutant};
pub use oracle::{Classification, Oracle};

pub use tensor::{ImageTensor, PixelMask};

/// Version string embedded in persisted records.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
