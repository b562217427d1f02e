//! Turning a responsibility landscape into a minimal sufficient pixel set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occlusion::{composite, BaselineSpec};
use crate::oracle::Oracle;
use crate::responsibility::ResponsibilityLandscape;
use crate::tensor::{ImageTensor, PixelMask};

/// Pixels by descending score, ties in row-major order.
pub fn rank_pixels(landscape: &ResponsibilityLandscape) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..landscape.scores.len()).collect();
    // stable sort keeps row-major order among equal scores
    order.sort_by(|&a, &b| landscape.scores[b].total_cmp(&landscape.scores[a]));
    order
        .into_iter()
        .map(|i| (i / landscape.width, i % landscape.width))
        .collect()
}

/// Result of one extraction, before it is tied to a model and image.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub mask: PixelMask,
    pub target_class: usize,
    /// The all-baseline image already yields the target class.
    pub degenerate: bool,
    pub oracle_calls: usize,
}

fn prefix_mask(h: usize, w: usize, ranked: &[(usize, usize)], len: usize) -> PixelMask {
    let mut mask = PixelMask::new(h, w, false);
    for &(r, c) in &ranked[..len] {
        mask.set(r, c, true);
    }
    mask
}

/// Adds pixels over the baseline in landscape order, `ceil(chunk_fraction *
/// H * W)` at a time, until the mutant classifies as `target_class`, then
/// binary-searches the last chunk for the shortest passing prefix.
///
/// The returned mask is prefix-minimal: dropping its lowest-ranked pixel
/// loses the class. The full prefix is the original image, so it is never
/// queried.
pub fn extract_mps(
    image: &ImageTensor,
    landscape: &ResponsibilityLandscape,
    oracle: &dyn Oracle,
    target_class: usize,
    baseline: &BaselineSpec,
    chunk_fraction: f64,
) -> Result<Extraction> {
    if !(chunk_fraction > 0.0 && chunk_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("chunk_fraction {chunk_fraction} outside (0, 1]")));
    }
    let (h, w) = (image.height(), image.width());
    if landscape.height != h || landscape.width != w {
        return Err(Error::dims(format!("{h}x{w} landscape"), format!("{}x{}", landscape.height, landscape.width)));
    }
    let total = h * w;
    let ranked = rank_pixels(landscape);
    let mut calls = 0usize;
    let mut passes = |len: usize| -> Result<bool> {
        if len == total {
            return Ok(true);
        }
        calls += 1;
        let mutant = composite(image, &prefix_mask(h, w, &ranked, len), baseline)?;
        Ok(oracle.classify(&mutant)?.class_index == target_class)
    };

    if passes(0)? {
        return Ok(Extraction {
            mask: PixelMask::new(h, w, false),
            target_class,
            degenerate: true,
            oracle_calls: calls,
        });
    }

    let chunk = ((chunk_fraction * total as f64).ceil() as usize).clamp(1, total);
    let mut failing = 0usize;
    let mut passing = total;
    let mut boundary = chunk;
    while boundary < total {
        if passes(boundary)? {
            passing = boundary;
            break;
        }
        failing = boundary;
        boundary += chunk;
    }
    // invariant: prefix `failing` fails, prefix `passing` passes
    while passing - failing > 1 {
        let mid = failing + (passing - failing) / 2;
        if passes(mid)? {
            passing = mid;
        } else {
            failing = mid;
        }
    }

    Ok(Extraction {
        mask: prefix_mask(h, w, &ranked, passing),
        target_class,
        degenerate: false,
        oracle_calls: calls,
    })
}

/// Fraction of the grid covered by the mask.
pub fn area_ratio(mask: &PixelMask) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.area() as f64 / mask.len() as f64
}

/// One extracted MPS for a `(model, image)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpsRecord {
    pub model_id: String,
    pub image_id: String,
    #[serde(skip)]
    pub mask: PixelMask,
    pub area_ratio: f64,
    pub predicted_class: usize,
    pub ground_truth: Option<usize>,
    pub correct: Option<bool>,
    pub degenerate: bool,
    pub oracle_calls_used: usize,
}

impl MpsRecord {
    pub fn new(
        model_id: impl Into<String>,
        image_id: impl Into<String>,
        extraction: Extraction,
        ground_truth: Option<usize>,
        oracle_calls_used: usize,
    ) -> Self {
        let mut record = Self {
            model_id: model_id.into(),
            image_id: image_id.into(),
            area_ratio: area_ratio(&extraction.mask),
            mask: extraction.mask,
            predicted_class: extraction.target_class,
            ground_truth: None,
            correct: None,
            degenerate: extraction.degenerate,
            oracle_calls_used,
        };
        record.set_ground_truth(ground_truth);
        record
    }

    pub fn set_ground_truth(&mut self, ground_truth: Option<usize>) {
        self.ground_truth = ground_truth;
        self.correct = ground_truth.map(|g| g == self.predicted_class);
    }
}

/// Re-queries the oracle with only the record's pixels over the baseline.
pub fn verify_sufficiency(
    record: &MpsRecord,
    image: &ImageTensor,
    oracle: &dyn Oracle,
    baseline: &BaselineSpec,
) -> Result<bool> {
    let mutant = composite(image, &record.mask, baseline)?;
    Ok(oracle.classify(&mutant)?.class_index == record.predicted_class)
}
