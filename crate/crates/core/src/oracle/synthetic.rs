//! In-process classifiers whose minimal sufficient sets are known by
//! construction.
//!
//! A pixel counts as *present* when at least one channel lies farther than
//! `match_tolerance` from the oracle's baseline value; occluded pixels carry
//! the baseline exactly, so they are never present.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, ImageTensor};

use super::Oracle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Class 1 iff every key pixel is present.
    PixelKey { key_pixels: Vec<[usize; 2]> },
    /// Class 1 iff at least `threshold` region pixels are present.
    ThresholdRegion {
        region: Vec<[usize; 2]>,
        threshold: usize,
    },
    /// `scores[k] = bias[k] + weights[k] · flatten(image)`.
    Linear {
        weights: Vec<Vec<f64>>,
        #[serde(default)]
        bias: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracleSpec {
    pub height: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(flatten)]
    pub kind: SyntheticKind,
    #[serde(default)]
    pub match_tolerance: f64,
    /// Value that marks an occluded pixel; one entry broadcasts.
    #[serde(default = "zero_baseline")]
    pub baseline: Vec<f32>,
}

fn one() -> usize {
    1
}

fn zero_baseline() -> Vec<f32> {
    vec![0.0]
}

impl SyntheticOracleSpec {
    pub fn pixel_key(height: usize, width: usize, key: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            height,
            width,
            channels: 1,
            kind: SyntheticKind::PixelKey {
                key_pixels: key.into_iter().map(|(r, c)| [r, c]).collect(),
            },
            match_tolerance: 0.0,
            baseline: zero_baseline(),
        }
    }

    pub fn threshold_region(
        height: usize,
        width: usize,
        region: impl IntoIterator<Item = (usize, usize)>,
        threshold: usize,
    ) -> Self {
        Self {
            height,
            width,
            channels: 1,
            kind: SyntheticKind::ThresholdRegion {
                region: region.into_iter().map(|(r, c)| [r, c]).collect(),
                threshold,
            },
            match_tolerance: 0.0,
            baseline: zero_baseline(),
        }
    }

    pub fn linear(height: usize, width: usize, channels: usize, weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        Self {
            height,
            width,
            channels,
            kind: SyntheticKind::Linear { weights, bias },
            match_tolerance: 0.0,
            baseline: zero_baseline(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidArgument(msg));
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return invalid("synthetic oracle dimensions must be positive".into());
        }
        if !(self.match_tolerance >= 0.0 && self.match_tolerance.is_finite()) {
            return invalid(format!("match_tolerance {} must be >= 0", self.match_tolerance));
        }
        if self.baseline.is_empty()
            || (self.baseline.len() != 1 && self.baseline.len() != self.channels)
            || self.baseline.iter().any(|v| !v.is_finite())
        {
            return invalid("baseline needs 1 or `channels` finite values".into());
        }
        let in_bounds = |p: &[usize; 2]| p[0] < self.height && p[1] < self.width;
        match &self.kind {
            SyntheticKind::PixelKey { key_pixels } => {
                if key_pixels.is_empty() {
                    return invalid("pixel_key oracle needs at least one key pixel".into());
                }
                if let Some(p) = key_pixels.iter().find(|p| !in_bounds(p)) {
                    return invalid(format!("key pixel {p:?} outside {}x{}", self.height, self.width));
                }
            }
            SyntheticKind::ThresholdRegion { region, threshold } => {
                if let Some(p) = region.iter().find(|p| !in_bounds(p)) {
                    return invalid(format!("region pixel {p:?} outside {}x{}", self.height, self.width));
                }
                if *threshold < 1 || *threshold > region.len() {
                    return invalid(format!(
                        "threshold {threshold} must lie in 1..={}",
                        region.len()
                    ));
                }
            }
            SyntheticKind::Linear { weights, bias } => {
                let n = self.height * self.width * self.channels;
                if weights.is_empty() {
                    return invalid("linear oracle needs at least one class".into());
                }
                if let Some(k) = weights.iter().position(|w| w.len() != n) {
                    return invalid(format!("weights for class {k} must have {n} entries"));
                }
                if !bias.is_empty() && bias.len() != weights.len() {
                    return invalid("bias must be empty or one entry per class".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticOracle {
    model_id: String,
    spec: SyntheticOracleSpec,
}

/// Builds a synthetic oracle after validating `spec`.
pub fn make_synthetic_oracle(model_id: impl Into<String>, spec: SyntheticOracleSpec) -> Result<SyntheticOracle> {
    spec.validate()?;
    Ok(SyntheticOracle {
        model_id: model_id.into(),
        spec,
    })
}

impl SyntheticOracle {
    pub fn spec(&self) -> &SyntheticOracleSpec {
        &self.spec
    }

    fn present(&self, image: &ImageTensor, p: &[usize; 2]) -> bool {
        let base = &self.spec.baseline;
        image.pixel(p[0], p[1]).iter().enumerate().any(|(ch, &v)| {
            let b = if base.len() == 1 { base[0] } else { base[ch] };
            f64::from((v - b).abs()) > self.spec.match_tolerance
        })
    }

    fn class_scores(pass: bool) -> Vec<f64> {
        if pass {
            vec![0.0, 1.0]
        } else {
            vec![1.0, 0.0]
        }
    }
}

impl Oracle for SyntheticOracle {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn input_dims(&self) -> Dims {
        Dims {
            height: self.spec.height,
            width: self.spec.width,
            channels: self.spec.channels,
        }
    }

    fn class_count(&self) -> usize {
        match &self.spec.kind {
            SyntheticKind::Linear { weights, .. } => weights.len(),
            _ => 2,
        }
    }

    fn scores(&self, input: &ImageTensor) -> Result<Vec<f64>> {
        self.check_dims(input)?;
        Ok(match &self.spec.kind {
            SyntheticKind::PixelKey { key_pixels } => {
                Self::class_scores(key_pixels.iter().all(|p| self.present(input, p)))
            }
            SyntheticKind::ThresholdRegion { region, threshold } => {
                let count = region.iter().filter(|p| self.present(input, p)).count();
                Self::class_scores(count >= *threshold)
            }
            SyntheticKind::Linear { weights, bias } => weights
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    let dot: f64 = w
                        .iter()
                        .zip(input.values())
                        .map(|(a, &x)| a * f64::from(x))
                        .sum();
                    dot + bias.get(k).copied().unwrap_or(0.0)
                })
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occlusion::{composite, BaselineSpec};
    use crate::tensor::PixelMask;

    fn ones(h: usize, w: usize) -> ImageTensor {
        ImageTensor::filled(h, w, 1, 0.7).unwrap()
    }

    fn keep(h: usize, w: usize, px: &[(usize, usize)]) -> ImageTensor {
        let mask = PixelMask::from_pixels(h, w, px.iter().copied()).unwrap();
        composite(&ones(h, w), &mask, &BaselineSpec::default()).unwrap()
    }

    #[test]
    fn pixel_key_classification() {
        let o = make_synthetic_oracle("k", SyntheticOracleSpec::pixel_key(4, 4, [(1, 1)])).unwrap();
        assert_eq!(o.classify(&keep(4, 4, &[(1, 1)])).unwrap().class_index, 1);
        assert_eq!(o.classify(&keep(4, 4, &[])).unwrap().class_index, 0);
        assert_eq!(o.classify(&keep(4, 4, &[(1, 2)])).unwrap().class_index, 0);

        let o = make_synthetic_oracle("k", SyntheticOracleSpec::pixel_key(5, 5, [(2, 3)])).unwrap();
        assert_eq!(o.classify(&keep(5, 5, &[(2, 3)])).unwrap().class_index, 1);
    }

    #[test]
    fn threshold_region_counts() {
        let region: Vec<(usize, usize)> = (0..10).map(|c| (0, c)).collect();
        let o = make_synthetic_oracle("t", SyntheticOracleSpec::threshold_region(2, 10, region.clone(), 5)).unwrap();
        assert_eq!(o.classify(&keep(2, 10, &region[..4])).unwrap().class_index, 0);
        assert_eq!(o.classify(&keep(2, 10, &region[..5])).unwrap().class_index, 1);
        assert_eq!(o.classify(&keep(2, 10, &region[3..9])).unwrap().class_index, 1);
    }

    #[test]
    fn zero_linear_weights_tie_to_class_zero() {
        let spec = SyntheticOracleSpec::linear(3, 3, 1, vec![vec![0.0; 9]; 4], vec![]);
        let o = make_synthetic_oracle("l", spec).unwrap();
        let c = o.classify(&ones(3, 3)).unwrap();
        assert_eq!(c.class_index, 0);
        assert_eq!(c.scores.len(), 4);
    }

    #[test]
    fn tolerance_treats_near_baseline_as_occluded() {
        let mut spec = SyntheticOracleSpec::pixel_key(2, 2, [(0, 0)]);
        spec.match_tolerance = 0.01;
        let o = make_synthetic_oracle("k", spec).unwrap();
        let near = ImageTensor::filled(2, 2, 1, 0.004).unwrap();
        assert_eq!(o.classify(&near).unwrap().class_index, 0);
        assert_eq!(o.classify(&ones(2, 2)).unwrap().class_index, 1);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(make_synthetic_oracle("k", SyntheticOracleSpec::pixel_key(4, 4, [(4, 0)])).is_err());
        assert!(make_synthetic_oracle("k", SyntheticOracleSpec::pixel_key(4, 4, [])).is_err());
        let region = vec![(0, 0), (0, 1)];
        assert!(make_synthetic_oracle("t", SyntheticOracleSpec::threshold_region(4, 4, region.clone(), 0)).is_err());
        assert!(make_synthetic_oracle("t", SyntheticOracleSpec::threshold_region(4, 4, region, 3)).is_err());
        assert!(make_synthetic_oracle("l", SyntheticOracleSpec::linear(2, 2, 1, vec![vec![0.0; 3]], vec![])).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let o = make_synthetic_oracle("k", SyntheticOracleSpec::pixel_key(4, 4, [(1, 1)])).unwrap();
        assert!(matches!(o.classify(&ones(4, 5)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn spec_json_shape() {
        let json = r#"{"height": 8, "width": 8, "kind": "pixel_key", "key_pixels": [[1, 2]]}"#;
        let spec: SyntheticOracleSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.channels, 1);
        assert_eq!(spec.kind, SyntheticKind::PixelKey { key_pixels: vec![[1, 2]] });
    }

    #[test]
    fn key_set_is_the_unique_minimal_sufficient_set() {
        let key = [(0usize, 1usize), (2, 2), (3, 0)];
        let o = make_synthetic_oracle("k", SyntheticOracleSpec::pixel_key(4, 4, key)).unwrap();
        for subset in 0u8..8 {
            let kept: Vec<_> = (0..3).filter(|i| subset & (1 << i) != 0).map(|i| key[i]).collect();
            let expected = usize::from(subset == 0b111);
            assert_eq!(o.classify(&keep(4, 4, &kept)).unwrap().class_index, expected);
        }
    }
}
