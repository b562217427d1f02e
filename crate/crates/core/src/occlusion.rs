//! Rectangular 4-way partitions, occlusion subsets and baseline compositing.
//!
//! A [`Partition`] splits a parent [`Region`] at an interior point into four
//! quadrants (superpixels), indexed 0..4 as above-left, above-right,
//! below-left, below-right. A [`SubsetMutant`] names which of those quadrants
//! keep their original pixels; everything else in the parent is replaced by
//! the baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, PixelMask};

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    /// The region covering a whole `height x width` grid.
    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, height, width)
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.bottom() && col >= self.left && col < self.right()
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.bottom() <= height && self.right() <= width
    }

    pub fn is_splittable(&self) -> bool {
        self.height >= 2 && self.width >= 2
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.top..self.bottom()).flat_map(move |r| (self.left..self.right()).map(move |c| (r, c)))
    }
}

/// Four disjoint quadrants covering `parent`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub parent: Region,
    pub parts: [Region; 4],
}

impl Partition {
    /// Index of the part containing `(row, col)`, if the pixel lies in the parent.
    pub fn part_of(&self, row: usize, col: usize) -> Option<usize> {
        self.parts.iter().position(|p| p.contains(row, col))
    }
}

/// Splits `region` into four rectangles around `split_point`, given in
/// absolute `(row, col)` coordinates. The point becomes the top-left pixel of
/// the below-right part, so it must lie strictly inside the region and not on
/// its top row or left column.
pub fn split_region(region: Region, split_point: (usize, usize)) -> Result<Partition> {
    if !region.is_splittable() {
        return Err(Error::RegionTooSmall {
            height: region.height,
            width: region.width,
        });
    }
    let (r, c) = split_point;
    if r <= region.top || r >= region.bottom() || c <= region.left || c >= region.right() {
        return Err(Error::InvalidArgument(format!(
            "split point ({r},{c}) is not interior to region {region:?}"
        )));
    }
    let upper = r - region.top;
    let lower = region.bottom() - r;
    let lhs = c - region.left;
    let rhs = region.right() - c;
    Ok(Partition {
        parent: region,
        parts: [
            Region::new(region.top, region.left, upper, lhs),
            Region::new(region.top, c, upper, rhs),
            Region::new(r, region.left, lower, lhs),
            Region::new(r, c, lower, rhs),
        ],
    })
}

/// Draws a split point uniformly from the `(height-1) x (width-1)` valid
/// interior points of `region`.
pub fn draw_split_point<R: Rng + ?Sized>(region: Region, rng: &mut R) -> Result<(usize, usize)> {
    if !region.is_splittable() {
        return Err(Error::RegionTooSmall {
            height: region.height,
            width: region.width,
        });
    }
    let r = rng.random_range(region.top + 1..region.bottom());
    let c = rng.random_range(region.left + 1..region.right());
    Ok((r, c))
}

/// Per-channel constant that replaces occluded pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaselineSpec {
    pub values: Vec<f32>,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self { values: vec![0.0] }
    }
}

impl BaselineSpec {
    /// A single value broadcast over every channel.
    pub fn constant(value: f32) -> Self {
        Self {
            values: vec![value],
        }
    }

    pub fn per_channel(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "baseline needs at least one finite value".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn validate(&self) -> Result<()> {
        Self::per_channel(self.values.clone()).map(|_| ())
    }

    /// Baseline value for channel `ch`. A single-valued baseline broadcasts.
    pub fn value(&self, ch: usize) -> f32 {
        if self.values.len() == 1 {
            self.values[0]
        } else {
            self.values[ch]
        }
    }

    pub fn check_channels(&self, channels: usize) -> Result<()> {
        if self.values.len() == 1 || self.values.len() == channels {
            Ok(())
        } else {
            Err(Error::dims(
                format!("baseline with 1 or {channels} values"),
                self.values.len(),
            ))
        }
    }
}

/// Keeps `image` where `mask` is true and writes the baseline elsewhere.
pub fn composite(image: &ImageTensor, mask: &PixelMask, baseline: &BaselineSpec) -> Result<ImageTensor> {
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::dims(
            format!("{}x{}", image.height(), image.width()),
            format!("{}x{}", mask.height(), mask.width()),
        ));
    }
    baseline.check_channels(image.channels())?;
    let channels = image.channels();
    let fill: Vec<f32> = (0..channels).map(|ch| baseline.value(ch)).collect();
    let mut values = image.values().to_vec();
    for (i, keep) in mask.bits().iter().enumerate() {
        if !keep {
            values[i * channels..(i + 1) * channels].copy_from_slice(&fill);
        }
    }
    ImageTensor::new(image.height(), image.width(), channels, values)
}

/// A choice of retained parts of one partition, as a 4-bit set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubsetMutant {
    pub partition: Partition,
    pub retained: u8,
}

impl SubsetMutant {
    pub fn retains(&self, part: usize) -> bool {
        self.retained & (1 << part) != 0
    }
}

/// All 16 subsets of `partition`, in ascending bitmask order.
pub fn enumerate_subsets(partition: &Partition) -> Vec<SubsetMutant> {
    (0u8..16)
        .map(|retained| SubsetMutant {
            partition: *partition,
            retained,
        })
        .collect()
}

/// Mask for a mutant: inside the parent region, true where the carrier is
/// true and the pixel's part is retained; outside, a copy of the carrier.
pub fn mutant_mask(mutant: &SubsetMutant, carrier: &PixelMask) -> Result<PixelMask> {
    let parent = mutant.partition.parent;
    if !parent.fits_in(carrier.height(), carrier.width()) {
        return Err(Error::dims(
            format!("carrier of at least {}x{}", parent.bottom(), parent.right()),
            format!("{}x{}", carrier.height(), carrier.width()),
        ));
    }
    let mut out = carrier.clone();
    for (idx, part) in mutant.partition.parts.iter().enumerate() {
        if mutant.retains(idx) {
            continue;
        }
        for (r, c) in part.pixels() {
            out.set(r, c, false);
        }
    }
    Ok(out)
}
