//! Iterative occlusion search that distributes approximate causal
//! responsibility over superpixels and accumulates it per pixel.
//!
//! One iteration starts from a random 4-way partition of the whole image and
//! tests all 16 mutants. Every *minimal passing subset* (a retained set whose
//! mutant keeps the target class while none of its proper subsets does)
//! credits each of its parts with that part's responsibility and then has
//! each part refined in turn, depth first, with that part alone as the new
//! carrier. Calls left after a partition are split evenly among its child
//! branches. Refinement stops at `max_depth`, at parts thinner than
//! `min_side`, or when a branch's share of the call budget runs out.
//!
//! Responsibility of part `p` in a pass table is the largest `1/|S|` over
//! passing sets `S` that contain `p` and stop passing once `p` is dropped,
//! or zero if no such set exists.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occlusion::{composite, draw_split_point, enumerate_subsets, mutant_mask, split_region, BaselineSpec, Partition, Region};
use crate::oracle::{Concurrency, Oracle};
use crate::tensor::{ImageTensor, PixelMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub iterations: usize,
    pub max_depth: usize,
    pub min_side: usize,
    /// Oracle calls available to the search for one image, shared evenly
    /// across iterations.
    pub mutant_budget: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            max_depth: 10,
            min_side: 2,
            mutant_budget: 4000,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if self.mutant_budget < 16 {
            return Err(Error::InvalidArgument("mutant_budget must be >= 16".into()));
        }
        Ok(())
    }

    /// Calls reserved for iteration `i`: the budget split evenly, with the
    /// remainder going to the lowest iteration indices.
    pub fn iteration_budget(&self, i: usize) -> usize {
        let base = self.mutant_budget / self.iterations;
        base + usize::from(i < self.mutant_budget % self.iterations)
    }

    /// Seed for iteration `i`, derived from the run seed only.
    pub fn iteration_seed(&self, i: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(i as u64 ^ 0x9e37_79b9_7f4a_7c15))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Outcome of all 16 mutants of one partition; `outcomes[b]` is true when
/// the mutant retaining bitmask `b` keeps the target class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PassTable {
    pub partition: Partition,
    pub outcomes: [bool; 16],
}

impl PassTable {
    /// Passing subsets with no passing proper subset, ascending by bitmask.
    pub fn minimal_passing_subsets(&self) -> Vec<u8> {
        (0u8..16)
            .filter(|&s| self.outcomes[s as usize])
            .filter(|&s| {
                // every proper subset t of s fails
                let mut t = s;
                loop {
                    t = t.wrapping_sub(1) & s;
                    if t == s {
                        return true;
                    }
                    if self.outcomes[t as usize] {
                        return false;
                    }
                    if t == 0 {
                        return true;
                    }
                }
            })
            .collect()
    }
}

/// Remaining oracle calls for one search iteration.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    remaining: usize,
}

impl Budget {
    pub fn new(calls: usize) -> Self {
        Self { remaining: calls }
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    fn take(&mut self, n: usize) -> Result<()> {
        if self.remaining < n {
            return Err(Error::BudgetExhausted);
        }
        self.remaining -= n;
        Ok(())
    }
}

/// Classifies all 16 mutants of `partition` over `carrier`. Fails without
/// consuming anything when fewer than 16 calls remain.
pub fn evaluate_partition(
    image: &ImageTensor,
    carrier: &PixelMask,
    partition: &Partition,
    oracle: &dyn Oracle,
    target_class: usize,
    baseline: &BaselineSpec,
    budget: &mut Budget,
) -> Result<PassTable> {
    evaluate_with_known(image, carrier, partition, oracle, target_class, baseline, budget, None)
}

/// As [`evaluate_partition`], but when the outcome of the all-retained
/// mutant (the carrier itself) is already known it is not queried.
#[allow(clippy::too_many_arguments)]
fn evaluate_with_known(
    image: &ImageTensor,
    carrier: &PixelMask,
    partition: &Partition,
    oracle: &dyn Oracle,
    target_class: usize,
    baseline: &BaselineSpec,
    budget: &mut Budget,
    carrier_outcome: Option<bool>,
) -> Result<PassTable> {
    let queried = if carrier_outcome.is_some() { 15 } else { 16 };
    budget.take(queried)?;
    let mutants = enumerate_subsets(partition)[..queried]
        .iter()
        .map(|m| composite(image, &mutant_mask(m, carrier)?, baseline))
        .collect::<Result<Vec<_>>>()?;
    let results = oracle.classify_batch(&mutants)?;
    let mut outcomes = [false; 16];
    for (slot, c) in outcomes.iter_mut().zip(&results) {
        *slot = c.class_index == target_class;
    }
    if let Some(known) = carrier_outcome {
        outcomes[15] = known;
    }
    Ok(PassTable {
        partition: *partition,
        outcomes,
    })
}

/// Per-part responsibility, see the module docs for the definition.
pub fn part_responsibility(table: &PassTable) -> [f64; 4] {
    let mut r = [0.0f64; 4];
    for s in 1u8..16 {
        if !table.outcomes[s as usize] {
            continue;
        }
        let size = s.count_ones() as f64;
        for (p, slot) in r.iter_mut().enumerate() {
            let bit = 1u8 << p;
            if s & bit != 0 && !table.outcomes[(s & !bit) as usize] {
                *slot = slot.max(1.0 / size);
            }
        }
    }
    r
}

/// Per-image score grid: mean over iterations of accumulated responsibility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponsibilityLandscape {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f64>,
    pub iterations_completed: usize,
}

impl ResponsibilityLandscape {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            scores: vec![0.0; height * width],
            iterations_completed: 0,
        }
    }

    pub fn score(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }

    /// Row-major position of the (first) highest score.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Writes the grid as `u32 height, u32 width` (little endian) followed
    /// by row-major `f32` scores, plus a sidecar JSON with the search config.
    pub fn save(&self, path: &Path, config: &SearchConfig) -> Result<()> {
        let mut bytes = Vec::with_capacity(8 + 4 * self.scores.len());
        bytes.extend_from_slice(&(self.height as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.width as u32).to_le_bytes());
        for &s in &self.scores {
            bytes.extend_from_slice(&(s as f32).to_le_bytes());
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        let sidecar = path.with_extension("json");
        let meta = serde_json::json!({
            "height": self.height,
            "width": self.width,
            "iterations_completed": self.iterations_completed,
            "config": config,
        });
        std::fs::write(&sidecar, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&sidecar, e))?;
        Ok(())
    }

    /// Reads a grid written by [`ResponsibilityLandscape::save`]. The
    /// iteration count comes from the sidecar when present.
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 {
            return Err(Error::data(path, "truncated landscape header"));
        }
        let height = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() != 8 + 4 * height * width {
            return Err(Error::data(path, format!("expected {height}x{width} scores")));
        }
        let scores = bytes[8..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let sidecar = path.with_extension("json");
        let iterations_completed = std::fs::read(&sidecar)
            .ok()
            .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
            .and_then(|v| v["iterations_completed"].as_u64())
            .unwrap_or(0) as usize;
        Ok(Self {
            height,
            width,
            scores,
            iterations_completed,
        })
    }
}

/// Bookkeeping for one or more search iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub oracle_calls: usize,
    pub partitions: usize,
    /// Refinements skipped because the iteration budget ran out.
    pub truncated: usize,
}

impl std::ops::AddAssign for SearchStats {
    fn add_assign(&mut self, rhs: Self) {
        self.oracle_calls += rhs.oracle_calls;
        self.partitions += rhs.partitions;
        self.truncated += rhs.truncated;
    }
}

struct Refiner<'a> {
    image: &'a ImageTensor,
    oracle: &'a dyn Oracle,
    target_class: usize,
    config: &'a SearchConfig,
    baseline: &'a BaselineSpec,
    rng: ChaCha8Rng,
    stats: SearchStats,
    acc: Vec<f64>,
}

impl Refiner<'_> {
    /// Refines `region` within `allowance` oracle calls and returns the
    /// calls spent. Calls left over after the partition itself are shared
    /// evenly among the child branches in visiting order, each branch
    /// passing what it did not use on to the ones after it.
    fn refine(
        &mut self,
        region: Region,
        carrier: &PixelMask,
        carrier_outcome: Option<bool>,
        depth: usize,
        allowance: usize,
    ) -> Result<usize> {
        let min_side = self.config.min_side.max(2);
        if depth >= self.config.max_depth || region.height < min_side || region.width < min_side {
            return Ok(0);
        }
        let mut budget = Budget::new(allowance);
        let point = draw_split_point(region, &mut self.rng)?;
        let partition = split_region(region, point)?;
        let table = match evaluate_with_known(
            self.image,
            carrier,
            &partition,
            self.oracle,
            self.target_class,
            self.baseline,
            &mut budget,
            carrier_outcome,
        ) {
            Ok(t) => t,
            Err(Error::BudgetExhausted) => {
                self.stats.truncated += 1;
                return Ok(0);
            }
            Err(e) => return Err(e),
        };
        let spent = allowance - budget.remaining();
        self.stats.oracle_calls += spent;
        self.stats.partitions += 1;

        let resp = part_responsibility(&table);
        let width = self.image.width();
        let mut children = Vec::new();
        for subset in table.minimal_passing_subsets() {
            let parts: Vec<usize> = (0..4).filter(|p| subset & (1 << p) != 0 && resp[*p] > 0.0).collect();
            for &p in &parts {
                for (r, c) in partition.parts[p].pixels() {
                    self.acc[r * width + c] += resp[p];
                }
            }
            for &p in &parts {
                let mut part_carrier = PixelMask::new(carrier.height(), carrier.width(), false);
                for (r, c) in partition.parts[p].pixels() {
                    part_carrier.set(r, c, carrier.get(r, c));
                }
                // a lone part is exactly the passing mutant; otherwise its outcome is unknown
                let known = (parts.len() == 1).then_some(true);
                children.push((partition.parts[p], part_carrier, known));
            }
        }
        let mut left = budget.remaining();
        let count = children.len();
        for (i, (part, part_carrier, known)) in children.into_iter().enumerate() {
            let share = left / (count - i);
            left -= self.refine(part, &part_carrier, known, depth + 1, share)?;
        }
        Ok(allowance - left)
    }
}

/// Runs one search iteration from the root partition of the whole image and
/// returns its per-pixel accumulation (not yet averaged).
pub fn refine_and_accumulate(
    image: &ImageTensor,
    oracle: &dyn Oracle,
    target_class: usize,
    config: &SearchConfig,
    baseline: &BaselineSpec,
    iteration: usize,
) -> Result<(Vec<f64>, SearchStats)> {
    let mut refiner = Refiner {
        image,
        oracle,
        target_class,
        config,
        baseline,
        rng: ChaCha8Rng::seed_from_u64(config.iteration_seed(iteration)),
        stats: SearchStats::default(),
        acc: vec![0.0; image.height() * image.width()],
    };
    let carrier = PixelMask::new(image.height(), image.width(), true);
    refiner.refine(Region::full(image.height(), image.width()), &carrier, None, 0, config.iteration_budget(iteration))?;
    Ok((refiner.acc, refiner.stats))
}

/// Builds the landscape for `image`, targeting the oracle's own top class.
pub fn build_landscape(
    image: &ImageTensor,
    oracle: &dyn Oracle,
    config: &SearchConfig,
    baseline: &BaselineSpec,
) -> Result<ResponsibilityLandscape> {
    let target = oracle.classify(image)?.class_index;
    Ok(search_landscape(image, oracle, target, config, baseline)?.0)
}

/// Landscape search for an explicit target class. Iterations run in
/// parallel when the oracle allows it; the reduction is always in iteration
/// order, so the result does not depend on the thread count.
pub fn search_landscape(
    image: &ImageTensor,
    oracle: &dyn Oracle,
    target_class: usize,
    config: &SearchConfig,
    baseline: &BaselineSpec,
) -> Result<(ResponsibilityLandscape, SearchStats)> {
    config.validate()?;
    oracle.check_dims(image)?;
    let run = |i: usize| refine_and_accumulate(image, oracle, target_class, config, baseline, i);
    let per_iteration: Vec<(Vec<f64>, SearchStats)> = match oracle.concurrency() {
        Concurrency::Shared => (0..config.iterations).into_par_iter().map(run).collect::<Result<_>>()?,
        Concurrency::SingleThreaded => (0..config.iterations).map(run).collect::<Result<_>>()?,
    };

    let mut landscape = ResponsibilityLandscape::zeros(image.height(), image.width());
    let mut stats = SearchStats::default();
    for (acc, s) in &per_iteration {
        for (dst, v) in landscape.scores.iter_mut().zip(acc) {
            *dst += v;
        }
        stats += *s;
    }
    let n = per_iteration.len() as f64;
    for v in &mut landscape.scores {
        *v /= n;
    }
    landscape.iterations_completed = per_iteration.len();
    Ok((landscape, stats))
}
