//! Overlap and distance between pixel masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::PixelMask;

fn check_dims(a: &PixelMask, b: &PixelMask) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::dims(
            format!("{}x{}", a.height(), a.width()),
            format!("{}x{}", b.height(), b.width()),
        ));
    }
    Ok(())
}

/// Sørensen–Dice coefficient `2|a∩b| / (|a|+|b|)`; two empty masks score 1.
pub fn dice(a: &PixelMask, b: &PixelMask) -> Result<f64> {
    check_dims(a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += usize::from(x);
        nb += usize::from(y);
        inter += usize::from(x && y);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Symmetric Hausdorff distance in pixel units (Euclidean).
///
/// Computed exactly from squared Euclidean distance transforms of each mask,
/// so it is linear in the grid size rather than in `|a|·|b|`.
pub fn hausdorff(a: &PixelMask, b: &PixelMask) -> Result<f64> {
    check_dims(a, b)?;
    if a.area() == 0 || b.area() == 0 {
        return Err(Error::UndefinedDistance(
            "Hausdorff distance needs two nonempty masks".into(),
        ));
    }
    let directed = |from: &PixelMask, to: &PixelMask| -> u64 {
        let dt = squared_distance_transform(to);
        from.bits()
            .iter()
            .zip(&dt)
            .filter(|(&x, _)| x)
            .map(|(_, &d)| d)
            .max()
            .unwrap_or(0)
    };
    let d2 = directed(a, b).max(directed(b, a));
    Ok((d2 as f64).sqrt())
}

/// Squared Euclidean distance from every pixel to the nearest true pixel,
/// via two passes of the lower-envelope-of-parabolas transform.
fn squared_distance_transform(mask: &PixelMask) -> Vec<u64> {
    let (h, w) = (mask.height(), mask.width());
    const INF: u64 = u64::MAX / 4;
    let mut grid: Vec<u64> = mask.bits().iter().map(|&b| if b { 0 } else { INF }).collect();

    let mut column = vec![0u64; h];
    let mut out = vec![0u64; h.max(w)];
    for c in 0..w {
        for r in 0..h {
            column[r] = grid[r * w + c];
        }
        transform_1d(&column, &mut out[..h]);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    for r in 0..h {
        let row = grid[r * w..(r + 1) * w].to_vec();
        transform_1d(&row, &mut out[..w]);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// `out[q] = min_p f[p] + (q-p)^2`, with `f` possibly "infinite".
fn transform_1d(f: &[u64], out: &mut [u64]) {
    const INF: u64 = u64::MAX / 4;
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&i| f[i] < INF).collect();
    if finite.is_empty() {
        out.fill(INF);
        return;
    }
    // Intersection abscissa of the parabolas rooted at p < q, as an exact
    // rational compare: parabola q is below p for x >= s(p, q).
    let below_from = |p: usize, q: usize, x: i128| -> bool {
        // f[q] + (x-q)^2 <= f[p] + (x-p)^2
        let (fp, fq) = (f[p] as i128, f[q] as i128);
        let (p, q) = (p as i128, q as i128);
        fq + (x - q) * (x - q) <= fp + (x - p) * (x - p)
    };
    // s(p, q) numerator/denominator: ((fq + q^2) - (fp + p^2)) / (2(q - p))
    let start = |p: usize, q: usize| -> (i128, i128) {
        let (fp, fq) = (f[p] as i128, f[q] as i128);
        let (p, q) = (p as i128, q as i128);
        ((fq + q * q) - (fp + p * p), 2 * (q - p))
    };
    let mut hull: Vec<usize> = Vec::with_capacity(finite.len());
    // None marks the first hull parabola, whose interval starts at -inf
    let mut starts: Vec<Option<(i128, i128)>> = Vec::with_capacity(finite.len());
    for &q in &finite {
        loop {
            match hull.last() {
                None => {
                    hull.push(q);
                    starts.push(None);
                    break;
                }
                Some(&p) => {
                    let s = start(p, q);
                    // s <= prev  <=>  s.0 * prev.1 <= prev.0 * s.1 (denominators positive)
                    let dominated = match *starts.last().unwrap() {
                        None => false,
                        Some(prev) => s.0 * prev.1 <= prev.0 * s.1,
                    };
                    if dominated {
                        hull.pop();
                        starts.pop();
                    } else {
                        hull.push(q);
                        starts.push(Some(s));
                        break;
                    }
                }
            }
        }
    }
    let mut k = 0usize;
    for (x, slot) in out.iter_mut().enumerate() {
        while k + 1 < hull.len() && below_from(hull[k], hull[k + 1], x as i128) {
            k += 1;
        }
        let p = hull[k];
        let d = x.abs_diff(p) as u64;
        *slot = f[p] + d * d;
    }
}

/// Nearest-neighbour resampling onto a `target_h x target_w` grid:
/// `out(i, j) = mask(rhd(i·h/target_h), rhd(j·w/target_w))` where `rhd`
/// rounds half down, clamped to the source grid.
pub fn resample_mask(mask: &PixelMask, target_h: usize, target_w: usize) -> Result<PixelMask> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument("resample target must be at least 1x1".into()));
    }
    let (h, w) = (mask.height(), mask.width());
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("cannot resample an empty grid".into()));
    }
    if (h, w) == (target_h, target_w) {
        return Ok(mask.clone());
    }
    let source = |i: usize, src: usize, dst: usize| -> usize {
        let num = i * src;
        let (q, r) = (num / dst, num % dst);
        let rounded = if 2 * r > dst { q + 1 } else { q };
        rounded.min(src - 1)
    };
    let rows: Vec<usize> = (0..target_h).map(|i| source(i, h, target_h)).collect();
    let cols: Vec<usize> = (0..target_w).map(|j| source(j, w, target_w)).collect();
    let mut bits = Vec::with_capacity(target_h * target_w);
    for &r in &rows {
        for &c in &cols {
            bits.push(mask.get(r, c));
        }
    }
    PixelMask::from_bits(target_h, target_w, bits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dice,
    Hausdorff,
}

impl Metric {
    pub fn eval(self, a: &PixelMask, b: &PixelMask) -> Result<f64> {
        match self {
            Metric::Dice => dice(a, b),
            Metric::Hausdorff => hausdorff(a, b),
        }
    }

    pub fn self_value(self) -> f64 {
        match self {
            Metric::Dice => 1.0,
            Metric::Hausdorff => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Hausdorff => "hausdorff",
        }
    }
}

/// Symmetric matrix of per-pair means, labelled by model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub metric: Metric,
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Grid every mask was resampled to before comparison.
    pub grid: (usize, usize),
    pub images: usize,
}

/// Mean pairwise metric between models over a common image set.
///
/// `masks[m][i]` is model `m`'s mask for image `i`; every model must supply
/// the same number of images, already filtered for degenerate records.
/// Masks are resampled to `grid` first.
pub fn pairwise_matrix(
    labels: &[String],
    masks: &[Vec<PixelMask>],
    metric: Metric,
    grid: (usize, usize),
) -> Result<PairwiseMatrix> {
    if labels.len() != masks.len() {
        return Err(Error::dims(format!("{} mask lists", labels.len()), masks.len()));
    }
    let images = masks.first().map_or(0, Vec::len);
    if images == 0 {
        return Err(Error::InvalidArgument("pairwise comparison needs a nonempty common image set".into()));
    }
    if masks.iter().any(|m| m.len() != images) {
        return Err(Error::InvalidArgument("every model needs a mask for every common image".into()));
    }
    let resampled = masks
        .iter()
        .map(|ms| ms.iter().map(|m| resample_mask(m, grid.0, grid.1)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let n = labels.len();
    let mut values = vec![vec![metric.self_value(); n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut sum = 0.0;
            for (a, b) in resampled[i].iter().zip(&resampled[j]) {
                sum += metric.eval(a, b)?;
            }
            let mean = sum / images as f64;
            values[i][j] = mean;
            values[j][i] = mean;
        }
    }
    Ok(PairwiseMatrix {
        metric,
        labels: labels.to_vec(),
        values,
        grid,
        images,
    })
}

impl PairwiseMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model_id");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            out.push_str(l);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let digits = match self.metric {
            Metric::Dice => 3,
            Metric::Hausdorff => 1,
        };
        let mut out = format!("| Model | {} |\n", self.labels.join(" | "));
        out.push_str(&format!("|---|{}\n", "---:|".repeat(self.labels.len())));
        for (l, row) in self.labels.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.digits$}")).collect();
            out.push_str(&format!("| {l} | {} |\n", cells.join(" | ")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, px: &[(usize, usize)]) -> PixelMask {
        PixelMask::from_pixels(h, w, px.iter().copied()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let m = mask(4, 4, &[(0, 0), (1, 1)]);
        assert_eq!(dice(&m, &m).unwrap(), 1.0);
        assert_eq!(dice(&m, &mask(4, 4, &[(3, 3)])).unwrap(), 0.0);
        assert_eq!(dice(&m, &mask(4, 4, &[(0, 0), (2, 2)])).unwrap(), 0.5);
        assert_eq!(dice(&mask(4, 4, &[]), &mask(4, 4, &[])).unwrap(), 1.0);
        assert_eq!(dice(&m, &mask(4, 4, &[])).unwrap(), 0.0);
        assert!(dice(&m, &mask(4, 5, &[])).is_err());
    }

    #[test]
    fn hausdorff_examples() {
        let m = mask(8, 8, &[(1, 2), (5, 5)]);
        assert_eq!(hausdorff(&m, &m).unwrap(), 0.0);
        assert_eq!(hausdorff(&mask(8, 8, &[(0, 0)]), &mask(8, 8, &[(3, 4)])).unwrap(), 5.0);
        assert!(matches!(hausdorff(&m, &mask(8, 8, &[])), Err(Error::UndefinedDistance(_))));
    }

    #[test]
    fn resample_examples() {
        let m = mask(2, 2, &[(0, 1), (1, 0)]);
        assert_eq!(resample_mask(&m, 2, 2).unwrap(), m);
        let up = resample_mask(&m, 4, 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(up.get(r, c), m.get(r / 2, c / 2));
            }
        }
        assert!(resample_mask(&m, 0, 3).is_err());
    }

    #[test]
    fn pairwise_diagonals_and_identity() {
        let a = vec![mask(4, 4, &[(0, 0)]), mask(4, 4, &[(2, 2), (3, 3)])];
        let b = vec![mask(2, 2, &[(0, 0)]), mask(2, 2, &[(1, 1)])];
        let labels = vec!["a".to_string(), "a2".to_string(), "b".to_string()];
        let masks = vec![a.clone(), a, b];
        let d = pairwise_matrix(&labels, &masks, Metric::Dice, (4, 4)).unwrap();
        let hd = pairwise_matrix(&labels, &masks, Metric::Hausdorff, (4, 4)).unwrap();
        for i in 0..3 {
            assert_eq!(d.values[i][i], 1.0);
            assert_eq!(hd.values[i][i], 0.0);
        }
        assert_eq!(d.values[0][1], 1.0);
        assert_eq!(hd.values[0][1], 0.0);
        assert_eq!(d.values[0][2], d.values[2][0]);
        assert!(pairwise_matrix(&labels[..1], &[vec![]], Metric::Dice, (4, 4)).is_err());
        assert!(d.to_csv().starts_with("model_id,a,a2,b\n"));
        assert!(d.to_markdown().contains("| a | 1.000 | 1.000 |"));
    }

    fn brute_dice(a: &PixelMask, b: &PixelMask) -> f64 {
        let (mut i, mut na, mut nb) = (0, 0, 0);
        for r in 0..a.height() {
            for c in 0..a.width() {
                na += a.get(r, c) as usize;
                nb += b.get(r, c) as usize;
                i += (a.get(r, c) && b.get(r, c)) as usize;
            }
        }
        if na + nb == 0 { 1.0 } else { 2.0 * i as f64 / (na + nb) as f64 }
    }

    fn brute_hausdorff(a: &PixelMask, b: &PixelMask) -> f64 {
        let directed = |x: &PixelMask, y: &PixelMask| {
            let mut worst = 0usize;
            for (r1, c1) in x.pixels() {
                let mut best = usize::MAX;
                for (r2, c2) in y.pixels() {
                    best = best.min(r1.abs_diff(r2).pow(2) + c1.abs_diff(c2).pow(2));
                }
                worst = worst.max(best);
            }
            worst
        };
        (directed(a, b).max(directed(b, a)) as f64).sqrt()
    }

    fn pair() -> impl Strategy<Value = (PixelMask, PixelMask)> {
        (1usize..=16, 1usize..=16, 0.02f64..0.9).prop_flat_map(|(h, w, p)| {
            let bits = proptest::collection::vec(proptest::bool::weighted(p), h * w);
            (bits.clone(), bits).prop_map(move |(a, b)| {
                (PixelMask::from_bits(h, w, a).unwrap(), PixelMask::from_bits(h, w, b).unwrap())
            })
        })
    }

    proptest! {
        #[test]
        fn metrics_match_nested_loops((a, b) in pair()) {
            prop_assert_eq!(dice(&a, &b).unwrap(), brute_dice(&a, &b));
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            if a.area() > 0 && b.area() > 0 {
                let hd = hausdorff(&a, &b).unwrap();
                prop_assert_eq!(hd, brute_hausdorff(&a, &b));
                prop_assert_eq!(hd, hausdorff(&b, &a).unwrap());
                prop_assert_eq!(hd == 0.0, a == b);
                prop_assert_eq!(dice(&a, &b).unwrap() == 1.0, a == b);
            }
        }

        #[test]
        fn integer_ratio_resampling_round_trips(
            bits in proptest::collection::vec(any::<bool>(), 35),
            k in 1usize..4,
        ) {
            let m = PixelMask::from_bits(7, 5, bits).unwrap();
            let up = resample_mask(&m, 7 * k, 5 * k).unwrap();
            // round half down: i*h/target with remainder compared against half the target
            let src = |i: usize, n: usize| {
                let (q, r) = (i * n / (n * k), i * n % (n * k));
                (if 2 * r > n * k { q + 1 } else { q }).min(n - 1)
            };
            for r in 0..7 * k {
                for c in 0..5 * k {
                    prop_assert_eq!(up.get(r, c), m.get(src(r, 7), src(c, 5)));
                }
            }
            prop_assert_eq!(resample_mask(&up, 7, 5).unwrap(), m);
        }
    }
}
