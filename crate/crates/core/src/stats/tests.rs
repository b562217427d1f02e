use super::chi2::chi2_sf;
use super::rank::{rank_midtie, tie_sizes};
use super::TestResult;
use crate::error::{Error, Result};

const SMALL_GROUP: usize = 5;

fn tie_term(values: &[f64]) -> f64 {
    tie_sizes(values)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum()
}

/// Kruskal-Wallis H over independent groups, with tie correction.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::DegenerateSample(format!("Kruskal-Wallis needs at least 2 groups, got {}", groups.len())));
    }
    if let Some(i) = groups.iter().position(|g| g.is_empty()) {
        return Err(Error::DegenerateSample(format!("group {i} is empty")));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in sample".into()));
    }
    if groups.iter().any(|g| g.len() < SMALL_GROUP) {
        log::warn!("Kruskal-Wallis group with fewer than {SMALL_GROUP} values; chi-square approximation is unreliable");
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let ranks = rank_midtie(&pooled);
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = 12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0);
    let correction = 1.0 - tie_term(&pooled) / (n * n * n - n);
    if correction <= 0.0 {
        return Err(Error::DegenerateSample("all values are identical".into()));
    }
    let statistic = (h / correction).max(0.0);
    let df = groups.len() - 1;
    Ok(TestResult { statistic, df, p_value: chi2_sf(statistic, df)?, tie_corrected: true })
}

/// Friedman test; `blocks[i][j]` is treatment `j` within block `i`.
/// Ranks are taken within each block, with tie correction.
pub fn friedman(blocks: &[Vec<f64>]) -> Result<TestResult> {
    let n = blocks.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!("Friedman needs at least 2 blocks, got {n}")));
    }
    let k = blocks[0].len();
    if k < 2 {
        return Err(Error::DegenerateSample(format!("Friedman needs at least 2 treatments, got {k}")));
    }
    if let Some(i) = blocks.iter().position(|b| b.len() != k) {
        return Err(Error::dims(k, blocks[i].len()));
    }
    if blocks.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in sample".into()));
    }
    if n < SMALL_GROUP {
        log::warn!("Friedman test with fewer than {SMALL_GROUP} blocks; chi-square approximation is unreliable");
    }
    let mut column_sums = vec![0.0; k];
    let mut ties = 0.0;
    for block in blocks {
        for (s, r) in column_sums.iter_mut().zip(rank_midtie(block)) {
            *s += r;
        }
        ties += tie_term(block);
    }
    let (nf, kf) = (n as f64, k as f64);
    let df = k - 1;
    let correction = 1.0 - ties / (nf * kf * (kf * kf - 1.0));
    if correction <= 0.0 {
        // every block fully tied: no evidence of any difference
        return Ok(TestResult { statistic: 0.0, df, p_value: 1.0, tie_corrected: true });
    }
    let q = 12.0 / (nf * kf * (kf + 1.0)) * column_sums.iter().map(|r| r * r).sum::<f64>() - 3.0 * nf * (kf + 1.0);
    let statistic = (q / correction).max(0.0);
    Ok(TestResult { statistic, df, p_value: chi2_sf(statistic, df)?, tie_corrected: true })
}

/// Bonferroni-adjusted p-values, `min(1, p * m)`.
pub fn bonferroni(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len() as f64;
    p_values.iter().map(|p| (p * m).min(1.0)).collect()
}

#[cfg(test)]
mod unit {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Textbook H without tie handling, from explicit rank sums.
    fn naive_h(groups: &[Vec<f64>]) -> f64 {
        let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
        let n = pooled.len() as f64;
        let mut total = 0.0;
        for g in groups {
            let r: f64 = g.iter().map(|v| pooled.iter().filter(|x| *x < v).count() as f64 + 1.0).sum();
            total += r * r / g.len() as f64;
        }
        12.0 / (n * (n + 1.0)) * total - 3.0 * (n + 1.0)
    }

    #[test]
    fn kruskal_wallis_examples() {
        let r = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]).unwrap();
        assert_relative_eq!(r.statistic, 7.2, max_relative = 1e-12);
        assert_eq!(r.df, 2);
        assert!((r.p_value - 0.0273).abs() < 1e-4);

        let same = kruskal_wallis(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(same.statistic.abs() < 1e-12);
        assert!((same.p_value - 1.0).abs() < 1e-12);

        let r = kruskal_wallis(&[vec![1.0, 1.0, 2.0], vec![2.0, 3.0, 3.0]]).unwrap();
        // rank sums 6.5 and 14.5 give H = 64/21, ties (2,2,2) give C = 1 - 18/210
        assert_relative_eq!(r.statistic, (64.0 / 21.0) / (1.0 - 18.0 / 210.0), max_relative = 1e-12);
    }

    #[test]
    fn kruskal_wallis_errors() {
        assert!(matches!(kruskal_wallis(&[vec![1.0, 2.0]]), Err(Error::DegenerateSample(_))));
        assert!(matches!(kruskal_wallis(&[vec![1.0], vec![]]), Err(Error::DegenerateSample(_))));
        assert!(matches!(kruskal_wallis(&[vec![3.0, 3.0], vec![3.0]]), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn friedman_examples() {
        let r = friedman(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_relative_eq!(r.statistic, 4.0, max_relative = 1e-12);
        assert_eq!(r.df, 2);
        assert!((r.p_value - 0.1353).abs() < 1e-4);

        let tied = friedman(&[vec![5.0, 5.0, 5.0], vec![2.0, 2.0, 2.0]]).unwrap();
        assert_eq!(tied.statistic, 0.0);
        assert_eq!(tied.p_value, 1.0);
        assert!(friedman(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(friedman(&[vec![1.0], vec![1.0]]).is_err());
        assert!(friedman(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        assert_eq!(bonferroni(&[0.004, 0.02, 0.5]), vec![0.012, 0.06, 1.0]);
        assert_eq!(bonferroni(&[0.004, 0.5]), vec![0.008, 1.0]);
        assert_eq!(bonferroni(&[0.3]), vec![0.3]);
        assert!(bonferroni(&[0.01; 5]).iter().all(|p| (p - 0.05).abs() < 1e-15));
        assert!(bonferroni(&[]).is_empty());
    }

    fn distinct_groups() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..5, 1usize..6).prop_flat_map(|(k, m)| {
            let total = k * m;
            Just((0..total).collect::<Vec<_>>()).prop_shuffle().prop_map(move |perm| {
                perm.chunks(m).map(|c| c.iter().map(|&v| v as f64 * 0.37 + 1.0).collect()).collect()
            })
        })
    }

    proptest! {
        #[test]
        fn untied_kw_matches_textbook(groups in distinct_groups()) {
            let r = kruskal_wallis(&groups).unwrap();
            prop_assert!((r.statistic - naive_h(&groups).max(0.0)).abs() < 1e-9);
        }

        #[test]
        fn kw_invariances(groups in distinct_groups(), seed in any::<u64>()) {
            let base = kruskal_wallis(&groups).unwrap();
            // monotone transform of values
            let mapped: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| v.powi(3) + 2.0 * v).collect()).collect();
            prop_assert!((kruskal_wallis(&mapped).unwrap().statistic - base.statistic).abs() < 1e-9);
            // reordering groups and values within groups
            let mut reordered = groups.clone();
            reordered.rotate_left((seed % groups.len() as u64) as usize);
            for g in &mut reordered { g.reverse(); }
            prop_assert!((kruskal_wallis(&reordered).unwrap().statistic - base.statistic).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&base.p_value));
        }

        #[test]
        fn friedman_invariances(rows in prop::collection::vec(prop::collection::vec(0u8..6, 3), 2..8)) {
            let blocks: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            let base = friedman(&blocks).unwrap();
            prop_assert!(base.statistic >= 0.0 && (0.0..=1.0).contains(&base.p_value));
            let mut swapped = blocks.clone();
            swapped.reverse();
            prop_assert!((friedman(&swapped).unwrap().statistic - base.statistic).abs() < 1e-9);
            let mapped: Vec<Vec<f64>> = blocks.iter().map(|r| r.iter().map(|v| (v + 1.0).ln()).collect()).collect();
            prop_assert!((friedman(&mapped).unwrap().statistic - base.statistic).abs() < 1e-9);
        }
    }
}
