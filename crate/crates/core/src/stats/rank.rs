/// Ranks `1..=n` with tied values sharing the mean of the ranks they cover.
pub fn rank_midtie(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let mean = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mean;
        }
        i = j;
    }
    ranks
}

/// Sizes of the tie groups in `values` (groups of one included).
pub(crate) fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        sizes.push(j - i);
        i = j;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(rank_midtie(&[10.0, 20.0, 30.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank_midtie(&[5.0, 5.0]), vec![1.5, 1.5]);
        assert_eq!(rank_midtie(&[7.0, 7.0, 7.0, 1.0]), vec![3.0, 3.0, 3.0, 1.0]);
        assert!(rank_midtie(&[]).is_empty());
        assert_eq!(tie_sizes(&[3.0, 1.0, 3.0, 2.0, 3.0]), vec![1, 1, 3]);
    }
}
