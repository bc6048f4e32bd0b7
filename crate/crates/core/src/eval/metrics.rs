//! Rank of the true candidate, median rank and recall at K.

/// 1-based rank of `distances[true_index]` under the crate-wide order
/// (distance ascending, then candidate index ascending).
pub fn rank_of_true(distances: &[f64], true_index: usize) -> usize {
    let t = distances[true_index];
    1 + distances
        .iter()
        .enumerate()
        .filter(|&(j, d)| d.total_cmp(&t).is_lt() || (d.total_cmp(&t).is_eq() && j < true_index))
        .count()
}

/// Best rank among several true candidates.
pub fn best_rank_of_true(distances: &[f64], true_indices: &[usize]) -> usize {
    true_indices
        .iter()
        .map(|&t| rank_of_true(distances, t))
        .min()
        .expect("at least one true candidate")
}

/// Median with the mean-of-middle-two convention for even counts.
pub fn median_rank(ranks: &[usize]) -> f64 {
    assert!(!ranks.is_empty(), "median of no ranks");
    let mut s = ranks.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    }
}

/// Percentage of ranks that are `<= k`.
pub fn recall_at(ranks: &[usize], k: usize) -> f64 {
    assert!(!ranks.is_empty(), "recall of no ranks");
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Median rank and `R@K` for every requested `K`, in the given order.
pub fn compute_metrics(ranks: &[usize], recall_ranks: &[usize]) -> (f64, Vec<f64>) {
    (median_rank(ranks), recall_ranks.iter().map(|&k| recall_at(ranks, k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of_true(&[0.5, 0.1, 0.9], 1), 1);
        assert_eq!(rank_of_true(&[0.3, 0.3, 0.3], 0), 1);
        assert_eq!(rank_of_true(&[0.3, 0.3, 0.3], 2), 3);
        assert_eq!(rank_of_true(&[0.2, 0.1, 0.2, 0.0], 2), 4);
        assert_eq!(best_rank_of_true(&[0.2, 0.1, 0.2, 0.0], &[0, 2]), 3);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(compute_metrics(&[1, 1, 1], &[1]), (1.0, vec![100.0]));
        assert_eq!(compute_metrics(&[1, 2, 3, 4], &[1, 5]), (2.5, vec![25.0, 100.0]));
        assert_eq!(compute_metrics(&[7, 3, 5], &[1, 5, 10]), (5.0, vec![0.0, 200.0 / 3.0, 100.0]));
    }
}
