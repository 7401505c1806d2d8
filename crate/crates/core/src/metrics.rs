//! DCG/NDCG at a truncation level and pairwise swap deltas.

use serde::{Deserialize, Serialize};

use crate::data::{rank_descending, RankVector};
use crate::error::{Error, Result};

/// Rank cutoff `k >= 1` at which DCG is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct TruncationLevel(usize);

impl TruncationLevel {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("truncation level must be >= 1"));
        }
        Ok(Self(k))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for TruncationLevel {
    type Error = Error;

    fn try_from(k: usize) -> Result<Self> {
        Self::new(k)
    }
}

impl From<TruncationLevel> for usize {
    fn from(k: TruncationLevel) -> usize {
        k.0
    }
}

impl std::fmt::Display for TruncationLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[inline]
pub(crate) fn gain(label: f64) -> f64 {
    label.exp2() - 1.0
}

/// Position discount of a 1-based rank, zero beyond the cutoff.
#[inline]
pub(crate) fn discount(rank: usize, k: TruncationLevel) -> f64 {
    if rank <= k.0 {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn dcg_at_k(labels: &[f64], ranks: &RankVector, k: TruncationLevel) -> Result<f64> {
    if labels.len() != ranks.len() {
        return Err(Error::DimensionMismatch {
            what: "labels vs ranks",
            expected: labels.len(),
            found: ranks.len(),
        });
    }
    // summed in rank order so a perfect ranking reproduces the ideal DCG bit for bit
    let mut by_rank = vec![0.0; labels.len()];
    for (&y, &r) in labels.iter().zip(ranks.ranks()) {
        by_rank[r - 1] = gain(y) * discount(r, k);
    }
    Ok(by_rank.iter().sum())
}

/// DCG of the label-sorted ordering.
pub(crate) fn ideal_dcg(labels: &[f64], k: TruncationLevel) -> f64 {
    let mut sorted = labels.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
        .iter()
        .take(k.0)
        .enumerate()
        .map(|(pos, &y)| gain(y) * discount(pos + 1, k))
        .sum()
}

/// NDCG@k of `predicted_scores` against ground-truth `labels`.
///
/// All-zero labels have zero ideal DCG; any ordering is then perfect and the
/// result is 1.0.
pub fn ndcg_at_k(labels: &[f64], predicted_scores: &[f64], k: TruncationLevel) -> Result<f64> {
    if labels.len() != predicted_scores.len() {
        return Err(Error::DimensionMismatch {
            what: "labels vs scores",
            expected: labels.len(),
            found: predicted_scores.len(),
        });
    }
    if labels.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite("labels"));
    }
    let ranks = rank_descending(predicted_scores)?;
    let ideal = ideal_dcg(labels, k);
    if ideal == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg_at_k(labels, &ranks, k)? / ideal)
}

/// NDCG change from swapping the labels of elements `j` and `k` under a fixed
/// predicted ranking. Positive when the higher-labelled element is ranked
/// above the other.
pub fn swap_delta_ndcg(
    labels: &[f64],
    predicted_ranks: &RankVector,
    j: usize,
    k: usize,
    trunc: TruncationLevel,
) -> Result<f64> {
    let m = labels.len();
    if predicted_ranks.len() != m {
        return Err(Error::DimensionMismatch {
            what: "labels vs ranks",
            expected: m,
            found: predicted_ranks.len(),
        });
    }
    for idx in [j, k] {
        if idx >= m {
            return Err(Error::IndexOutOfRange {
                what: "labels",
                index: idx,
                size: m,
            });
        }
    }
    if j == k {
        return Err(Error::invalid("swap requires two distinct elements"));
    }
    let ideal = ideal_dcg(labels, trunc);
    Ok(swap_delta_with_ideal(labels[j], labels[k], predicted_ranks.ranks()[j], predicted_ranks.ranks()[k], ideal, trunc))
}

/// Fast form of the swap delta: gain difference times discount difference.
#[inline]
pub(crate) fn swap_delta_with_ideal(
    y_j: f64,
    y_k: f64,
    rank_j: usize,
    rank_k: usize,
    ideal: f64,
    trunc: TruncationLevel,
) -> f64 {
    if ideal == 0.0 {
        return 0.0;
    }
    (gain(y_j) - gain(y_k)) * (discount(rank_j, trunc) - discount(rank_k, trunc)) / ideal
}

/// Swap delta scaled down by the similarity of the two items.
pub fn weighted_swap_delta(delta: f64, item_similarity: f64) -> f64 {
    delta * (1.0 - item_similarity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn k(v: usize) -> TruncationLevel {
        TruncationLevel::new(v).unwrap()
    }

    fn ranks(r: &[usize]) -> RankVector {
        RankVector::new(r.to_vec()).unwrap()
    }

    #[test]
    fn truncation_rejects_zero() {
        assert!(TruncationLevel::new(0).is_err());
    }

    #[test]
    fn dcg_examples() {
        assert_eq!(dcg_at_k(&[0.0, 0.0, 0.0], &ranks(&[2, 3, 1]), k(3)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            dcg_at_k(&[3.0, 2.0, 1.0], &ranks(&[1, 2, 3]), k(3)).unwrap(),
            9.392789,
            epsilon = 1e-6
        );
        assert_eq!(dcg_at_k(&[3.0, 2.0, 1.0], &ranks(&[1, 2, 3]), k(1)).unwrap(), 7.0);
        assert!(dcg_at_k(&[1.0], &ranks(&[1, 2]), k(1)).is_err());
    }

    #[test]
    fn ndcg_examples() {
        let y = [3.0, 2.0, 1.0];
        assert_eq!(ndcg_at_k(&y, &[0.9, 0.5, 0.1], k(3)).unwrap(), 1.0);
        assert_abs_diff_eq!(ndcg_at_k(&y, &[0.1, 0.5, 0.9], k(3)).unwrap(), 0.680607, epsilon = 1e-6);
        assert_abs_diff_eq!(ndcg_at_k(&y, &[0.1, 0.5, 0.9], k(1)).unwrap(), 0.142857, epsilon = 1e-6);
        assert_eq!(ndcg_at_k(&[0.0, 0.0], &[1.0, 2.0], k(2)).unwrap(), 1.0);
    }

    #[test]
    fn swap_delta_examples() {
        let d = swap_delta_ndcg(&[3.0, 1.0], &ranks(&[1, 2]), 0, 1, k(2)).unwrap();
        assert_abs_diff_eq!(d, 0.290191, epsilon = 1e-6);
        assert_eq!(swap_delta_ndcg(&[2.0, 2.0], &ranks(&[2, 1]), 0, 1, k(2)).unwrap(), 0.0);
        let d = swap_delta_ndcg(&[3.0, 1.0], &ranks(&[2, 1]), 0, 1, k(2)).unwrap();
        assert_abs_diff_eq!(d, -0.290191, epsilon = 1e-6);
        assert!(swap_delta_ndcg(&[3.0, 1.0], &ranks(&[2, 1]), 0, 2, k(2)).is_err());
        assert!(swap_delta_ndcg(&[3.0, 1.0], &ranks(&[2, 1]), 1, 1, k(2)).is_err());
    }

    #[test]
    fn weighted_examples() {
        assert_eq!(weighted_swap_delta(0.5, 1.0), 0.0);
        assert_eq!(weighted_swap_delta(0.5, 0.0), 0.5);
        assert_abs_diff_eq!(weighted_swap_delta(0.290191, 0.5), 0.145096, epsilon = 1e-6);
    }

    #[test]
    fn dcg_non_decreasing_in_k() {
        let y = [1.0, 4.0, 0.0, 2.0, 3.0];
        let r = ranks(&[3, 1, 5, 2, 4]);
        let mut prev = 0.0;
        for cut in 1..=6 {
            let v = dcg_at_k(&y, &r, k(cut)).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
        (2usize..9).prop_flat_map(|m| {
            (
                prop::collection::vec((0u8..6).prop_map(f64::from), m),
                prop::collection::vec(-4i32..4, m).prop_map(|v| v.into_iter().map(f64::from).collect()),
                1..m + 2,
            )
        })
    }

    proptest! {
        #[test]
        fn ndcg_bounded_and_perfect_on_itself((y, s, cut) in instance()) {
            let v = ndcg_at_k(&y, &s, k(cut)).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(ndcg_at_k(&y, &y, k(cut)).unwrap(), 1.0);
        }

        #[test]
        fn dcg_grows_with_k((y, s, cut) in instance()) {
            let r = rank_descending(&s).unwrap();
            prop_assert!(dcg_at_k(&y, &r, k(cut)).unwrap() <= dcg_at_k(&y, &r, k(cut + 1)).unwrap());
        }

        #[test]
        fn swap_delta_is_antisymmetric((y, s, cut) in instance(), a in 0usize..8, b in 0usize..8) {
            let m = y.len();
            let (a, b) = (a % m, b % m);
            prop_assume!(a != b);
            let r = rank_descending(&s).unwrap();
            let mut swapped = r.ranks().to_vec();
            swapped.swap(a, b);
            let swapped = RankVector::new(swapped).unwrap();
            let d = swap_delta_ndcg(&y, &r, a, b, k(cut)).unwrap();
            let e = swap_delta_ndcg(&y, &swapped, a, b, k(cut)).unwrap();
            prop_assert!((d + e).abs() < 1e-12);
        }
    }
}
