//! Memory-based cold-start baselines averaging the ratings of
//! descriptor-space nearest neighbours.

use crate::data::{Dataset, EntityFeatures};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborQuery {
    k: usize,
}

impl NeighborQuery {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("neighbor count must be >= 1"));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl Default for NeighborQuery {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// Indices of the `k` rows closest to `query` in Euclidean distance, ties to
/// the lower index. Returns fewer when there are fewer rows.
pub fn nearest_neighbors(descriptors: &EntityFeatures, query: &[f64], k: usize) -> Result<Vec<usize>> {
    if query.len() != descriptors.dim() {
        return Err(Error::DimensionMismatch {
            what: "query descriptor",
            expected: descriptors.dim(),
            found: query.len(),
        });
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query descriptor"));
    }
    let mut dist: Vec<(f64, usize)> = (0..descriptors.n_entities())
        .map(|e| {
            let d: f64 = descriptors.row(e).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, e)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(dist.into_iter().take(k).map(|(_, e)| e).collect())
}

/// Per-item mean of the neighbours' observed ratings, 0 where none of them
/// rated the item. Indexed by the training items.
pub fn user_memory_scores(new_user: &[f64], train: &Dataset, q: NeighborQuery) -> Result<Vec<f64>> {
    if train.prefs.n_users() == 0 {
        return Err(Error::Empty("training users"));
    }
    let neighbors = nearest_neighbors(&train.users, new_user, q.k)?;
    let m = train.prefs.n_items();
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for &u in &neighbors {
        for (&j, &y) in train.prefs.user_items(u).iter().zip(train.prefs.user_scores(u)) {
            sums[j] += y;
            counts[j] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect())
}

/// Mean observed rating over the cross product of the user's and the item's
/// neighbourhoods, 0 when no cell of it is observed.
pub fn full_memory_score(new_user: &[f64], new_item: &[f64], train: &Dataset, q: NeighborQuery) -> Result<f64> {
    let user_nbrs = full_memory_neighbors(new_user, train, q)?;
    let item_nbrs = nearest_neighbors(&train.items, new_item, q.k)?;
    Ok(cross_mean(train, &user_nbrs, &item_nbrs))
}

pub(crate) fn full_memory_neighbors(new_user: &[f64], train: &Dataset, q: NeighborQuery) -> Result<Vec<usize>> {
    if train.prefs.n_users() == 0 {
        return Err(Error::Empty("training users"));
    }
    if train.prefs.n_items() == 0 {
        return Err(Error::Empty("training items"));
    }
    nearest_neighbors(&train.users, new_user, q.k)
}

pub(crate) fn cross_mean(train: &Dataset, users: &[usize], items: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &u in users {
        for &j in items {
            if let Some(y) = train.prefs.get(u, j) {
                sum += y;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PreferenceMatrix;
    use proptest::prelude::*;

    fn train(entries: Vec<(usize, usize, f64)>, users: Vec<Vec<f64>>, items: Vec<Vec<f64>>) -> Dataset {
        let prefs = PreferenceMatrix::new(users.len(), items.len(), entries).unwrap();
        Dataset::new(
            prefs,
            EntityFeatures::from_rows(&users).unwrap(),
            EntityFeatures::from_rows(&items).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn user_baseline_examples() {
        let users: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let mut entries: Vec<_> = (0..5).map(|u| (u, 0, 4.0)).collect();
        entries.push((0, 1, 2.0));
        entries.push((1, 1, 4.0));
        entries.push((5, 2, 1.0));
        let d = train(entries, users, vec![vec![0.0], vec![1.0], vec![2.0]]);
        let s = user_memory_scores(&[0.0], &d, NeighborQuery::default()).unwrap();
        assert_eq!(s, vec![4.0, 3.0, 0.0]);
        // fewer training users than k uses them all
        let s = user_memory_scores(&[0.0], &d, NeighborQuery::new(50).unwrap()).unwrap();
        assert_eq!(s[2], 1.0);
    }

    #[test]
    fn full_baseline_examples() {
        let users: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let items: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let mut entries = Vec::new();
        let mut n = 0;
        for u in 0..5 {
            for j in 0..5 {
                entries.push((u, j, if n < 12 { 1.0 } else { 3.0 }));
                n += 1;
            }
        }
        let d = train(entries, users.clone(), items.clone());
        let s = full_memory_score(&[0.0], &[0.0], &d, NeighborQuery::default()).unwrap();
        assert!((s - 2.04).abs() < 1e-12);

        let entries = (0..5).map(|u| (u, 4, 5.0)).collect();
        let d = train(entries, users, items);
        let q = NeighborQuery::new(2).unwrap();
        assert_eq!(full_memory_score(&[0.0], &[0.0], &d, q).unwrap(), 0.0);
        assert_eq!(full_memory_score(&[0.0], &[4.0], &d, q).unwrap(), 5.0);
    }

    #[test]
    fn neighbor_ties_go_to_lower_index() {
        let f = EntityFeatures::from_rows(&[vec![1.0], vec![-1.0], vec![1.0]]).unwrap();
        assert_eq!(nearest_neighbors(&f, &[0.0], 2).unwrap(), vec![0, 1]);
        assert!(nearest_neighbors(&f, &[0.0, 1.0], 2).is_err());
    }

    proptest! {
        #[test]
        fn scores_bounded_by_observed_range(
            ratings in proptest::collection::vec(proptest::option::of(0.0f64..5.0), 12),
            query in -3.0f64..3.0,
        ) {
            let mut entries = Vec::new();
            for u in 0..4 {
                entries.push((u, 0, 1.0 + u as f64));
                for j in 1..4 {
                    if let Some(y) = ratings[u * 3 + j - 1] {
                        entries.push((u, j, y));
                    }
                }
            }
            let users: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.7]).collect();
            let items: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
            let d = train(entries, users, items);
            let (lo, hi) = d.prefs.min_max_score();
            let q = NeighborQuery::new(2).unwrap();
            for s in user_memory_scores(&[query], &d, q).unwrap() {
                prop_assert!(s == 0.0 || (lo..=hi).contains(&s));
            }
            let s = full_memory_score(&[query], &[query], &d, q).unwrap();
            prop_assert!(s == 0.0 || (lo..=hi).contains(&s));
        }

        #[test]
        fn user_order_does_not_matter(
            ratings in proptest::collection::vec(proptest::option::of(0u8..6), 24),
            order_key in proptest::collection::vec(any::<u32>(), 6),
            query in 0i32..6,
        ) {
            // query off the half-integers keeps every distance distinct
            let q = [f64::from(query) + 0.37];
            let mut order: Vec<usize> = (0..6).collect();
            order.sort_by_key(|&u| (order_key[u], u));
            let build = |perm: &[usize]| {
                let mut entries = Vec::new();
                for (slot, &u) in perm.iter().enumerate() {
                    entries.push((slot, 0, 1.0));
                    for j in 1..4 {
                        if let Some(y) = ratings[u * 4 + j] {
                            entries.push((slot, j, f64::from(y)));
                        }
                    }
                }
                let users = perm.iter().map(|&u| vec![u as f64]).collect();
                train(entries, users, (0..4).map(|j| vec![j as f64 * 1.1]).collect())
            };
            let a = build(&[0, 1, 2, 3, 4, 5]);
            let b = build(&order);
            let nq = NeighborQuery::new(3).unwrap();
            prop_assert_eq!(user_memory_scores(&q, &a, nq).unwrap(), user_memory_scores(&q, &b, nq).unwrap());
            prop_assert_eq!(
                full_memory_score(&q, &[1.3], &a, nq).unwrap(),
                full_memory_score(&q, &[1.3], &b, nq).unwrap()
            );
        }
    }
}
