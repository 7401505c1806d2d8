//! Preference matrices, entity descriptors, rank vectors and pairwise
//! preference constraints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix buffer",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "matrix row",
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Descriptor matrix for users or items; one row per entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityFeatures {
    matrix: DenseMatrix,
    names: Vec<String>,
}

impl EntityFeatures {
    pub fn new(matrix: DenseMatrix, names: Vec<String>) -> Result<Self> {
        if names.len() != matrix.cols() {
            return Err(Error::DimensionMismatch {
                what: "feature names",
                expected: matrix.cols(),
                found: names.len(),
            });
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite("entity features"));
        }
        Ok(Self { matrix, names })
    }

    /// Features with generated column names `f0, f1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let matrix = DenseMatrix::from_rows(rows)?;
        let names = (0..matrix.cols()).map(|c| format!("f{c}")).collect();
        Self::new(matrix, names)
    }

    pub fn n_entities(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            matrix: self.matrix.select_rows(indices),
            names: self.names.clone(),
        }
    }
}

/// Sparse user × item matrix of observed preference scores.
///
/// Entries are stored both row-major (per user) and column-major (per item).
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceMatrix {
    n_users: usize,
    n_items: usize,
    row_ptr: Vec<usize>,
    row_items: Vec<usize>,
    row_scores: Vec<f64>,
    col_ptr: Vec<usize>,
    col_users: Vec<usize>,
    col_scores: Vec<f64>,
}

impl PreferenceMatrix {
    pub fn new(n_users: usize, n_items: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(u, i, s) in &entries {
            if u >= n_users {
                return Err(Error::IndexOutOfRange {
                    what: "users",
                    index: u,
                    size: n_users,
                });
            }
            if i >= n_items {
                return Err(Error::IndexOutOfRange {
                    what: "items",
                    index: i,
                    size: n_items,
                });
            }
            if !s.is_finite() {
                return Err(Error::NonFinite("preference scores"));
            }
            if s < 0.0 {
                return Err(Error::invalid(format!(
                    "negative preference score {s} for user {u}, item {i}"
                )));
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1) {
            return Err(Error::invalid(format!(
                "duplicate entry for user {}, item {}",
                w[0].0, w[0].1
            )));
        }

        let mut row_ptr = vec![0usize; n_users + 1];
        for &(u, _, _) in &entries {
            row_ptr[u + 1] += 1;
        }
        for u in 0..n_users {
            if row_ptr[u + 1] == 0 {
                return Err(Error::invalid(format!("user {u} has no observed entries")));
            }
            row_ptr[u + 1] += row_ptr[u];
        }
        let row_items: Vec<usize> = entries.iter().map(|e| e.1).collect();
        let row_scores: Vec<f64> = entries.iter().map(|e| e.2).collect();

        let mut col_ptr = vec![0usize; n_items + 1];
        for &(_, i, _) in &entries {
            col_ptr[i + 1] += 1;
        }
        for i in 0..n_items {
            col_ptr[i + 1] += col_ptr[i];
        }
        let mut fill = col_ptr.clone();
        let mut col_users = vec![0usize; entries.len()];
        let mut col_scores = vec![0.0; entries.len()];
        // entries are user-sorted, so each column comes out user-sorted too
        for &(u, i, s) in &entries {
            col_users[fill[i]] = u;
            col_scores[fill[i]] = s;
            fill[i] += 1;
        }

        Ok(Self {
            n_users,
            n_items,
            row_ptr,
            row_items,
            row_scores,
            col_ptr,
            col_users,
            col_scores,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_entries(&self) -> usize {
        self.row_items.len()
    }

    /// Observed items of `user`, ascending.
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.row_items[self.row_ptr[user]..self.row_ptr[user + 1]]
    }

    pub fn user_scores(&self, user: usize) -> &[f64] {
        &self.row_scores[self.row_ptr[user]..self.row_ptr[user + 1]]
    }

    /// Range of global entry indices belonging to `user`.
    pub fn user_entries(&self, user: usize) -> std::ops::Range<usize> {
        self.row_ptr[user]..self.row_ptr[user + 1]
    }

    /// Users who observed `item`, ascending.
    pub fn item_users(&self, item: usize) -> &[usize] {
        &self.col_users[self.col_ptr[item]..self.col_ptr[item + 1]]
    }

    pub fn item_scores(&self, item: usize) -> &[f64] {
        &self.col_scores[self.col_ptr[item]..self.col_ptr[item + 1]]
    }

    pub fn get(&self, user: usize, item: usize) -> Option<f64> {
        let items = self.user_items(user);
        items
            .binary_search(&item)
            .ok()
            .map(|pos| self.user_scores(user)[pos])
    }

    /// All entries in (user, item) order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_users).flat_map(move |u| {
            self.user_items(u)
                .iter()
                .zip(self.user_scores(u))
                .map(move |(&i, &s)| (u, i, s))
        })
    }

    /// Apply `f` to every score; the result must remain a valid matrix.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let entries = self.entries().map(|(u, i, s)| (u, i, f(s))).collect();
        Self::new(self.n_users, self.n_items, entries)
    }

    pub fn min_max_score(&self) -> (f64, f64) {
        self.row_scores
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)))
    }
}

/// Ranks of scored elements, 1 = highest score.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankVector(Vec<usize>);

impl RankVector {
    /// Wrap an existing rank vector, checking that it is a permutation of 1..=M.
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; ranks.len()];
        for &r in &ranks {
            if r == 0 || r > ranks.len() || seen[r - 1] {
                return Err(Error::invalid(format!(
                    "ranks are not a permutation of 1..={}",
                    ranks.len()
                )));
            }
            seen[r - 1] = true;
        }
        Ok(Self(ranks))
    }

    pub fn ranks(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

/// Element indices ordered by descending score; ties by ascending index.
pub(crate) fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn rank_descending(scores: &[f64]) -> Result<RankVector> {
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let mut ranks = vec![0; scores.len()];
    for (pos, idx) in descending_order(scores).into_iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    Ok(RankVector(ranks))
}

/// Ordered pairs (j, k) with `labels[j] > labels[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn pair_constraints(labels: &[f64]) -> Result<PairSet> {
    if labels.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("labels"));
    }
    let mut pairs = Vec::new();
    for (j, &yj) in labels.iter().enumerate() {
        for (k, &yk) in labels.iter().enumerate() {
            if yj > yk {
                pairs.push((j, k));
            }
        }
    }
    Ok(PairSet { pairs })
}

/// A preference matrix together with the descriptors of its users and items.
///
/// `user_ids` / `item_ids` map local indices back to the indices of the
/// problem this dataset was carved from.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub prefs: PreferenceMatrix,
    pub users: EntityFeatures,
    pub items: EntityFeatures,
    pub user_ids: Vec<usize>,
    pub item_ids: Vec<usize>,
}

impl Dataset {
    pub fn new(prefs: PreferenceMatrix, users: EntityFeatures, items: EntityFeatures) -> Result<Self> {
        if users.n_entities() != prefs.n_users() {
            return Err(Error::DimensionMismatch {
                what: "user features rows",
                expected: prefs.n_users(),
                found: users.n_entities(),
            });
        }
        if items.n_entities() != prefs.n_items() {
            return Err(Error::DimensionMismatch {
                what: "item features rows",
                expected: prefs.n_items(),
                found: items.n_entities(),
            });
        }
        let user_ids = (0..prefs.n_users()).collect();
        let item_ids = (0..prefs.n_items()).collect();
        Ok(Self {
            prefs,
            users,
            items,
            user_ids,
            item_ids,
        })
    }

    /// Restrict to `users` × `items` (local indices) keeping only the entries
    /// accepted by `keep(user, item, entry_index)`. Users left without any
    /// entry are dropped; items are kept even when unobserved.
    pub fn subset(
        &self,
        users: &[usize],
        items: &[usize],
        keep: impl Fn(usize, usize, usize) -> bool,
    ) -> Result<Dataset> {
        let mut item_pos = vec![usize::MAX; self.prefs.n_items()];
        for (new, &old) in items.iter().enumerate() {
            item_pos[old] = new;
        }
        let mut kept_users = Vec::new();
        let mut entries = Vec::new();
        for &u in users {
            let before = entries.len();
            for e in self.prefs.user_entries(u) {
                let item = self.prefs.row_items[e];
                if item_pos[item] != usize::MAX && keep(u, item, e) {
                    entries.push((kept_users.len(), item_pos[item], self.prefs.row_scores[e]));
                }
            }
            if entries.len() > before {
                kept_users.push(u);
            }
        }
        if kept_users.is_empty() {
            return Err(Error::Empty("subset has no observed entries"));
        }
        let prefs = PreferenceMatrix::new(kept_users.len(), items.len(), entries)?;
        Ok(Dataset {
            prefs,
            users: self.users.select(&kept_users),
            items: self.items.select(items),
            user_ids: kept_users.iter().map(|&u| self.user_ids[u]).collect(),
            item_ids: items.iter().map(|&i| self.item_ids[i]).collect(),
        })
    }

    pub fn n_pairs(&self) -> usize {
        (0..self.prefs.n_users())
            .map(|u| {
                let s = self.prefs.user_scores(u);
                let mut sorted = s.to_vec();
                sorted.sort_by(f64::total_cmp);
                let m = sorted.len();
                let mut ties = 0;
                let mut start = 0;
                for end in 1..=m {
                    if end == m || sorted[end] != sorted[start] {
                        let run = end - start;
                        ties += run * (run - 1) / 2;
                        start = end;
                    }
                }
                m * (m - 1) / 2 - ties
            })
            .sum()
    }
}
