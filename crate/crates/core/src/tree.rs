//! Axis-aligned binary regression trees with vector-valued leaves.
//!
//! Trees are grown best-first: the open leaf whose best split removes the
//! most squared error (summed over output dimensions) is split next, until
//! the leaf budget is spent or no admissible split reduces the error.
//! Candidate thresholds are midpoints between consecutive distinct feature
//! values among a node's rows; rows with `x <= threshold` go left.

use serde::{Deserialize, Serialize};

use crate::data::{DenseMatrix, EntityFeatures};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_leaves: usize,
    /// Each leaf must hold at least this fraction of the training rows.
    pub min_leaf_fraction: f64,
    pub output_dim: usize,
}

impl TreeParams {
    pub fn new(max_leaves: usize, min_leaf_fraction: f64, output_dim: usize) -> Result<Self> {
        let p = Self {
            max_leaves,
            min_leaf_fraction,
            output_dim,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_leaves < 2 {
            return Err(Error::invalid("max_leaves must be >= 2"));
        }
        if !(self.min_leaf_fraction > 0.0 && self.min_leaf_fraction <= 1.0) {
            return Err(Error::invalid("min_leaf_fraction must lie in (0, 1]"));
        }
        if self.output_dim == 0 {
            return Err(Error::invalid("output_dim must be >= 1"));
        }
        Ok(())
    }

    /// Minimum rows per leaf for a training set of `n_rows` (at least one).
    pub fn min_leaf_rows(&self, n_rows: usize) -> usize {
        // the small slack keeps e.g. (1/6)·6 from rounding up to 2
        ((self.min_leaf_fraction * n_rows as f64) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Child {
    Node(usize),
    Leaf(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitNode {
    pub feature: usize,
    pub threshold: f64,
    pub left: Child,
    pub right: Child,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    pub values: Vec<f64>,
}

/// `nodes[0]` is the root when `nodes` is non-empty; otherwise the tree is
/// the single leaf `leaves[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<SplitNode>,
    pub leaves: Vec<Leaf>,
}

impl RegressionTree {
    pub fn constant(values: Vec<f64>) -> Self {
        Self {
            nodes: Vec::new(),
            leaves: vec![Leaf { values }],
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn output_dim(&self) -> usize {
        self.leaves.first().map_or(0, |l| l.values.len())
    }

    /// Largest feature index referenced by a split, if any.
    pub fn max_feature(&self) -> Option<usize> {
        self.nodes.iter().map(|n| n.feature).max()
    }

    /// Leaf reached by `row`. Unchecked: callers validate the row.
    #[inline]
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        if self.nodes.is_empty() {
            return 0;
        }
        let mut node = &self.nodes[0];
        loop {
            let next = if row[node.feature] <= node.threshold {
                node.left
            } else {
                node.right
            };
            match next {
                Child::Node(i) => node = &self.nodes[i],
                Child::Leaf(i) => return i,
            }
        }
    }

    #[inline]
    pub fn leaf_values(&self, row: &[f64]) -> &[f64] {
        &self.leaves[self.leaf_index(row)].values
    }

    /// Structural sanity check, used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.leaves.is_empty() {
            return Err(Error::invalid("tree has no leaves"));
        }
        if self.leaves.len() != self.nodes.len() + 1 {
            return Err(Error::invalid("tree must have exactly one more leaf than split nodes"));
        }
        let dim = self.output_dim();
        if self.leaves.iter().any(|l| l.values.len() != dim || l.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("tree leaves must be finite and share one dimension"));
        }
        let mut seen_nodes = vec![false; self.nodes.len()];
        let mut seen_leaves = vec![false; self.leaves.len()];
        if !self.nodes.is_empty() {
            seen_nodes[0] = true;
        }
        for node in &self.nodes {
            if !node.threshold.is_finite() {
                return Err(Error::NonFinite("tree threshold"));
            }
            for child in [node.left, node.right] {
                let (seen, idx) = match child {
                    Child::Node(i) => (&mut seen_nodes, i),
                    Child::Leaf(i) => (&mut seen_leaves, i),
                };
                if idx >= seen.len() || seen[idx] {
                    return Err(Error::invalid("tree children must reference each node once"));
                }
                seen[idx] = true;
            }
        }
        if self.nodes.is_empty() {
            seen_leaves[0] = true;
        }
        if seen_nodes.iter().chain(&seen_leaves).any(|s| !s) {
            return Err(Error::invalid("tree has unreachable nodes"));
        }
        Ok(())
    }
}

/// Leaf vector reached by `row`.
pub fn predict_tree(tree: &RegressionTree, row: &[f64]) -> Result<Vec<f64>> {
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("tree input row"));
    }
    if let Some(f) = tree.max_feature() {
        if f >= row.len() {
            return Err(Error::DimensionMismatch {
                what: "tree input row",
                expected: f + 1,
                found: row.len(),
            });
        }
    }
    Ok(tree.leaf_values(row).to_vec())
}

/// Replace each leaf value by one Newton step −Σg/Σh over its rows.
/// Leaves whose curvature sum vanishes keep their current value.
pub fn newton_leaf_refit(tree: &RegressionTree, leaf_of_row: &[usize], grad: &[f64], hess: &[f64]) -> Result<RegressionTree> {
    if tree.output_dim() != 1 {
        return Err(Error::invalid("Newton refit applies to scalar trees only"));
    }
    if grad.len() != leaf_of_row.len() || hess.len() != leaf_of_row.len() {
        return Err(Error::DimensionMismatch {
            what: "per-row derivatives",
            expected: leaf_of_row.len(),
            found: grad.len().min(hess.len()),
        });
    }
    let n = tree.n_leaves();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for ((&leaf, &gi), &hi) in leaf_of_row.iter().zip(grad).zip(hess) {
        if leaf >= n {
            return Err(Error::IndexOutOfRange {
                what: "leaves",
                index: leaf,
                size: n,
            });
        }
        g[leaf] += gi;
        h[leaf] += hi;
    }
    let mut out = tree.clone();
    for (leaf, (gs, hs)) in out.leaves.iter_mut().zip(g.iter().zip(&h)) {
        if hs.abs() > 1e-12 {
            leaf.values[0] = -gs / hs;
        }
    }
    Ok(out)
}

/// A freshly fitted tree together with the leaf each training row fell into.
#[derive(Debug, Clone)]
pub struct FittedTree {
    pub tree: RegressionTree,
    pub leaf_of_row: Vec<usize>,
}

/// Column-major copy of a feature matrix with every column's row order
/// presorted. Built once and reused across boosting iterations.
#[derive(Debug, Clone)]
pub struct SplitSearch {
    n_rows: usize,
    columns: Vec<Vec<f64>>,
    sorted: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct OpenLeaf {
    arena: usize,
    rows: Vec<Vec<u32>>,
    sums: Vec<f64>,
    best: Option<Candidate>,
}

enum ArenaNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(Vec<f64>),
    Pending,
}

impl SplitSearch {
    pub fn new(features: &DenseMatrix) -> Result<Self> {
        if !features.is_finite() {
            return Err(Error::NonFinite("tree features"));
        }
        if features.rows() > u32::MAX as usize {
            return Err(Error::invalid("too many rows for tree fitting"));
        }
        let n = features.rows();
        let columns: Vec<Vec<f64>> = (0..features.cols())
            .map(|c| (0..n).map(|r| features.get(r, c)).collect())
            .collect();
        let sorted = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Ok(Self {
            n_rows: n,
            columns,
            sorted,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    /// Fit a tree to row-major `targets` (n_rows × params.output_dim).
    pub fn fit(&self, targets: &[f64], params: &TreeParams) -> Result<FittedTree> {
        params.validate()?;
        let dim = params.output_dim;
        if self.n_rows == 0 {
            return Err(Error::Empty("tree training rows"));
        }
        if targets.len() != self.n_rows * dim {
            return Err(Error::DimensionMismatch {
                what: "tree targets",
                expected: self.n_rows * dim,
                found: targets.len(),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("tree targets"));
        }
        let min_rows = params.min_leaf_rows(self.n_rows);

        let mut sums = vec![0.0; dim];
        for r in 0..self.n_rows {
            for (s, t) in sums.iter_mut().zip(&targets[r * dim..(r + 1) * dim]) {
                *s += t;
            }
        }
        let mut arena = vec![ArenaNode::Pending];
        let mut root = OpenLeaf {
            arena: 0,
            rows: self.sorted.clone(),
            sums,
            best: None,
        };
        root.best = self.best_split(&root, targets, dim, min_rows);
        let mut open = vec![root];
        let mut n_leaves = 1;
        let mut go_left = vec![false; self.n_rows];

        while n_leaves < params.max_leaves {
            // best gain first; earliest-created leaf wins ties
            let mut pick: Option<(usize, f64)> = None;
            for (i, leaf) in open.iter().enumerate() {
                if let Some(c) = leaf.best {
                    if pick.map_or(true, |(_, g)| c.gain > g) {
                        pick = Some((i, c.gain));
                    }
                }
            }
            let Some((pos, _)) = pick else { break };
            let leaf = open.remove(pos);
            let cand = leaf.best.expect("picked leaf has a candidate");

            let col = &self.columns[cand.feature];
            for &r in &leaf.rows[0] {
                go_left[r as usize] = col[r as usize] <= cand.threshold;
            }
            let mut left_rows = Vec::with_capacity(leaf.rows.len());
            let mut right_rows = Vec::with_capacity(leaf.rows.len());
            for list in &leaf.rows {
                let (l, r): (Vec<u32>, Vec<u32>) = list.iter().partition(|&&r| go_left[r as usize]);
                left_rows.push(l);
                right_rows.push(r);
            }
            let mut left_sums = vec![0.0; dim];
            for &r in &left_rows[0] {
                for (s, t) in left_sums.iter_mut().zip(&targets[r as usize * dim..(r as usize + 1) * dim]) {
                    *s += t;
                }
            }
            let right_sums: Vec<f64> = leaf.sums.iter().zip(&left_sums).map(|(s, l)| s - l).collect();

            let left_id = arena.len();
            arena.push(ArenaNode::Pending);
            let right_id = arena.len();
            arena.push(ArenaNode::Pending);
            arena[leaf.arena] = ArenaNode::Split {
                feature: cand.feature,
                threshold: cand.threshold,
                left: left_id,
                right: right_id,
            };
            for (id, rows, sums) in [(left_id, left_rows, left_sums), (right_id, right_rows, right_sums)] {
                let mut child = OpenLeaf {
                    arena: id,
                    rows,
                    sums,
                    best: None,
                };
                child.best = self.best_split(&child, targets, dim, min_rows);
                open.push(child);
            }
            n_leaves += 1;
        }

        let mut leaf_of_arena = vec![usize::MAX; arena.len()];
        let mut row_arena = vec![0usize; self.n_rows];
        for leaf in &open {
            let count = leaf.rows[0].len() as f64;
            arena[leaf.arena] = ArenaNode::Leaf(leaf.sums.iter().map(|s| s / count).collect());
            for &r in &leaf.rows[0] {
                row_arena[r as usize] = leaf.arena;
            }
        }
        let tree = flatten(&arena, &mut leaf_of_arena);
        let leaf_of_row = row_arena.iter().map(|&a| leaf_of_arena[a]).collect();
        Ok(FittedTree { tree, leaf_of_row })
    }

    fn best_split(&self, leaf: &OpenLeaf, targets: &[f64], dim: usize, min_rows: usize) -> Option<Candidate> {
        let n = leaf.rows[0].len();
        if n < 2 * min_rows {
            return None;
        }
        let total: f64 = leaf.sums.iter().map(|s| s * s).sum::<f64>() / n as f64;
        let mut sumsq = 0.0;
        for &r in &leaf.rows[0] {
            sumsq += targets[r as usize * dim..(r as usize + 1) * dim].iter().map(|t| t * t).sum::<f64>();
        }
        let tol = 1e-12 * sumsq;

        let mut best: Option<Candidate> = None;
        let mut bounds = Vec::new();
        let mut acc = vec![0.0; dim];
        let mut side = vec![0.0; dim];
        for (f, rows) in leaf.rows.iter().enumerate() {
            let col = &self.columns[f];
            // group starts: positions where the feature value changes
            bounds.clear();
            bounds.push(0);
            for p in 1..n {
                if col[rows[p] as usize] != col[rows[p - 1] as usize] {
                    bounds.push(p);
                }
            }
            if bounds.len() < 2 {
                continue;
            }
            bounds.push(n);
            let n_groups = bounds.len() - 1;
            // the largest group is never visited: prefix sums cover the
            // boundaries before it, suffix sums the boundaries after it
            let largest = (0..n_groups)
                .max_by_key(|&g| (bounds[g + 1] - bounds[g], std::cmp::Reverse(g)))
                .unwrap();

            let consider = |b: usize, left_sums: &[f64], best: &mut Option<Candidate>| {
                let n_left = bounds[b];
                let n_right = n - n_left;
                if n_left < min_rows || n_right < min_rows {
                    return;
                }
                let mut score = 0.0;
                for (l, s) in left_sums.iter().zip(&leaf.sums) {
                    let r = s - l;
                    score += l * l / n_left as f64 + r * r / n_right as f64;
                }
                let gain = score - total;
                if gain > tol && best.map_or(true, |c| gain > c.gain + tol) {
                    let lo = col[rows[n_left - 1] as usize];
                    let hi = col[rows[n_left] as usize];
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi || threshold < lo {
                        threshold = lo;
                    }
                    *best = Some(Candidate {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            };

            // boundaries b = 1..n_groups sit between group b-1 and group b
            let mut found: Vec<(usize, Vec<f64>)> = Vec::new();
            acc.iter_mut().for_each(|a| *a = 0.0);
            for g in 0..largest {
                for &r in &rows[bounds[g]..bounds[g + 1]] {
                    for (a, t) in acc.iter_mut().zip(&targets[r as usize * dim..(r as usize + 1) * dim]) {
                        *a += t;
                    }
                }
                found.push((g + 1, acc.clone()));
            }
            side.iter_mut().for_each(|a| *a = 0.0);
            let mut tail: Vec<(usize, Vec<f64>)> = Vec::new();
            for g in (largest + 1..n_groups).rev() {
                for &r in &rows[bounds[g]..bounds[g + 1]] {
                    for (a, t) in side.iter_mut().zip(&targets[r as usize * dim..(r as usize + 1) * dim]) {
                        *a += t;
                    }
                }
                let left: Vec<f64> = leaf.sums.iter().zip(&side).map(|(s, r)| s - r).collect();
                tail.push((g, left));
            }
            found.extend(tail.into_iter().rev());
            for (b, left) in &found {
                consider(*b, left, &mut best);
            }
        }
        best
    }
}

fn flatten(arena: &[ArenaNode], leaf_of_arena: &mut [usize]) -> RegressionTree {
    let mut nodes = Vec::new();
    let mut leaves = Vec::new();
    fn visit(
        id: usize,
        arena: &[ArenaNode],
        nodes: &mut Vec<SplitNode>,
        leaves: &mut Vec<Leaf>,
        leaf_of_arena: &mut [usize],
    ) -> Child {
        match &arena[id] {
            ArenaNode::Leaf(values) => {
                leaf_of_arena[id] = leaves.len();
                leaves.push(Leaf { values: values.clone() });
                Child::Leaf(leaves.len() - 1)
            }
            ArenaNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let me = nodes.len();
                nodes.push(SplitNode {
                    feature: *feature,
                    threshold: *threshold,
                    left: Child::Leaf(0),
                    right: Child::Leaf(0),
                });
                let l = visit(*left, arena, nodes, leaves, leaf_of_arena);
                let r = visit(*right, arena, nodes, leaves, leaf_of_arena);
                nodes[me].left = l;
                nodes[me].right = r;
                Child::Node(me)
            }
            ArenaNode::Pending => unreachable!("every arena slot is resolved before flattening"),
        }
    }
    visit(0, arena, &mut nodes, &mut leaves, leaf_of_arena);
    RegressionTree { nodes, leaves }
}

pub fn fit_tree(features: &EntityFeatures, targets: &DenseMatrix, params: &TreeParams) -> Result<RegressionTree> {
    if features.n_entities() != targets.rows() {
        return Err(Error::DimensionMismatch {
            what: "tree targets rows",
            expected: features.n_entities(),
            found: targets.rows(),
        });
    }
    if targets.cols() != params.output_dim {
        return Err(Error::DimensionMismatch {
            what: "tree targets columns",
            expected: params.output_dim,
            found: targets.cols(),
        });
    }
    let search = SplitSearch::new(features.matrix())?;
    Ok(search.fit(targets.as_slice(), params)?.tree)
}
