//! Entity similarity graphs: heat-kernel similarities over descriptors,
//! NDCG-based similarities over preference vectors, and their blend.

use std::io::Write;

use crate::data::{EntityFeatures, PreferenceMatrix};
use crate::error::{Error, Result};
use crate::metrics::{ndcg_at_k, TruncationLevel};

pub const DEFAULT_NEIGHBORS: usize = 5;

/// Symmetric similarity matrix with unit diagonal plus each entity's
/// k most similar other entities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    size: usize,
    matrix: Vec<f64>,
    neighborhoods: Vec<Vec<usize>>,
    k_neighbors: usize,
}

impl SimilarityGraph {
    /// Build from a full row-major matrix. The matrix must already be
    /// symmetric with finite entries; the diagonal is forced to 1.
    pub fn from_matrix(size: usize, mut matrix: Vec<f64>, k_neighbors: usize) -> Result<Self> {
        if matrix.len() != size * size {
            return Err(Error::DimensionMismatch {
                what: "similarity matrix",
                expected: size * size,
                found: matrix.len(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("similarity matrix"));
        }
        for i in 0..size {
            matrix[i * size + i] = 1.0;
            for j in 0..i {
                if matrix[i * size + j] != matrix[j * size + i] {
                    return Err(Error::invalid(format!("similarity matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        let neighborhoods = nearest(size, &matrix, k_neighbors);
        Ok(Self {
            size,
            matrix,
            neighborhoods,
            k_neighbors,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn k_neighbors(&self) -> usize {
        self.k_neighbors
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.size..(i + 1) * self.size]
    }

    /// The k most similar other entities of `i`, most similar first.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighborhoods[i]
    }

    /// Undirected kNN adjacency: `j` is adjacent to `i` when either lists the
    /// other among its nearest neighbours. Lists are ascending.
    pub fn symmetric_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.size];
        for (i, list) in self.neighborhoods.iter().enumerate() {
            for &j in list {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Writes `row,col,value` lines, header included.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "value"])?;
        for i in 0..self.size {
            for j in 0..self.size {
                w.write_record([i.to_string(), j.to_string(), self.get(i, j).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("similarity csv", e))?;
        Ok(())
    }
}

fn nearest(size: usize, matrix: &[f64], k: usize) -> Vec<Vec<usize>> {
    let take = k.min(size.saturating_sub(1));
    (0..size)
        .map(|i| {
            let row = &matrix[i * size..(i + 1) * size];
            let mut others: Vec<usize> = (0..size).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            others.truncate(take);
            others
        })
        .collect()
}

/// Inverse squared length scale of the heat kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelWidth(f64);

impl KernelWidth {
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::invalid(format!("kernel width must be finite and > 0, got {sigma}")));
        }
        Ok(Self(sigma))
    }

    pub fn sigma(self) -> f64 {
        self.0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// σ = 1 / (mean pairwise Euclidean distance)², averaged over unordered
/// distinct pairs.
pub fn kernel_width(descriptors: &EntityFeatures) -> Result<KernelWidth> {
    let n = descriptors.n_entities();
    if n < 2 {
        return Err(Error::invalid("kernel width needs at least two entities"));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += sq_dist(descriptors.row(i), descriptors.row(j)).sqrt();
        }
    }
    let mean = total / (n * (n - 1) / 2) as f64;
    if mean == 0.0 {
        return Err(Error::Degenerate("all entities have identical descriptors".into()));
    }
    KernelWidth::new(1.0 / (mean * mean))
}

pub fn input_similarity(descriptors: &EntityFeatures, width: KernelWidth, k_neighbors: usize) -> Result<SimilarityGraph> {
    let n = descriptors.n_entities();
    let mut matrix = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = (-width.0 * sq_dist(descriptors.row(i), descriptors.row(j))).exp();
            matrix[i * n + j] = s;
            matrix[j * n + i] = s;
        }
    }
    SimilarityGraph::from_matrix(n, matrix, k_neighbors)
}

/// d = ½((1 − NDCG@k(a, b)) + (1 − NDCG@k(b, a))), where NDCG@k(a, b) ranks
/// by `b` and scores against `a`. Both vectors cover the same support.
pub fn output_distance(y_a: &[f64], y_b: &[f64], k: TruncationLevel) -> Result<f64> {
    if y_a.len() != y_b.len() {
        return Err(Error::DimensionMismatch {
            what: "preference vectors",
            expected: y_a.len(),
            found: y_b.len(),
        });
    }
    if y_a.is_empty() {
        return Err(Error::Empty("common support"));
    }
    let ab = ndcg_at_k(y_a, y_b, k)?;
    let ba = ndcg_at_k(y_b, y_a, k)?;
    Ok(0.5 * ((1.0 - ab) + (1.0 - ba)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Users,
    Items,
}

/// exp(−d) between preference vectors of every pair of users (or items),
/// computed over their commonly observed support. Pairs without common
/// support get similarity 0.
pub fn output_similarity(
    preferences: &PreferenceMatrix,
    axis: Axis,
    k: TruncationLevel,
    k_neighbors: usize,
) -> Result<SimilarityGraph> {
    let n = match axis {
        Axis::Users => preferences.n_users(),
        Axis::Items => preferences.n_items(),
    };
    let support = |e: usize| -> (&[usize], &[f64]) {
        match axis {
            Axis::Users => (preferences.user_items(e), preferences.user_scores(e)),
            Axis::Items => (preferences.item_users(e), preferences.item_scores(e)),
        }
    };

    let mut matrix = vec![0.0; n * n];
    let mut a_vals = Vec::new();
    let mut b_vals = Vec::new();
    for i in 0..n {
        matrix[i * n + i] = 1.0;
        let (ia, va) = support(i);
        for j in i + 1..n {
            let (ib, vb) = support(j);
            a_vals.clear();
            b_vals.clear();
            let (mut p, mut q) = (0, 0);
            while p < ia.len() && q < ib.len() {
                match ia[p].cmp(&ib[q]) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        a_vals.push(va[p]);
                        b_vals.push(vb[q]);
                        p += 1;
                        q += 1;
                    }
                }
            }
            let s = if a_vals.is_empty() {
                0.0
            } else {
                (-output_distance(&a_vals, &b_vals, k)?).exp()
            };
            matrix[i * n + j] = s;
            matrix[j * n + i] = s;
        }
    }
    SimilarityGraph::from_matrix(n, matrix, k_neighbors)
}

/// Elementwise μ1·s_in + μ2·s_out clamped to [0, 1].
pub fn blend_item_similarity(s_in: &SimilarityGraph, s_out: &SimilarityGraph, mu1: f64, mu2: f64) -> Result<SimilarityGraph> {
    if s_in.size != s_out.size {
        return Err(Error::DimensionMismatch {
            what: "blended similarity graphs",
            expected: s_in.size,
            found: s_out.size,
        });
    }
    if !(mu1 >= 0.0 && mu2 >= 0.0 && mu1.is_finite() && mu2.is_finite()) {
        return Err(Error::invalid("blend weights must be finite and non-negative"));
    }
    let n = s_in.size;
    let mut matrix: Vec<f64> = s_in
        .matrix
        .iter()
        .zip(&s_out.matrix)
        .map(|(a, b)| (mu1 * a + mu2 * b).clamp(0.0, 1.0))
        .collect();
    // off-diagonal entries only carry meaning; keep the unit diagonal
    for i in 0..n {
        matrix[i * n + i] = 1.0;
    }
    SimilarityGraph::from_matrix(n, matrix, s_in.k_neighbors)
}
