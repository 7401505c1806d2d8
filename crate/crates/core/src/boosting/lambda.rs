use crate::data::{descending_order, PreferenceMatrix};
use crate::error::{Error, Result};
use crate::metrics::{ideal_dcg, swap_delta_with_ideal, TruncationLevel};
use crate::similarity::SimilarityGraph;

/// Optional down-weighting of pairs of similar items.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    None,
    /// Blended item similarity over the items' indices in the graph.
    Items(&'a SimilarityGraph),
}

/// Pseudo-gradients of the pairwise loss, one per observed entry, aligned
/// with the preference matrix's row-major entry order.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrad {
    pub lambdas: Vec<f64>,
    /// Diagonal curvature of the per-entry loss, for Newton leaf steps.
    pub hessians: Vec<f64>,
    /// |Δ|-weighted logistic loss at the scores the lambdas were taken at.
    pub loss: f64,
}

/// ln(1 + e^x) without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Lambdas for one user's observed items. `items` are the items' indices in
/// the weighting graph and may be empty when no weighting is used.
/// Returns the user's loss contribution.
#[allow(clippy::too_many_arguments)]
pub(crate) fn user_lambdas(
    labels: &[f64],
    scores: &[f64],
    items: &[usize],
    sigma: f64,
    trunc: TruncationLevel,
    weighting: Weighting<'_>,
    lambdas: &mut [f64],
    hessians: &mut [f64],
) -> f64 {
    lambdas.iter_mut().for_each(|l| *l = 0.0);
    hessians.iter_mut().for_each(|h| *h = 0.0);
    let m = labels.len();
    let ideal = ideal_dcg(labels, trunc);
    if m < 2 || ideal == 0.0 {
        return 0.0;
    }
    let order = descending_order(scores);
    let mut loss = 0.0;
    // pairs with both elements below the cutoff have zero swap delta
    for p in 0..m.min(trunc.get()) {
        let a = order[p];
        for (q, &b) in order.iter().enumerate().skip(p + 1) {
            if labels[a] == labels[b] {
                continue;
            }
            let (hi, lo, r_hi, r_lo) = if labels[a] > labels[b] {
                (a, b, p + 1, q + 1)
            } else {
                (b, a, q + 1, p + 1)
            };
            let mut delta = swap_delta_with_ideal(labels[hi], labels[lo], r_hi, r_lo, ideal, trunc).abs();
            if let Weighting::Items(graph) = weighting {
                delta *= 1.0 - graph.get(items[hi], items[lo]);
            }
            if delta == 0.0 {
                continue;
            }
            let margin = sigma * (scores[hi] - scores[lo]);
            let rho = 1.0 / (1.0 + margin.exp());
            let lambda = -sigma * rho * delta;
            lambdas[hi] += lambda;
            lambdas[lo] -= lambda;
            let h = sigma * sigma * delta * rho * (1.0 - rho);
            hessians[hi] += h;
            hessians[lo] += h;
            loss += delta * softplus(-margin);
        }
    }
    loss
}

/// Per-item lambdas for a single user's ranking.
pub fn lambda_gradients(
    labels: &[f64],
    scores: &[f64],
    sigma: f64,
    trunc: TruncationLevel,
    weighting: Weighting<'_>,
    items: &[usize],
) -> Result<LambdaGrad> {
    if labels.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            what: "labels vs scores",
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if let Weighting::Items(graph) = weighting {
        if items.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "weighted items",
                expected: labels.len(),
                found: items.len(),
            });
        }
        if let Some(&bad) = items.iter().find(|&&i| i >= graph.size()) {
            return Err(Error::IndexOutOfRange {
                what: "item similarity graph",
                index: bad,
                size: graph.size(),
            });
        }
    }
    if labels.iter().chain(scores).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("labels or scores"));
    }
    let mut lambdas = vec![0.0; labels.len()];
    let mut hessians = vec![0.0; labels.len()];
    let loss = user_lambdas(labels, scores, items, sigma, trunc, weighting, &mut lambdas, &mut hessians);
    Ok(LambdaGrad { lambdas, hessians, loss })
}

/// Lambdas for every user of `prefs`; `scores` follows the entry order.
pub(crate) fn matrix_lambdas(
    prefs: &PreferenceMatrix,
    scores: &[f64],
    sigma: f64,
    trunc: TruncationLevel,
    weighting: Weighting<'_>,
    out: &mut LambdaGrad,
) {
    out.lambdas.resize(prefs.n_entries(), 0.0);
    out.hessians.resize(prefs.n_entries(), 0.0);
    out.loss = 0.0;
    for u in 0..prefs.n_users() {
        let range = prefs.user_entries(u);
        out.loss += user_lambdas(
            prefs.user_scores(u),
            &scores[range.clone()],
            prefs.user_items(u),
            sigma,
            trunc,
            weighting,
            &mut out.lambdas[range.clone()],
            &mut out.hessians[range],
        );
    }
}
