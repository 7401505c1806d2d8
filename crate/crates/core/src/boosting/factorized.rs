use rand::Rng;

use super::lambda::{matrix_lambdas, LambdaGrad, Weighting};
use super::lambdamart::check_compatible;
use super::model::{dot, FactorModel, Side};
use super::{mean_ndcg, BoostParams, EarlyStopping, LogBuilder, TrainingLog};
use crate::data::{Dataset, DenseMatrix, EntityFeatures, PreferenceMatrix};
use crate::error::{Error, Result};
use crate::metrics::TruncationLevel;
use crate::rng::seeded_rng;
use crate::similarity::{blend_item_similarity, SimilarityGraph};
use crate::tree::SplitSearch;

/// Input- and output-space similarities of the training users and items.
#[derive(Debug, Clone)]
pub struct FactorGraphs {
    pub user_in: SimilarityGraph,
    pub user_out: SimilarityGraph,
    pub item_in: SimilarityGraph,
    pub item_out: SimilarityGraph,
}

/// Gradients of the pairwise loss with respect to every user and item
/// factor at `users` × `items`, along with the lambdas they came from.
pub fn factor_gradients(
    prefs: &PreferenceMatrix,
    users: &DenseMatrix,
    items: &DenseMatrix,
    sigma: f64,
    trunc: TruncationLevel,
    weighting: Weighting<'_>,
) -> Result<(DenseMatrix, DenseMatrix, LambdaGrad)> {
    if users.rows() != prefs.n_users() || items.rows() != prefs.n_items() || users.cols() != items.cols() {
        return Err(Error::invalid("factor matrices do not match the preference matrix"));
    }
    let scores = entry_scores(prefs, users, items);
    let mut grad = LambdaGrad {
        lambdas: Vec::new(),
        hessians: Vec::new(),
        loss: 0.0,
    };
    matrix_lambdas(prefs, &scores, sigma, trunc, weighting, &mut grad);
    let (gu, gv) = accumulate_gradients(prefs, users, items, &grad.lambdas);
    Ok((gu, gv, grad))
}

fn entry_scores(prefs: &PreferenceMatrix, users: &DenseMatrix, items: &DenseMatrix) -> Vec<f64> {
    let mut scores = Vec::with_capacity(prefs.n_entries());
    for u in 0..prefs.n_users() {
        for &j in prefs.user_items(u) {
            scores.push(dot(users.row(u), items.row(j)));
        }
    }
    scores
}

fn accumulate_gradients(
    prefs: &PreferenceMatrix,
    users: &DenseMatrix,
    items: &DenseMatrix,
    lambdas: &[f64],
) -> (DenseMatrix, DenseMatrix) {
    let r = users.cols();
    let mut gu = DenseMatrix::zeros(users.rows(), r);
    let mut gv = DenseMatrix::zeros(items.rows(), r);
    for u in 0..prefs.n_users() {
        let range = prefs.user_entries(u);
        for (&j, &l) in prefs.user_items(u).iter().zip(&lambdas[range]) {
            if l == 0.0 {
                continue;
            }
            for (g, v) in gu.row_mut(u).iter_mut().zip(items.row(j)) {
                *g += l * v;
            }
            for (g, x) in gv.row_mut(j).iter_mut().zip(users.row(u)) {
                *g += l * x;
            }
        }
    }
    (gu, gv)
}

/// Adds 2μ Σ_{j ∈ N(i)} s_ij (f_i − f_j) to every row of `out` and returns
/// the penalty μ Σ s_ij ‖f_i − f_j‖² over the undirected edges.
fn add_laplacian(
    factors: &DenseMatrix,
    graph: &SimilarityGraph,
    neighbors: &[Vec<usize>],
    mu: f64,
    out: &mut DenseMatrix,
) -> f64 {
    let mut penalty = 0.0;
    for (i, nbrs) in neighbors.iter().enumerate() {
        for &j in nbrs {
            let s = graph.get(i, j);
            if s == 0.0 {
                continue;
            }
            let (fi, fj) = (factors.row(i), factors.row(j));
            let mut sq = 0.0;
            for (o, (a, b)) in out.row_mut(i).iter_mut().zip(fi.iter().zip(fj)) {
                *o += 2.0 * mu * s * (a - b);
                sq += (a - b) * (a - b);
            }
            if j > i {
                penalty += mu * s * sq;
            }
        }
    }
    penalty
}

/// Gradient of μ Σ s_ij ‖f_i − f_j‖² summed once over each undirected edge
/// of the graph's symmetrized kNN structure.
pub fn laplacian_gradient(factors: &DenseMatrix, graph: &SimilarityGraph, mu: f64) -> Result<DenseMatrix> {
    if factors.rows() != graph.size() {
        return Err(Error::DimensionMismatch {
            what: "factors vs similarity graph",
            expected: graph.size(),
            found: factors.rows(),
        });
    }
    let mut out = DenseMatrix::zeros(factors.rows(), factors.cols());
    add_laplacian(factors, graph, &graph.symmetric_neighbors(), mu, &mut out);
    Ok(out)
}

fn uniform(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-0.1..=0.1)).collect()
}

fn initial_factors(model: &FactorModel, side: Side, desc: &EntityFeatures) -> DenseMatrix {
    let mut data = Vec::with_capacity(desc.n_entities() * model.rank);
    for e in 0..desc.n_entities() {
        data.extend(model.initial_factor(side, desc.row(e)));
    }
    DenseMatrix::from_vec(desc.n_entities(), model.rank, data).expect("factor buffer sized to entities")
}

struct Regularizer<'a> {
    graphs: &'a FactorGraphs,
    mu1: f64,
    mu2: f64,
    user_in: Vec<Vec<usize>>,
    user_out: Vec<Vec<usize>>,
    item_in: Vec<Vec<usize>>,
    item_out: Vec<Vec<usize>>,
}

impl Regularizer<'_> {
    /// Adds the regularizer gradients; returns the penalty.
    fn apply(&self, u: &DenseMatrix, v: &DenseMatrix, gu: &mut DenseMatrix, gv: &mut DenseMatrix) -> f64 {
        let g = self.graphs;
        let mut penalty = 0.0;
        if self.mu1 != 0.0 {
            penalty += add_laplacian(u, &g.user_in, &self.user_in, self.mu1, gu);
            penalty += add_laplacian(v, &g.item_in, &self.item_in, self.mu1, gv);
        }
        if self.mu2 != 0.0 {
            penalty += add_laplacian(u, &g.user_out, &self.user_out, self.mu2, gu);
            penalty += add_laplacian(v, &g.item_out, &self.item_out, self.mu2, gv);
        }
        penalty
    }
}

fn check_graph(g: &SimilarityGraph, expected: usize, what: &'static str) -> Result<()> {
    if g.size() == 0 {
        return Err(Error::Empty(what));
    }
    if g.size() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found: g.size(),
        });
    }
    Ok(())
}

/// Boost user and item factor ensembles simultaneously. With `graphs` the
/// objective gains Laplacian penalties weighted by `params.mu1` (input
/// space) and `params.mu2` (output space), and swap deltas are scaled down
/// for similar items.
pub fn train_lmmf(
    train: &Dataset,
    valid: &Dataset,
    params: &BoostParams,
    graphs: Option<&FactorGraphs>,
) -> Result<(FactorModel, TrainingLog)> {
    params.validate()?;
    check_compatible(train, valid)?;
    let (n, m) = (train.prefs.n_users(), train.prefs.n_items());
    let r = params.rank;
    if r > n.min(m) {
        log::warn!("rank {r} exceeds min(users, items) = {}", n.min(m));
    }

    let blended;
    let mut weighting = Weighting::None;
    let mut regularizer = None;
    if let Some(g) = graphs {
        let positive = params.mu1 > 0.0 || params.mu2 > 0.0;
        if positive {
            check_graph(&g.user_in, n, "user input similarity")?;
            check_graph(&g.user_out, n, "user output similarity")?;
            check_graph(&g.item_in, m, "item input similarity")?;
            check_graph(&g.item_out, m, "item output similarity")?;
        }
        if g.item_in.size() == m && g.item_out.size() == m {
            blended = blend_item_similarity(&g.item_in, &g.item_out, params.mu1, params.mu2)?;
            weighting = Weighting::Items(&blended);
        }
        if positive {
            regularizer = Some(Regularizer {
                graphs: g,
                mu1: params.mu1,
                mu2: params.mu2,
                user_in: g.user_in.symmetric_neighbors(),
                user_out: g.user_out.symmetric_neighbors(),
                item_in: g.item_in.symmetric_neighbors(),
                item_out: g.item_out.symmetric_neighbors(),
            });
        }
    }

    let mut rng = seeded_rng(params.seed, "factor-init");
    let (du, di) = (train.users.dim(), train.items.dim());
    let u0 = uniform(&mut rng, r);
    let v0 = uniform(&mut rng, r);
    let user_projection = uniform(&mut rng, du * r);
    let item_projection = uniform(&mut rng, di * r);
    let mut model = FactorModel {
        learning_rate: params.learning_rate,
        rank: r,
        user_dim: du,
        item_dim: di,
        u0,
        v0,
        user_projection,
        item_projection,
        user_trees: Vec::new(),
        item_trees: Vec::new(),
    };
    train_from(train, valid, params, &mut model, weighting, regularizer.as_ref())
}

fn train_from(
    train: &Dataset,
    valid: &Dataset,
    params: &BoostParams,
    model: &mut FactorModel,
    weighting: Weighting<'_>,
    regularizer: Option<&Regularizer<'_>>,
) -> Result<(FactorModel, TrainingLog)> {
    let eta = params.learning_rate;
    let k = params.truncation;
    let sigma = params.sigmoid_scale;
    let tree_params = params.trees_with_dim(model.rank);

    let search_u = SplitSearch::new(train.users.matrix())?;
    let search_v = SplitSearch::new(train.items.matrix())?;
    let mut u = initial_factors(model, Side::User, &train.users);
    let mut v = initial_factors(model, Side::Item, &train.items);
    let mut u_valid = initial_factors(model, Side::User, &valid.users);
    let mut v_valid = initial_factors(model, Side::Item, &valid.items);

    let initial = mean_ndcg(&valid.prefs, &entry_scores(&valid.prefs, &u_valid, &v_valid), k)?;
    let mut stop = EarlyStopping::new(params.early_stop_patience, initial);
    let mut log = LogBuilder::new();
    log.validation(0, initial, initial);
    let mut grad = LambdaGrad {
        lambdas: Vec::new(),
        hessians: Vec::new(),
        loss: 0.0,
    };
    let mut user_trees = Vec::new();
    let mut item_trees = Vec::new();

    let objective = |u: &DenseMatrix, v: &DenseMatrix, grad: &mut LambdaGrad| {
        let scores = entry_scores(&train.prefs, u, v);
        matrix_lambdas(&train.prefs, &scores, sigma, k, weighting, grad);
        let (mut gu, mut gv) = accumulate_gradients(&train.prefs, u, v, &grad.lambdas);
        let penalty = regularizer.map_or(0.0, |reg| reg.apply(u, v, &mut gu, &mut gv));
        (gu, gv, grad.loss + penalty)
    };

    for t in 1..=params.max_trees {
        let (gu, gv, loss) = objective(&u, &v, &mut grad);
        log.train_loss(loss);
        let targets_u: Vec<f64> = gu.as_slice().iter().map(|g| -g).collect();
        let targets_v: Vec<f64> = gv.as_slice().iter().map(|g| -g).collect();
        let fit_u = search_u.fit(&targets_u, &tree_params)?;
        let fit_v = search_v.fit(&targets_v, &tree_params)?;

        for (i, &leaf) in fit_u.leaf_of_row.iter().enumerate() {
            step(u.row_mut(i), &fit_u.tree.leaves[leaf].values, eta);
        }
        for (j, &leaf) in fit_v.leaf_of_row.iter().enumerate() {
            step(v.row_mut(j), &fit_v.tree.leaves[leaf].values, eta);
        }
        for i in 0..valid.users.n_entities() {
            step(u_valid.row_mut(i), fit_u.tree.leaf_values(valid.users.row(i)), eta);
        }
        for j in 0..valid.items.n_entities() {
            step(v_valid.row_mut(j), fit_v.tree.leaf_values(valid.items.row(j)), eta);
        }
        user_trees.push(fit_u.tree);
        item_trees.push(fit_v.tree);

        let score = mean_ndcg(&valid.prefs, &entry_scores(&valid.prefs, &u_valid, &v_valid), k)?;
        let go_on = stop.observe(t, score);
        log.validation(t, score, stop.best());
        log::debug!("lm-mf iter {t}: loss {loss:.6} valid {score:.6}");
        if !go_on {
            break;
        }
    }
    let (_, _, loss) = objective(&u, &v, &mut grad);
    log.train_loss(loss);

    user_trees.truncate(stop.best_iter());
    item_trees.truncate(stop.best_iter());
    model.user_trees = user_trees;
    model.item_trees = item_trees;
    Ok((model.clone(), log.finish(stop.best_iter())))
}

#[inline]
fn step(factor: &mut [f64], leaf: &[f64], eta: f64) {
    for (f, l) in factor.iter_mut().zip(leaf) {
        *f += eta * l;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boosting::{latent_factors, predict_score, Model};
    use crate::tree::TreeParams;
    use proptest::prelude::*;

    fn toy() -> Dataset {
        let prefs = PreferenceMatrix::new(
            3,
            3,
            vec![
                (0, 0, 5.0),
                (0, 1, 1.0),
                (0, 2, 3.0),
                (1, 0, 1.0),
                (1, 1, 5.0),
                (1, 2, 2.0),
                (2, 0, 4.0),
                (2, 2, 1.0),
            ],
        )
        .unwrap();
        Dataset::new(
            prefs,
            EntityFeatures::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.9]]).unwrap(),
            EntityFeatures::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap(),
        )
        .unwrap()
    }

    fn params() -> BoostParams {
        BoostParams {
            learning_rate: 0.5,
            max_trees: 30,
            early_stop_patience: 30,
            truncation: TruncationLevel::new(3).unwrap(),
            tree_params: TreeParams {
                max_leaves: 3,
                min_leaf_fraction: 0.3,
                output_dim: 1,
            },
            rank: 2,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn factors_reproduce_training_state() {
        let d = toy();
        let (model, log) = train_lmmf(&d, &d, &params(), None).unwrap();
        assert!(log.records[log.best_iteration].valid_ndcg >= log.records[0].valid_ndcg);
        let uf = latent_factors(&model, &d.users, Side::User).unwrap();
        let vf = latent_factors(&model, &d.items, Side::Item).unwrap();
        let m = Model::Factor(model);
        let s = predict_score(&m, d.users.row(1), d.items.row(2)).unwrap();
        assert_eq!(s, dot(uf.row(1), vf.row(2)));
    }

    #[test]
    fn zero_mu_regularized_path_is_identical() {
        let d = toy();
        let g = |n: usize| SimilarityGraph::from_matrix(n, vec![0.5; n * n], 1).unwrap();
        let graphs = FactorGraphs {
            user_in: g(3),
            user_out: g(3),
            item_in: g(3),
            item_out: g(3),
        };
        let plain = train_lmmf(&d, &d, &params(), None).unwrap();
        let reg = train_lmmf(&d, &d, &params(), Some(&graphs)).unwrap();
        assert_eq!(plain.0, reg.0);
        assert_eq!(plain.1, reg.1);
        let p = BoostParams {
            mu1: 1.0,
            ..params()
        };
        let reg = train_lmmf(&d, &d, &p, Some(&graphs)).unwrap();
        assert_ne!(plain.0, reg.0);
    }

    #[test]
    fn single_cell_stays_at_initialization() {
        let prefs = PreferenceMatrix::new(1, 1, vec![(0, 0, 3.0)]).unwrap();
        let d = Dataset::new(
            prefs,
            EntityFeatures::from_rows(&[vec![1.0]]).unwrap(),
            EntityFeatures::from_rows(&[vec![1.0]]).unwrap(),
        )
        .unwrap();
        let p = BoostParams { rank: 1, ..params() };
        let (model, _) = train_lmmf(&d, &d, &p, None).unwrap();
        assert!(model.user_trees.is_empty());
        let u = latent_factors(&model, &d.users, Side::User).unwrap();
        assert_eq!(u.row(0), model.initial_factor(Side::User, &[1.0]).as_slice());
    }

    #[test]
    fn positive_mu_needs_graphs_of_the_right_size() {
        let d = toy();
        let g = |n: usize| SimilarityGraph::from_matrix(n, vec![1.0; n * n], 1.min(n)).unwrap();
        let graphs = FactorGraphs {
            user_in: g(2),
            user_out: g(3),
            item_in: g(3),
            item_out: g(3),
        };
        let p = BoostParams { mu1: 1.0, ..params() };
        assert!(train_lmmf(&d, &d, &p, Some(&graphs)).is_err());
    }

    #[test]
    fn laplacian_gradient_of_a_single_edge() {
        let f = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let g = SimilarityGraph::from_matrix(2, vec![1.0, 0.5, 0.5, 1.0], 1).unwrap();
        let grad = laplacian_gradient(&f, &g, 2.0).unwrap();
        // d/du_0 of 2·0.5‖u0 − u1‖² = 2·(u0 − u1)
        assert_eq!(grad.row(0), &[2.0, -4.0]);
        assert_eq!(grad.row(1), &[-2.0, 4.0]);
    }

    fn random_dataset(cells: &[Option<u8>], n: usize, m: usize) -> Dataset {
        let mut entries: Vec<(usize, usize, f64)> = cells
            .iter()
            .enumerate()
            .filter_map(|(e, c)| c.map(|y| (e / m, e % m, f64::from(y))))
            .collect();
        for u in 0..n {
            if !entries.iter().any(|e| e.0 == u) {
                entries.push((u, u % m, 2.0));
            }
        }
        let users: Vec<Vec<f64>> = (0..n).map(|u| vec![(u % 3) as f64, (u / 3) as f64]).collect();
        let items: Vec<Vec<f64>> = (0..m).map(|j| vec![j as f64]).collect();
        Dataset::new(
            PreferenceMatrix::new(n, m, entries).unwrap(),
            EntityFeatures::from_rows(&users).unwrap(),
            EntityFeatures::from_rows(&items).unwrap(),
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn best_snapshot_and_determinism(
            train_cells in prop::collection::vec(prop::option::of(0u8..6), 24),
            valid_cells in prop::collection::vec(prop::option::of(0u8..6), 12),
            seed in any::<u64>(),
        ) {
            let train = random_dataset(&train_cells, 6, 4);
            let valid = random_dataset(&valid_cells, 3, 4);
            let p = BoostParams { seed, early_stop_patience: 5, ..params() };
            let (model, log) = train_lmmf(&train, &valid, &p, None).unwrap();
            let best = log.records[log.best_iteration].valid_ndcg;
            prop_assert!(log.records[log.best_iteration..].iter().all(|r| r.valid_ndcg <= best));
            prop_assert_eq!(model.user_trees.len(), log.best_iteration);
            let (again, log2) = train_lmmf(&train, &valid, &p, None).unwrap();
            prop_assert_eq!(again, model);
            prop_assert_eq!(log2, log);
        }
    }
}
