use super::lambda::{matrix_lambdas, LambdaGrad, Weighting};
use super::{mean_ndcg, BoostParams, EarlyStopping, LogBuilder, ScorerModel, TrainingLog};
use crate::data::{Dataset, DenseMatrix};
use crate::error::{Error, Result};
use crate::similarity::SimilarityGraph;
use crate::tree::{newton_leaf_refit, SplitSearch};

/// Concatenated user ⊕ item descriptor for every observed entry.
pub(crate) fn pair_rows(data: &Dataset) -> DenseMatrix {
    let (du, di) = (data.users.dim(), data.items.dim());
    let mut rows = Vec::with_capacity(data.prefs.n_entries() * (du + di));
    for u in 0..data.prefs.n_users() {
        for &j in data.prefs.user_items(u) {
            rows.extend_from_slice(data.users.row(u));
            rows.extend_from_slice(data.items.row(j));
        }
    }
    DenseMatrix::from_vec(data.prefs.n_entries(), du + di, rows).expect("row buffer sized to entries")
}

pub(crate) fn check_compatible(train: &Dataset, valid: &Dataset) -> Result<()> {
    if train.users.dim() != valid.users.dim() {
        return Err(Error::DimensionMismatch {
            what: "validation user descriptors",
            expected: train.users.dim(),
            found: valid.users.dim(),
        });
    }
    if train.items.dim() != valid.items.dim() {
        return Err(Error::DimensionMismatch {
            what: "validation item descriptors",
            expected: train.items.dim(),
            found: valid.items.dim(),
        });
    }
    if valid.prefs.n_entries() == 0 {
        return Err(Error::Empty("validation entries"));
    }
    Ok(())
}

/// Boost scalar trees on the lambdas of every observed training entry.
/// With `item_similarity` the swap deltas are down-weighted for similar
/// items. Returns the ensemble truncated at its best validation NDCG.
pub fn train_lambdamart(
    train: &Dataset,
    valid: &Dataset,
    params: &BoostParams,
    item_similarity: Option<&SimilarityGraph>,
) -> Result<(ScorerModel, TrainingLog)> {
    params.validate()?;
    check_compatible(train, valid)?;
    if train.n_pairs() == 0 {
        return Err(Error::NothingToLearn);
    }
    let weighting = match item_similarity {
        Some(g) if g.size() != train.prefs.n_items() => {
            return Err(Error::DimensionMismatch {
                what: "item similarity graph",
                expected: train.prefs.n_items(),
                found: g.size(),
            })
        }
        Some(g) => Weighting::Items(g),
        None => Weighting::None,
    };
    let tree_params = params.trees_with_dim(1);
    let eta = params.learning_rate;
    let k = params.truncation;
    let sigma = params.sigmoid_scale;

    let search = SplitSearch::new(&pair_rows(train))?;
    let valid_rows = pair_rows(valid);
    let mut scores = vec![0.0; train.prefs.n_entries()];
    let mut valid_scores = vec![0.0; valid.prefs.n_entries()];
    let mut trees = Vec::new();

    let initial = mean_ndcg(&valid.prefs, &valid_scores, k)?;
    let mut stop = EarlyStopping::new(params.early_stop_patience, initial);
    let mut log = LogBuilder::new();
    log.validation(0, initial, initial);
    let mut grad = LambdaGrad {
        lambdas: Vec::new(),
        hessians: Vec::new(),
        loss: 0.0,
    };
    let mut targets = vec![0.0; scores.len()];

    for t in 1..=params.max_trees {
        matrix_lambdas(&train.prefs, &scores, sigma, k, weighting, &mut grad);
        log.train_loss(grad.loss);
        for (y, l) in targets.iter_mut().zip(&grad.lambdas) {
            *y = -l;
        }
        let fitted = search.fit(&targets, &tree_params)?;
        let tree = newton_leaf_refit(&fitted.tree, &fitted.leaf_of_row, &grad.lambdas, &grad.hessians)?;
        for (s, &leaf) in scores.iter_mut().zip(&fitted.leaf_of_row) {
            *s += eta * tree.leaves[leaf].values[0];
        }
        for (e, s) in valid_scores.iter_mut().enumerate() {
            *s += eta * tree.leaf_values(valid_rows.row(e))[0];
        }
        trees.push(tree);
        let v = mean_ndcg(&valid.prefs, &valid_scores, k)?;
        let go_on = stop.observe(t, v);
        log.validation(t, v, stop.best());
        log::debug!("lambdamart iter {t}: loss {:.6} valid {v:.6}", grad.loss);
        if !go_on {
            break;
        }
    }
    matrix_lambdas(&train.prefs, &scores, sigma, k, weighting, &mut grad);
    log.train_loss(grad.loss);

    trees.truncate(stop.best_iter());
    let model = ScorerModel {
        learning_rate: eta,
        user_dim: train.users.dim(),
        item_dim: train.items.dim(),
        trees,
    };
    Ok((model, log.finish(stop.best_iter())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EntityFeatures, PreferenceMatrix};
    use crate::metrics::{ndcg_at_k, TruncationLevel};

    fn dataset(entries: Vec<(usize, usize, f64)>, users: Vec<Vec<f64>>, items: Vec<Vec<f64>>) -> Dataset {
        let prefs = PreferenceMatrix::new(users.len(), items.len(), entries).unwrap();
        Dataset::new(
            prefs,
            EntityFeatures::from_rows(&users).unwrap(),
            EntityFeatures::from_rows(&items).unwrap(),
        )
        .unwrap()
    }

    fn small_params() -> BoostParams {
        BoostParams {
            learning_rate: 0.1,
            max_trees: 50,
            early_stop_patience: 50,
            truncation: TruncationLevel::new(2).unwrap(),
            tree_params: crate::tree::TreeParams {
                max_leaves: 2,
                min_leaf_fraction: 0.5,
                output_dim: 1,
            },
            ..Default::default()
        }
    }

    #[test]
    fn separable_pair_is_ordered() {
        let d = dataset(vec![(0, 0, 1.0), (0, 1, 4.0)], vec![vec![0.0]], vec![vec![0.0], vec![1.0]]);
        let (model, log) = train_lambdamart(&d, &d, &small_params(), None).unwrap();
        let s0 = model.score_row(&[0.0, 0.0]);
        let s1 = model.score_row(&[0.0, 1.0]);
        let ndcg = ndcg_at_k(&[1.0, 4.0], &[s0, s1], TruncationLevel::new(2).unwrap()).unwrap();
        assert_eq!(ndcg, 1.0);
        assert!(log.records.iter().all(|r| r.best_valid_ndcg <= 1.0));
    }

    #[test]
    fn equal_labels_have_nothing_to_learn() {
        let d = dataset(vec![(0, 0, 2.0), (0, 1, 2.0)], vec![vec![0.0]], vec![vec![0.0], vec![1.0]]);
        assert!(matches!(
            train_lambdamart(&d, &d, &small_params(), None),
            Err(Error::NothingToLearn)
        ));
    }

    #[test]
    fn patience_zero_stops_after_first_flat_round() {
        let d = dataset(vec![(0, 0, 1.0), (0, 1, 4.0)], vec![vec![0.0]], vec![vec![0.0], vec![1.0]]);
        let params = BoostParams {
            early_stop_patience: 0,
            ..small_params()
        };
        let (model, log) = train_lambdamart(&d, &d, &params, None).unwrap();
        // one improving round, then one flat round ends training
        assert_eq!(log.records.len(), 3);
        assert_eq!(model.trees.len(), 1);
        assert_eq!(log.best_iteration, 1);
    }

    #[test]
    fn scores_match_saved_ensemble() {
        let d = dataset(
            vec![(0, 0, 1.0), (0, 1, 4.0), (0, 2, 2.0), (1, 0, 5.0), (1, 2, 0.0)],
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.0], vec![1.0], vec![2.0]],
        );
        let params = BoostParams {
            max_trees: 20,
            ..small_params()
        };
        let (m1, l1) = train_lambdamart(&d, &d, &params, None).unwrap();
        let (m2, l2) = train_lambdamart(&d, &d, &params, None).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
    }
}
