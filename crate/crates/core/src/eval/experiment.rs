use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::report::{evaluate_dataset, evaluate_ndcg, EvalReport, Predictor};
use super::split::{EntityRole, Fold};
use crate::baselines::NeighborQuery;
use crate::boosting::{train_lambdamart, train_lmmf, BoostParams, FactorGraphs, Model, ModelType, TrainingLog};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::TruncationLevel;
use crate::rng::{derive_seed, seeded_rng};
use crate::similarity::{
    blend_item_similarity, input_similarity, kernel_width, output_similarity, Axis,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ub,
    Fb,
    Lm,
    Lmw,
    LmMf,
    LmMfReg,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Ub, Method::Fb, Method::Lm, Method::Lmw, Method::LmMf, Method::LmMfReg];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ub => "ub",
            Method::Fb => "fb",
            Method::Lm => "lm",
            Method::Lmw => "lmw",
            Method::LmMf => "lm-mf",
            Method::LmMfReg => "lm-mf-reg",
        }
    }

    /// Whether the method has (μ1, μ2) hyperparameters.
    pub fn uses_mu(self) -> bool {
        matches!(self, Method::Lmw | Method::LmMfReg)
    }

    pub fn model_type(self) -> Option<ModelType> {
        match self {
            Method::Ub | Method::Fb => None,
            Method::Lm => Some(ModelType::Lm),
            Method::Lmw => Some(ModelType::Lmw),
            Method::LmMf => Some(ModelType::LmMf),
            Method::LmMfReg => Some(ModelType::LmMfReg),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s}; expected one of ub, fb, lm, lmw, lm-mf, lm-mf-reg")))
    }
}

/// Similarities of a training dataset's users and items.
pub fn build_graphs(train: &Dataset, k: TruncationLevel, neighbors: usize) -> Result<FactorGraphs> {
    Ok(FactorGraphs {
        user_in: input_similarity(&train.users, kernel_width(&train.users)?, neighbors)?,
        user_out: output_similarity(&train.prefs, Axis::Users, k, neighbors)?,
        item_in: input_similarity(&train.items, kernel_width(&train.items)?, neighbors)?,
        item_out: output_similarity(&train.prefs, Axis::Items, k, neighbors)?,
    })
}

#[derive(Debug, Clone)]
pub enum Fitted {
    Model { model: Model, log: TrainingLog },
    UserMemory(Dataset),
    FullMemory(Dataset),
}

impl Fitted {
    pub fn predictor(&self, neighbors: usize) -> Result<Predictor<'_>> {
        Ok(match self {
            Fitted::Model { model, .. } => Predictor::Model(model),
            Fitted::UserMemory(d) => Predictor::UserMemory(d, NeighborQuery::new(neighbors)?),
            Fitted::FullMemory(d) => Predictor::FullMemory(d, NeighborQuery::new(neighbors)?),
        })
    }
}

/// Train `method` with `params` (μ1, μ2 taken from the params). Graphs are
/// only consulted by the similarity-aware methods.
pub fn fit_method(
    method: Method,
    train: &Dataset,
    valid: &Dataset,
    params: &BoostParams,
    graphs: Option<&FactorGraphs>,
) -> Result<Fitted> {
    let need_graphs = || graphs.ok_or_else(|| Error::invalid(format!("{method} needs similarity graphs")));
    Ok(match method {
        Method::Ub => Fitted::UserMemory(train.clone()),
        Method::Fb => Fitted::FullMemory(train.clone()),
        Method::Lm => {
            let (m, log) = train_lambdamart(train, valid, params, None)?;
            Fitted::Model {
                model: Model::Scorer(m),
                log,
            }
        }
        Method::Lmw => {
            let g = need_graphs()?;
            let blended = blend_item_similarity(&g.item_in, &g.item_out, params.mu1, params.mu2)?;
            let (m, log) = train_lambdamart(train, valid, params, Some(&blended))?;
            Fitted::Model {
                model: Model::Scorer(m),
                log,
            }
        }
        Method::LmMf => {
            let (m, log) = train_lmmf(train, valid, params, None)?;
            Fitted::Model {
                model: Model::Factor(m),
                log,
            }
        }
        Method::LmMfReg => {
            let (m, log) = train_lmmf(train, valid, params, Some(need_graphs()?))?;
            Fitted::Model {
                model: Model::Factor(m),
                log,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub inner_folds: usize,
}

impl GridSpec {
    pub fn movielens() -> Self {
        let values = vec![0.1, 1.0, 5.0, 10.0, 15.0, 20.0, 25.0, 50.0, 80.0, 100.0];
        Self {
            mu1: values.clone(),
            mu2: values,
            inner_folds: 5,
        }
    }

    pub fn meta_mining() -> Self {
        let values = vec![0.1, 1.0, 5.0, 7.0, 10.0];
        Self {
            mu1: values.clone(),
            mu2: values,
            inner_folds: 3,
        }
    }

    /// Cells in ascending (μ1, μ2) order.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut a = self.mu1.clone();
        let mut b = self.mu2.clone();
        a.sort_by(f64::total_cmp);
        a.dedup();
        b.sort_by(f64::total_cmp);
        b.dedup();
        a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu1.is_empty() || self.mu2.is_empty() {
            return Err(Error::Empty("grid values"));
        }
        if self.mu1.iter().chain(&self.mu2).any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("grid values must be finite and non-negative"));
        }
        if self.inner_folds < 2 {
            return Err(Error::invalid("inner cross-validation needs at least two folds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub mu1: f64,
    pub mu2: f64,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub best: (f64, f64),
    pub cells: Vec<GridCell>,
}

/// Inner folds over a training dataset: users (and with `split_items`
/// items) are partitioned into `n` groups, each held out once.
pub fn inner_folds(train: &Dataset, n: usize, split_items: bool, valid_fraction: f64, seed: u64) -> Result<Vec<Fold>> {
    let n_users = train.prefs.n_users();
    let m = train.prefs.n_items();
    if n < 2 || n_users < n || (split_items && m < n) {
        return Err(Error::invalid(format!("training data too small for {n} inner folds")));
    }
    let mut rng = seeded_rng(seed, "inner-folds");
    let groups = |len: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        let mut group = vec![0; len];
        for (pos, &e) in order.iter().enumerate() {
            group[e] = pos % n;
        }
        group
    };
    let user_group = groups(n_users, &mut rng);
    let item_group = if split_items { Some(groups(m, &mut rng)) } else { None };
    let mut folds = Vec::with_capacity(n);
    for f in 0..n {
        let mut users: Vec<EntityRole> = user_group
            .iter()
            .map(|&g| if g == f { EntityRole::Test } else { EntityRole::Train })
            .collect();
        if valid_fraction > 0.0 {
            let mut train_users: Vec<usize> = (0..n_users).filter(|&u| users[u] == EntityRole::Train).collect();
            train_users.shuffle(&mut rng);
            let n_valid = ((valid_fraction * train_users.len() as f64).round() as usize).clamp(1, train_users.len() - 1);
            for &u in &train_users[..n_valid] {
                users[u] = EntityRole::Valid;
            }
        }
        let items = match &item_group {
            Some(g) => g
                .iter()
                .map(|&x| if x == f { EntityRole::Test } else { EntityRole::Train })
                .collect(),
            None => vec![EntityRole::Shared; m],
        };
        folds.push(Fold::with_roles(f, seed, &train.prefs, users, items));
    }
    Ok(folds)
}

pub struct GridContext<'a> {
    pub method: Method,
    pub train: &'a Dataset,
    pub params: &'a BoostParams,
    pub grid: &'a GridSpec,
    pub split_items: bool,
    pub valid_fraction: f64,
    pub neighbors: usize,
    pub seed: u64,
}

/// Inner-fold NDCG@k of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub mu1: f64,
    pub mu2: f64,
    pub fold: usize,
    pub ndcg: f64,
}

/// Mean inner-fold NDCG@k of every grid cell; the best cell wins, ties
/// going to the smaller μ1 and then the smaller μ2. Scores already in
/// `done` are reused; each new one is passed to `on_score` as soon as it is
/// known.
pub fn grid_search(
    ctx: &GridContext<'_>,
    done: &[GridScore],
    on_score: &mut dyn FnMut(&GridScore) -> Result<()>,
) -> Result<GridOutcome> {
    ctx.grid.validate()?;
    if !ctx.method.uses_mu() {
        return Err(Error::invalid(format!("{} has no mu parameters to search", ctx.method)));
    }
    let k = ctx.params.truncation;
    let cells = ctx.grid.cells();
    let n_folds = ctx.grid.inner_folds;
    let known = |mu1: f64, mu2: f64, fold: usize| done.iter().find(|s| s.mu1 == mu1 && s.mu2 == mu2 && s.fold == fold);
    let mut scores: Vec<GridScore> = Vec::with_capacity(cells.len() * n_folds);
    let missing = cells
        .iter()
        .any(|&(a, b)| (0..n_folds).any(|f| known(a, b, f).is_none()));
    let folds = if missing {
        inner_folds(ctx.train, n_folds, ctx.split_items, ctx.valid_fraction, ctx.seed)?
    } else {
        Vec::new()
    };
    for f in 0..n_folds {
        let todo: Vec<(f64, f64)> = cells.iter().copied().filter(|&(a, b)| known(a, b, f).is_none()).collect();
        scores.extend(cells.iter().filter_map(|&(a, b)| known(a, b, f)).copied());
        if todo.is_empty() {
            continue;
        }
        let fold = &folds[f];
        let train = fold.train(ctx.train)?;
        let valid = fold.valid(ctx.train)?;
        let test = fold.test(ctx.train)?;
        let graphs = build_graphs(&train, k, ctx.neighbors)?;
        for (mu1, mu2) in todo {
            let params = BoostParams {
                mu1,
                mu2,
                seed: derive_seed(ctx.seed, &format!("grid/{mu1}/{mu2}/{f}")),
                ..ctx.params.clone()
            };
            let fitted = fit_method(ctx.method, &train, &valid, &params, Some(&graphs))?;
            let report = evaluate_dataset(fitted.predictor(ctx.neighbors)?, &test, &[k], ctx.method.name())?;
            let score = GridScore {
                mu1,
                mu2,
                fold: f,
                ndcg: report.means()[0],
            };
            log::info!("grid cell mu1={mu1} mu2={mu2} inner fold {f}: {:.6}", score.ndcg);
            on_score(&score)?;
            scores.push(score);
        }
    }

    let scored: Vec<GridCell> = cells
        .iter()
        .map(|&(mu1, mu2)| {
            let mut mine: Vec<&GridScore> = scores.iter().filter(|s| s.mu1 == mu1 && s.mu2 == mu2).collect();
            mine.sort_by_key(|s| s.fold);
            let fold_scores: Vec<f64> = mine.iter().map(|s| s.ndcg).collect();
            let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
            GridCell {
                mu1,
                mu2,
                fold_scores,
                mean,
            }
        })
        .collect();
    let mut best = &scored[0];
    for c in &scored[1..] {
        if c.mean > best.mean {
            best = c;
        }
    }
    Ok(GridOutcome {
        best: (best.mu1, best.mu2),
        cells: scored,
    })
}

/// Result of one method on one outer fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub report: EvalReport,
    pub fitted: Fitted,
    pub grid: Option<GridOutcome>,
}

/// Select (μ1, μ2) by inner cross-validation when the method needs them,
/// train on the fold's training part and evaluate on its test part.
#[allow(clippy::too_many_arguments)]
pub fn run_fold(
    method: Method,
    data: &Dataset,
    fold: &Fold,
    params: &BoostParams,
    grid: Option<&GridSpec>,
    ks: &[TruncationLevel],
    neighbors: usize,
    valid_fraction: f64,
) -> Result<FoldOutcome> {
    let train = fold.train(data)?;
    let valid = fold.valid(data)?;
    let split_items = fold.items.iter().any(|&r| r == EntityRole::Test);
    let mut params = params.clone();
    let mut grid_outcome = None;
    if method.uses_mu() {
        if let Some(grid) = grid {
            let ctx = GridContext {
                method,
                train: &train,
                params: &params,
                grid,
                split_items,
                valid_fraction,
                neighbors,
                seed: derive_seed(params.seed, &format!("grid/fold{}", fold.index)),
            };
            let outcome = grid_search(&ctx, &[], &mut |_| Ok(()))?;
            (params.mu1, params.mu2) = outcome.best;
            log::info!("fold {}: selected mu1={} mu2={}", fold.index, params.mu1, params.mu2);
            grid_outcome = Some(outcome);
        }
    }
    let graphs = if method.uses_mu() {
        Some(build_graphs(&train, params.truncation, neighbors)?)
    } else {
        None
    };
    let fitted = fit_method(method, &train, &valid, &params, graphs.as_ref())?;
    let report = evaluate_ndcg(fitted.predictor(neighbors)?, data, fold, ks, method.name())?;
    Ok(FoldOutcome {
        report,
        fitted,
        grid: grid_outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EntityFeatures, PreferenceMatrix};
    use crate::eval::split::{split_user_cold_start, UserMode};
    use crate::tree::TreeParams;

    fn toy(n: usize, m: usize) -> Dataset {
        let mut entries = Vec::new();
        for u in 0..n {
            for j in 0..m {
                if (u * 3 + j) % 4 != 1 {
                    let y = ((u % 2) as f64 * 2.0 - 1.0) * (j as f64 - m as f64 / 2.0);
                    entries.push((u, j, (y + 3.0).clamp(0.0, 5.0).round()));
                }
            }
        }
        let prefs = PreferenceMatrix::new(n, m, entries).unwrap();
        let users: Vec<Vec<f64>> = (0..n).map(|u| vec![(u % 2) as f64, (u % 3) as f64]).collect();
        let items: Vec<Vec<f64>> = (0..m).map(|j| vec![j as f64, (j % 2) as f64]).collect();
        Dataset::new(prefs, EntityFeatures::from_rows(&users).unwrap(), EntityFeatures::from_rows(&items).unwrap()).unwrap()
    }

    fn params() -> BoostParams {
        BoostParams {
            learning_rate: 0.3,
            max_trees: 10,
            early_stop_patience: 5,
            truncation: TruncationLevel::new(3).unwrap(),
            tree_params: TreeParams {
                max_leaves: 3,
                min_leaf_fraction: 0.1,
                output_dim: 1,
            },
            rank: 2,
            ..Default::default()
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("cofirank".parse::<Method>().is_err());
    }

    #[test]
    fn grid_sizes_and_single_cell() {
        assert_eq!(GridSpec::meta_mining().cells().len(), 25);
        assert_eq!(GridSpec::movielens().cells().len(), 100);
        let d = toy(12, 6);
        let grid = GridSpec {
            mu1: vec![1.0],
            mu2: vec![0.1],
            inner_folds: 2,
        };
        let ctx = GridContext {
            method: Method::LmMfReg,
            train: &d,
            params: &params(),
            grid: &grid,
            split_items: false,
            valid_fraction: 0.25,
            neighbors: 2,
            seed: 4,
        };
        let out = grid_search(&ctx, &[], &mut |_| Ok(())).unwrap();
        assert_eq!(out.best, (1.0, 0.1));
        assert_eq!(out.cells[0].fold_scores.len(), 2);
    }

    #[test]
    fn grid_ties_prefer_small_mu_and_reuse_done_cells() {
        let d = toy(12, 6);
        let grid = GridSpec {
            mu1: vec![5.0, 1.0],
            mu2: vec![2.0, 1.0],
            inner_folds: 2,
        };
        let ctx = GridContext {
            method: Method::Lmw,
            train: &d,
            params: &params(),
            grid: &grid,
            split_items: false,
            valid_fraction: 0.25,
            neighbors: 2,
            seed: 4,
        };
        let done: Vec<GridScore> = grid
            .cells()
            .into_iter()
            .flat_map(|(mu1, mu2)| (0..2).map(move |fold| GridScore { mu1, mu2, fold, ndcg: 0.5 }))
            .collect();
        let mut calls = 0;
        let out = grid_search(&ctx, &done, &mut |_| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 0);
        assert_eq!(out.best, (1.0, 1.0));

        let partial: Vec<GridScore> = done.iter().filter(|s| s.fold == 0).copied().collect();
        let mut fresh = Vec::new();
        let out = grid_search(&ctx, &partial, &mut |s| {
            fresh.push(*s);
            Ok(())
        })
        .unwrap();
        assert_eq!(fresh.len(), 4);
        assert!(fresh.iter().all(|s| s.fold == 1));
        assert!(out.cells.iter().all(|c| c.fold_scores.len() == 2 && c.fold_scores[0] == 0.5));
    }

    #[test]
    fn every_method_runs_on_a_fold() {
        let d = toy(16, 8);
        let fold = &split_user_cold_start(&d.prefs, UserMode::Fraction(0.5), 0.25, 1).unwrap()[0];
        let grid = GridSpec {
            mu1: vec![0.1],
            mu2: vec![0.1, 1.0],
            inner_folds: 2,
        };
        let ks = [TruncationLevel::new(1).unwrap(), TruncationLevel::new(3).unwrap()];
        for m in Method::ALL {
            let out = run_fold(m, &d, fold, &params(), Some(&grid), &ks, 2, 0.25).unwrap();
            assert_eq!(out.report.units.len(), 8);
            assert!(out.report.means().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(out.grid.is_some(), m.uses_mu());
        }
    }
}
