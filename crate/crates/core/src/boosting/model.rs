use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BoostParams;
use crate::data::{DenseMatrix, EntityFeatures};
use crate::error::{Error, Result};
use crate::tree::RegressionTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelType {
    Lm,
    Lmw,
    LmMf,
    LmMfReg,
}

impl ModelType {
    pub fn name(self) -> &'static str {
        match self {
            ModelType::Lm => "lm",
            ModelType::Lmw => "lmw",
            ModelType::LmMf => "lm-mf",
            ModelType::LmMfReg => "lm-mf-reg",
        }
    }

    pub fn is_factorized(self) -> bool {
        matches!(self, ModelType::LmMf | ModelType::LmMfReg)
    }
}

/// Scalar ensemble over concatenated user ⊕ item descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    pub learning_rate: f64,
    pub user_dim: usize,
    pub item_dim: usize,
    pub trees: Vec<RegressionTree>,
}

impl ScorerModel {
    /// Score of a concatenated descriptor row. Unchecked.
    pub fn score_row(&self, row: &[f64]) -> f64 {
        let mut acc = 0.0;
        for tree in &self.trees {
            acc += self.learning_rate * tree.leaf_values(row)[0];
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

/// Two multi-output ensembles mapping descriptors to rank-r factors.
///
/// The untrained factor of a descriptor `c` is `u0 + Pᵀc` with `P` the
/// stored projection (row-major, descriptor dim × rank).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub learning_rate: f64,
    pub rank: usize,
    pub user_dim: usize,
    pub item_dim: usize,
    pub u0: Vec<f64>,
    pub v0: Vec<f64>,
    pub user_projection: Vec<f64>,
    pub item_projection: Vec<f64>,
    pub user_trees: Vec<RegressionTree>,
    pub item_trees: Vec<RegressionTree>,
}

impl FactorModel {
    pub(crate) fn initial_factor(&self, side: Side, desc: &[f64]) -> Vec<f64> {
        let (offset, proj) = match side {
            Side::User => (&self.u0, &self.user_projection),
            Side::Item => (&self.v0, &self.item_projection),
        };
        let mut f = offset.clone();
        for (x, p) in desc.iter().zip(proj.chunks_exact(self.rank)) {
            if *x != 0.0 {
                for (fa, pa) in f.iter_mut().zip(p) {
                    *fa += x * pa;
                }
            }
        }
        f
    }

    /// Factor of one descriptor. Unchecked.
    pub fn factor(&self, side: Side, desc: &[f64]) -> Vec<f64> {
        let mut f = self.initial_factor(side, desc);
        let trees = match side {
            Side::User => &self.user_trees,
            Side::Item => &self.item_trees,
        };
        for tree in trees {
            for (fa, la) in f.iter_mut().zip(tree.leaf_values(desc)) {
                *fa += self.learning_rate * la;
            }
        }
        f
    }

    pub(crate) fn dim(&self, side: Side) -> usize {
        match side {
            Side::User => self.user_dim,
            Side::Item => self.item_dim,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Scorer(ScorerModel),
    Factor(FactorModel),
}

impl Model {
    pub fn user_dim(&self) -> usize {
        match self {
            Model::Scorer(m) => m.user_dim,
            Model::Factor(m) => m.user_dim,
        }
    }

    pub fn item_dim(&self) -> usize {
        match self {
            Model::Scorer(m) => m.item_dim,
            Model::Factor(m) => m.item_dim,
        }
    }

    pub fn n_trees(&self) -> usize {
        match self {
            Model::Scorer(m) => m.trees.len(),
            Model::Factor(m) => m.user_trees.len(),
        }
    }

    /// Scores of every (user, item) cell, row-major users × items.
    pub fn score_all(&self, users: &EntityFeatures, items: &EntityFeatures) -> Result<DenseMatrix> {
        check_dim("user descriptors", self.user_dim(), users.dim())?;
        check_dim("item descriptors", self.item_dim(), items.dim())?;
        let (n, m) = (users.n_entities(), items.n_entities());
        let mut out = DenseMatrix::zeros(n, m);
        match self {
            Model::Scorer(s) => {
                let mut row = Vec::with_capacity(s.user_dim + s.item_dim);
                for u in 0..n {
                    for j in 0..m {
                        row.clear();
                        row.extend_from_slice(users.row(u));
                        row.extend_from_slice(items.row(j));
                        out.row_mut(u)[j] = s.score_row(&row);
                    }
                }
            }
            Model::Factor(f) => {
                let uf = latent_factors(f, users, Side::User)?;
                let vf = latent_factors(f, items, Side::Item)?;
                for u in 0..n {
                    for j in 0..m {
                        out.row_mut(u)[j] = dot(uf.row(u), vf.row(j));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { what, expected, found });
    }
    Ok(())
}

fn check_row(what: &'static str, expected: usize, row: &[f64]) -> Result<()> {
    check_dim(what, expected, row.len())?;
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

pub fn predict_score(model: &Model, user: &[f64], item: &[f64]) -> Result<f64> {
    check_row("user descriptor", model.user_dim(), user)?;
    check_row("item descriptor", model.item_dim(), item)?;
    Ok(match model {
        Model::Scorer(s) => {
            let row: Vec<f64> = user.iter().chain(item).copied().collect();
            s.score_row(&row)
        }
        Model::Factor(f) => dot(&f.factor(Side::User, user), &f.factor(Side::Item, item)),
    })
}

pub fn latent_factors(model: &FactorModel, descriptors: &EntityFeatures, side: Side) -> Result<DenseMatrix> {
    check_dim("descriptors", model.dim(side), descriptors.dim())?;
    if !descriptors.matrix().is_finite() {
        return Err(Error::NonFinite("descriptors"));
    }
    let n = descriptors.n_entities();
    let mut data = Vec::with_capacity(n * model.rank);
    for e in 0..n {
        data.extend(model.factor(side, descriptors.row(e)));
    }
    DenseMatrix::from_vec(n, model.rank, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SavedTrees {
    Scalar(Vec<RegressionTree>),
    Factor { user: Vec<RegressionTree>, item: Vec<RegressionTree> },
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub model_type: ModelType,
    pub params: BoostParams,
    pub user_dim: usize,
    pub item_dim: usize,
    pub u0: Option<Vec<f64>>,
    pub v0: Option<Vec<f64>>,
    pub user_projection: Option<Vec<f64>>,
    pub item_projection: Option<Vec<f64>>,
    pub trees: SavedTrees,
}

impl SavedModel {
    pub fn new(model_type: ModelType, params: BoostParams, model: &Model) -> Result<Self> {
        match (model, model_type.is_factorized()) {
            (Model::Scorer(s), false) => Ok(Self {
                model_type,
                params,
                user_dim: s.user_dim,
                item_dim: s.item_dim,
                u0: None,
                v0: None,
                user_projection: None,
                item_projection: None,
                trees: SavedTrees::Scalar(s.trees.clone()),
            }),
            (Model::Factor(f), true) => Ok(Self {
                model_type,
                params,
                user_dim: f.user_dim,
                item_dim: f.item_dim,
                u0: Some(f.u0.clone()),
                v0: Some(f.v0.clone()),
                user_projection: Some(f.user_projection.clone()),
                item_projection: Some(f.item_projection.clone()),
                trees: SavedTrees::Factor {
                    user: f.user_trees.clone(),
                    item: f.item_trees.clone(),
                },
            }),
            _ => Err(Error::invalid(format!("model kind does not match model type {}", model_type.name()))),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let lr = self.params.learning_rate;
        let trees_ok = |trees: &[RegressionTree], dim: usize, out: usize| -> Result<()> {
            for t in trees {
                t.validate()?;
                if t.output_dim() != out || t.max_feature().is_some_and(|f| f >= dim) {
                    return Err(Error::invalid("stored tree does not fit the model dimensions"));
                }
            }
            Ok(())
        };
        match (&self.trees, self.model_type.is_factorized()) {
            (SavedTrees::Scalar(trees), false) => {
                trees_ok(trees, self.user_dim + self.item_dim, 1)?;
                Ok(Model::Scorer(ScorerModel {
                    learning_rate: lr,
                    user_dim: self.user_dim,
                    item_dim: self.item_dim,
                    trees: trees.clone(),
                }))
            }
            (SavedTrees::Factor { user, item }, true) => {
                let r = self.params.rank;
                let take = |v: &Option<Vec<f64>>, len: usize, what: &'static str| -> Result<Vec<f64>> {
                    match v {
                        Some(v) if v.len() == len => Ok(v.clone()),
                        Some(v) => Err(Error::DimensionMismatch {
                            what,
                            expected: len,
                            found: v.len(),
                        }),
                        None => Err(Error::invalid(format!("missing {what}"))),
                    }
                };
                trees_ok(user, self.user_dim, r)?;
                trees_ok(item, self.item_dim, r)?;
                if user.len() != item.len() {
                    return Err(Error::invalid("user and item ensembles differ in length"));
                }
                Ok(Model::Factor(FactorModel {
                    learning_rate: lr,
                    rank: r,
                    user_dim: self.user_dim,
                    item_dim: self.item_dim,
                    u0: take(&self.u0, r, "u0")?,
                    v0: take(&self.v0, r, "v0")?,
                    user_projection: take(&self.user_projection, self.user_dim * r, "user_projection")?,
                    item_projection: take(&self.item_projection, self.item_dim * r, "item_projection")?,
                    user_trees: user.clone(),
                    item_trees: item.clone(),
                }))
            }
            _ => Err(Error::invalid("stored trees do not match model_type")),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let saved: SavedModel = serde_json::from_reader(BufReader::new(file))?;
        saved.to_model()?;
        Ok(saved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{Child, Leaf, SplitNode};

    fn factor_model(u0: Vec<f64>, v0: Vec<f64>) -> FactorModel {
        FactorModel {
            learning_rate: 0.1,
            rank: u0.len(),
            user_dim: 1,
            item_dim: 1,
            user_projection: vec![0.0; u0.len()],
            item_projection: vec![0.0; v0.len()],
            u0,
            v0,
            user_trees: vec![],
            item_trees: vec![],
        }
    }

    #[test]
    fn offset_only_factor_model() {
        let m = Model::Factor(factor_model(vec![0.5, 0.5], vec![0.2, 0.4]));
        assert!((predict_score(&m, &[3.0], &[-1.0]).unwrap() - 0.3).abs() < 1e-15);
        let m = Model::Factor(factor_model(vec![1.0, 0.0], vec![0.0, 1.0]));
        assert_eq!(predict_score(&m, &[3.0], &[-1.0]).unwrap(), 0.0);
        assert!(predict_score(&m, &[3.0, 1.0], &[-1.0]).is_err());
    }

    #[test]
    fn shrinkage_on_scalar_tree() {
        let m = Model::Scorer(ScorerModel {
            learning_rate: 0.1,
            user_dim: 1,
            item_dim: 1,
            trees: vec![RegressionTree::constant(vec![2.0])],
        });
        assert!((predict_score(&m, &[0.0], &[0.0]).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn latent_factors_follow_definition() {
        let mut f = factor_model(vec![0.1, -0.2], vec![0.3, 0.3]);
        let desc = EntityFeatures::from_rows(&[vec![0.0], vec![5.0]]).unwrap();
        let u = latent_factors(&f, &desc, Side::User).unwrap();
        assert_eq!(u.row(0), &[0.1, -0.2]);
        assert_eq!(u.row(1), &[0.1, -0.2]);
        f.user_trees.push(RegressionTree {
            nodes: vec![SplitNode {
                feature: 0,
                threshold: 1.0,
                left: Child::Leaf(0),
                right: Child::Leaf(1),
            }],
            leaves: vec![Leaf { values: vec![1.0, 1.0] }, Leaf { values: vec![-1.0, 2.0] }],
        });
        f.item_trees.push(RegressionTree::constant(vec![0.0, 0.0]));
        let u = latent_factors(&f, &desc, Side::User).unwrap();
        assert!((u.row(1)[0] - (0.1 - 0.1)).abs() < 1e-15);
        assert!((u.row(1)[1] - (-0.2 + 0.2)).abs() < 1e-15);
        let v = latent_factors(&f, &desc, Side::Item).unwrap();
        let model = Model::Factor(f);
        let s = predict_score(&model, &[0.0], &[5.0]).unwrap();
        assert_eq!(s, dot(u.row(0), v.row(1)));
    }

    #[test]
    fn saved_model_round_trip() {
        let mut f = factor_model(vec![0.123456789012345, -0.2], vec![0.3, 1e-17]);
        f.user_projection = vec![0.1 / 3.0, 2.0 / 7.0];
        f.user_trees.push(RegressionTree::constant(vec![1.0 / 3.0, 0.7]));
        f.item_trees.push(RegressionTree::constant(vec![0.5, 1.0 / 9.0]));
        let params = BoostParams {
            rank: 2,
            learning_rate: 0.1,
            ..Default::default()
        };
        let model = Model::Factor(f);
        let saved = SavedModel::new(ModelType::LmMf, params, &model).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        saved.save(&path).unwrap();
        let back = SavedModel::load(&path).unwrap().to_model().unwrap();
        assert_eq!(back, model);
        assert!(SavedModel::new(ModelType::Lm, BoostParams::default(), &model).is_err());
    }
}
