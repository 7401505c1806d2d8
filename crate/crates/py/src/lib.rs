//! Python bindings: ranking metrics, the significance test and model training
//! and scoring on in-memory data.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use rankforge::boosting::{train_lambdamart, train_lmmf, BoostParams, Model, ModelType, SavedModel};
use rankforge::data::{rank_descending as rank, Dataset, EntityFeatures, PreferenceMatrix};
use rankforge::metrics::TruncationLevel;
use rankforge::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn level(k: usize) -> PyResult<TruncationLevel> {
    TruncationLevel::new(k).map_err(py_err)
}

/// NDCG@k of `scores` against `labels`.
#[pyfunction]
fn ndcg_at_k(labels: Vec<f64>, scores: Vec<f64>, k: usize) -> PyResult<f64> {
    rankforge::metrics::ndcg_at_k(&labels, &scores, level(k)?).map_err(py_err)
}

/// 1-based ranks, highest score first, ties by position.
#[pyfunction]
fn rank_descending(scores: Vec<f64>) -> PyResult<Vec<usize>> {
    Ok(rank(&scores).map_err(py_err)?.into_inner())
}

#[pyfunction]
fn mcnemar(wins: usize, losses: usize) -> f64 {
    rankforge::eval::mcnemar(wins, losses)
}

fn dataset(ratings: Vec<(usize, usize, f64)>, users: Vec<Vec<f64>>, items: Vec<Vec<f64>>) -> PyResult<Dataset> {
    let prefs = PreferenceMatrix::new(users.len(), items.len(), ratings).map_err(py_err)?;
    let users = EntityFeatures::from_rows(&users).map_err(py_err)?;
    let items = EntityFeatures::from_rows(&items).map_err(py_err)?;
    Dataset::new(prefs, users, items).map_err(py_err)
}

#[pyclass(name = "Model", module = "pyrankforge", frozen)]
struct PyModel {
    saved: SavedModel,
    model: Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let saved = SavedModel::load(&path).map_err(py_err)?;
        let model = saved.to_model().map_err(py_err)?;
        Ok(PyModel { saved, model })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.saved.save(&path).map_err(py_err)
    }

    #[getter]
    fn model_type(&self) -> &'static str {
        self.saved.model_type.name()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.model.n_trees()
    }

    /// Score matrix, one row per user descriptor and one column per item.
    fn score(&self, users: Vec<Vec<f64>>, items: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let users = EntityFeatures::from_rows(&users).map_err(py_err)?;
        let items = EntityFeatures::from_rows(&items).map_err(py_err)?;
        let scores = self.model.score_all(&users, &items).map_err(py_err)?;
        Ok((0..scores.rows()).map(|i| scores.row(i).to_vec()).collect())
    }
}

/// Train `lm` or `lm-mf` on `(user, item, score)` triples. The validation
/// users drive early stopping and share the item descriptors.
#[pyfunction]
#[pyo3(signature = (
    method, ratings, user_features, item_features, valid_ratings, valid_user_features,
    *, eta=0.01, max_trees=200, patience=200, truncation=5, max_leaves=100,
    min_leaf_fraction=0.01, rank=10, seed=0
))]
#[allow(clippy::too_many_arguments)]
fn train(
    method: &str,
    ratings: Vec<(usize, usize, f64)>,
    user_features: Vec<Vec<f64>>,
    item_features: Vec<Vec<f64>>,
    valid_ratings: Vec<(usize, usize, f64)>,
    valid_user_features: Vec<Vec<f64>>,
    eta: f64,
    max_trees: usize,
    patience: usize,
    truncation: usize,
    max_leaves: usize,
    min_leaf_fraction: f64,
    rank: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let mut params = BoostParams {
        learning_rate: eta,
        max_trees,
        early_stop_patience: patience,
        truncation: level(truncation)?,
        rank,
        seed,
        ..Default::default()
    };
    params.tree_params.max_leaves = max_leaves;
    params.tree_params.min_leaf_fraction = min_leaf_fraction;
    let valid = dataset(valid_ratings, valid_user_features, item_features.clone())?;
    let train = dataset(ratings, user_features, item_features)?;
    let (model_type, model) = match method {
        "lm" => {
            let (m, _) = train_lambdamart(&train, &valid, &params, None).map_err(py_err)?;
            (ModelType::Lm, Model::Scorer(m))
        }
        "lm-mf" => {
            let (m, _) = train_lmmf(&train, &valid, &params, None).map_err(py_err)?;
            (ModelType::LmMf, Model::Factor(m))
        }
        other => return Err(PyValueError::new_err(format!("method must be lm or lm-mf, got {other:?}"))),
    };
    let saved = SavedModel::new(model_type, params, &model).map_err(py_err)?;
    Ok(PyModel { saved, model })
}

#[pymodule]
fn pyrankforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(rank_descending, m)?)?;
    m.add_function(wrap_pyfunction!(mcnemar, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
