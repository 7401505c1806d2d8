//! Gradient-boosted rankers: scalar LambdaMART and the factorized variants.

mod factorized;
mod lambda;
mod lambdamart;
mod model;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use factorized::{factor_gradients, laplacian_gradient, train_lmmf, FactorGraphs};
pub use lambda::{lambda_gradients, LambdaGrad, Weighting};
pub use lambdamart::train_lambdamart;
pub use model::{latent_factors, predict_score, FactorModel, Model, ModelType, SavedModel, ScorerModel, Side};

use crate::data::PreferenceMatrix;
use crate::error::{Error, Result};
use crate::metrics::{ndcg_at_k, TruncationLevel};
use crate::tree::TreeParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub learning_rate: f64,
    pub max_trees: usize,
    pub early_stop_patience: usize,
    pub sigmoid_scale: f64,
    pub truncation: TruncationLevel,
    /// `output_dim` is set by the trainer (1 for scalar trees, `rank` otherwise).
    pub tree_params: TreeParams,
    pub rank: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_trees: 15000,
            early_stop_patience: 200,
            sigmoid_scale: 1.0,
            truncation: TruncationLevel::new(5).expect("5 is a valid cutoff"),
            tree_params: TreeParams {
                max_leaves: 100,
                min_leaf_fraction: 0.01,
                output_dim: 1,
            },
            rank: 50,
            mu1: 0.0,
            mu2: 0.0,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.max_trees == 0 {
            return Err(Error::invalid("max_trees must be >= 1"));
        }
        if !(self.sigmoid_scale > 0.0 && self.sigmoid_scale.is_finite()) {
            return Err(Error::invalid("sigmoid_scale must be positive"));
        }
        if self.rank == 0 {
            return Err(Error::invalid("rank must be >= 1"));
        }
        if !(self.mu1 >= 0.0 && self.mu2 >= 0.0 && self.mu1.is_finite() && self.mu2.is_finite()) {
            return Err(Error::invalid("mu1 and mu2 must be finite and non-negative"));
        }
        TreeParams {
            output_dim: 1,
            ..self.tree_params
        }
        .validate()
    }

    pub(crate) fn trees_with_dim(&self, output_dim: usize) -> TreeParams {
        TreeParams {
            output_dim,
            ..self.tree_params
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub train_loss: f64,
    pub valid_ndcg: f64,
    pub best_valid_ndcg: f64,
}

/// One record per ensemble size, starting from the untrained model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<IterationRecord>,
    pub best_iteration: usize,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "train_loss", "valid_ndcg", "best_valid_ndcg"])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                r.train_loss.to_string(),
                r.valid_ndcg.to_string(),
                r.best_valid_ndcg.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("training log", e))?;
        Ok(())
    }
}

/// Tracks the best validation score and counts non-improving rounds.
pub(crate) struct EarlyStopping {
    patience: usize,
    best: f64,
    best_iter: usize,
    stale: usize,
}

impl EarlyStopping {
    pub(crate) fn new(patience: usize, initial: f64) -> Self {
        Self {
            patience,
            best: initial,
            best_iter: 0,
            stale: 0,
        }
    }

    /// Record the score after `iter` trees; false once patience is exhausted.
    pub(crate) fn observe(&mut self, iter: usize, value: f64) -> bool {
        if value > self.best {
            self.best = value;
            self.best_iter = iter;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale <= self.patience
    }

    pub(crate) fn best(&self) -> f64 {
        self.best
    }

    pub(crate) fn best_iter(&self) -> usize {
        self.best_iter
    }
}

/// Mean NDCG@k over users; `scores` follows the entry order of `prefs`.
pub(crate) fn mean_ndcg(prefs: &PreferenceMatrix, scores: &[f64], k: TruncationLevel) -> Result<f64> {
    let mut total = 0.0;
    for u in 0..prefs.n_users() {
        total += ndcg_at_k(prefs.user_scores(u), &scores[prefs.user_entries(u)], k)?;
    }
    Ok(total / prefs.n_users() as f64)
}

pub(crate) struct LogBuilder {
    log: TrainingLog,
    pending: Option<(usize, f64, f64)>,
}

impl LogBuilder {
    pub(crate) fn new() -> Self {
        Self {
            log: TrainingLog::default(),
            pending: None,
        }
    }

    /// Validation score of the model with `iter` trees; its training loss
    /// arrives with the next lambda pass.
    pub(crate) fn validation(&mut self, iter: usize, valid: f64, best: f64) {
        self.pending = Some((iter, valid, best));
    }

    pub(crate) fn train_loss(&mut self, loss: f64) {
        if let Some((iter, valid_ndcg, best_valid_ndcg)) = self.pending.take() {
            self.log.records.push(IterationRecord {
                iter,
                train_loss: loss,
                valid_ndcg,
                best_valid_ndcg,
            });
        }
    }

    pub(crate) fn finish(mut self, best_iteration: usize) -> TrainingLog {
        self.log.best_iteration = best_iteration;
        self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_zero_stops_on_first_flat_round() {
        let mut es = EarlyStopping::new(0, 0.5);
        assert!(es.observe(1, 0.6));
        assert!(!es.observe(2, 0.6));
        assert_eq!(es.best_iter(), 1);
        let mut es = EarlyStopping::new(2, 0.5);
        assert!(es.observe(1, 0.4));
        assert!(es.observe(2, 0.5));
        assert!(!es.observe(3, 0.1));
        assert_eq!(es.best_iter(), 0);
        assert_eq!(es.best(), 0.5);
    }

    #[test]
    fn params_validation() {
        BoostParams::default().validate().unwrap();
        let bad = BoostParams {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = BoostParams {
            mu1: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_csv_layout() {
        let mut b = LogBuilder::new();
        b.validation(0, 0.5, 0.5);
        b.train_loss(2.0);
        b.validation(1, 0.75, 0.75);
        b.train_loss(1.0);
        let log = b.finish(1);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iter,train_loss,valid_ndcg,best_valid_ndcg\n0,2,0.5,0.5\n1,1,0.75,0.75\n"
        );
    }
}
