//! Split protocols, NDCG reports, significance tests and grid search.

mod experiment;
mod report;
mod split;

pub use experiment::{
    build_graphs, fit_method, grid_search, inner_folds, run_fold, Fitted, FoldOutcome, GridCell, GridContext, GridScore, GridOutcome,
    GridSpec, Method,
};
pub use report::{
    compare, evaluate_dataset, evaluate_ndcg, mcnemar, predict_entries, summary_table, Comparison, EvalReport, Predictor,
    UnitScore,
};
pub use split::{
    make_folds, split_full_cold_start, split_matrix_completion, split_user_cold_start, EntityRole, EntryRole, Fold,
    SplitKind, SplitSpec, UserMode,
};
