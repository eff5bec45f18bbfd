//! The read-only evaluation pipeline: fold construction, rollout protocols,
//! and all metrics. The sole source of V(θ).

mod metrics;
mod protocol;
mod score;

pub use metrics::{
    cumulative_mee, geodesic_distance, mae_rows, mee, rmse, MeeTable, MetricReport, StateGroup,
    WindowSet,
};
pub use protocol::{
    make_drone_folds, make_tank_folds, Benchmark, EvalProtocol, FoldSplit, InitPolicy, MetricId,
    Segment,
};
pub use score::{
    cross_validation_score, mee_windows, naive_predictor_score, open_loop_predictions,
    open_loop_rmse, score_fold_validation, score_tank_test, window_starts, windowed_predictions,
    windowed_rollout_mae, CvOutcome, TrainOptions,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("scoring error: {0}")]
    Scoring(String),
}

impl From<crate::datamodel::DataError> for EvalError {
    fn from(e: crate::datamodel::DataError) -> Self {
        EvalError::Scoring(e.to_string())
    }
}
