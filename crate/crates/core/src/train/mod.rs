//! Optimizers, truncated-BPTT chunking, scheduled sampling, early stopping,
//! and wall-clock budgeting: the modifiable training procedure of θ.

mod adam;
mod fit;
mod plan;

pub use adam::{optimizer_step, OptimizerState};
pub use fit::{
    chunked_forward, curve_to_csv, fit, CurvePoint, FitOutcome, FitStatus, SeqPair, StopReason,
    TrainData, Validator,
};
pub use plan::{tbptt_chunks, teacher_forcing_prob, Chunk, LossId, TrainPlan};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training plan: {0}")]
    BadPlan(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("model error: {0}")]
    Model(String),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}
