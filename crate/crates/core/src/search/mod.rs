//! The iterative experimentation loop: proposers generate configurations
//! from history, the evaluator scores them, the ledger records everything.

mod llm;
mod proposer;
mod report;
mod runner;
mod space;

pub use llm::{extract_first_json_object, LlmProposer, LlmProposerConfig};
pub use proposer::{Proposal, ProposeOutcome, Proposer, RandomProposer, Rejection, ScriptedProposer};
pub use report::{ledger_csv, mee_table_csv, reference_rows, MeeRow};
pub use runner::{
    best_so_far, run_search, select_final, BestTrial, SearchBudget, SearchOptions, SearchOutcome,
};
pub use space::{sample_random_config, RandomSearchSpace};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search space: {0}")]
    BadSpace(String),
    #[error("search run failed: {0}")]
    Run(String),
}
