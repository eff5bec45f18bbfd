use crate::datamodel::{SysIdConfiguration, TrialRecord};

use super::space::{sample_random_config, RandomSearchSpace};
use super::SearchError;

/// A candidate configuration plus the proposer's stated reasoning.
#[derive(Clone, Debug)]
pub struct Proposal {
    pub config: SysIdConfiguration,
    pub rationale: String,
}

/// Feedback handed back to a proposer when its last proposal was rejected
/// (exploration-phase duplicate or validation failure).
#[derive(Clone, Debug)]
pub struct Rejection {
    pub reason: String,
    /// The raw reply that failed, when there was one.
    pub raw_reply: Option<String>,
}

/// Maps search history to the next candidate configuration. Proposers see
/// only the ledger history and rejection feedback — never the evaluation
/// internals or any test data.
pub trait Proposer {
    fn name(&self) -> &'static str;

    /// Next proposal given the full trial history. `rejected` carries
    /// feedback about the immediately preceding proposal when it was turned
    /// back. Returning `Exhausted` ends the search early.
    fn propose(
        &mut self,
        history: &[TrialRecord],
        rejected: Option<&Rejection>,
    ) -> Result<Proposal, ProposeOutcome>;
}

/// Non-proposal outcomes.
#[derive(Debug)]
pub enum ProposeOutcome {
    /// The proposer has nothing further to offer (scripted plan finished).
    Exhausted,
    /// The attempt failed; the error text lands in the trial rationale.
    Failed { reason: String, raw_reply: Option<String> },
}

/// Replays a fixed list of (configuration, rationale) pairs in order.
pub struct ScriptedProposer {
    plan: Vec<(SysIdConfiguration, String)>,
    next: usize,
}

impl ScriptedProposer {
    pub fn new(plan: Vec<(SysIdConfiguration, String)>) -> Result<Self, SearchError> {
        if plan.is_empty() {
            return Err(SearchError::BadSpace("scripted plan must be non-empty".into()));
        }
        Ok(ScriptedProposer { plan, next: 0 })
    }

    pub fn remaining(&self) -> usize {
        self.plan.len() - self.next
    }
}

impl Proposer for ScriptedProposer {
    fn name(&self) -> &'static str {
        "scripted"
    }

    fn propose(
        &mut self,
        _history: &[TrialRecord],
        rejected: Option<&Rejection>,
    ) -> Result<Proposal, ProposeOutcome> {
        if let Some(r) = rejected {
            // a script cannot adapt; surface the rejection as a failure
            return Err(ProposeOutcome::Failed {
                reason: format!("scripted entry rejected: {}", r.reason),
                raw_reply: None,
            });
        }
        match self.plan.get(self.next) {
            Some((config, rationale)) => {
                self.next += 1;
                Ok(Proposal { config: config.clone(), rationale: rationale.clone() })
            }
            None => Err(ProposeOutcome::Exhausted),
        }
    }
}

/// Independent draws from a [`RandomSearchSpace`]; the draw counter advances
/// on every attempt, including rejected ones.
pub struct RandomProposer {
    space: RandomSearchSpace,
    draw: u64,
}

impl RandomProposer {
    pub fn new(space: RandomSearchSpace) -> Result<Self, SearchError> {
        space.validate()?;
        Ok(RandomProposer { space, draw: 0 })
    }
}

impl Proposer for RandomProposer {
    fn name(&self) -> &'static str {
        "random"
    }

    fn propose(
        &mut self,
        _history: &[TrialRecord],
        _rejected: Option<&Rejection>,
    ) -> Result<Proposal, ProposeOutcome> {
        let draw = self.draw;
        self.draw += 1;
        match sample_random_config(&self.space, draw) {
            Ok(config) => Ok(Proposal {
                config,
                rationale: format!("random draw {draw}"),
            }),
            Err(e) => Err(ProposeOutcome::Failed { reason: e.to_string(), raw_reply: None }),
        }
    }
}
