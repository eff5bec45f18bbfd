use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datamodel::{
    ModelClass, SearchLedger, SysIdConfiguration, Trajectory, TrialRecord, TrialStatus,
};
use crate::evaluate::{cross_validation_score, EvalProtocol, TrainOptions};
use crate::models::{EnsembleModel, SequenceModel};

use super::proposer::{ProposeOutcome, Proposer, Rejection};
use super::SearchError;

/// Iteration and exploration limits of one search run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_iterations: u64,
    /// The first E iterations must propose pairwise-distinct model classes.
    pub exploration_phase: u64,
    /// Proposal validation retries per iteration before recording a failure.
    pub max_retries: u32,
    /// Per-trial wall-clock cap applied on top of each plan's own budget.
    pub per_trial_wall_seconds: Option<f64>,
    /// Stop when the best metric has been flat for this many consecutive
    /// iterations (disabled by default: the full budget runs).
    pub saturation_window: Option<u64>,
}

impl SearchBudget {
    pub fn new(max_iterations: u64) -> Self {
        SearchBudget {
            max_iterations,
            exploration_phase: 5.min(max_iterations),
            max_retries: 2,
            per_trial_wall_seconds: None,
            saturation_window: None,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.exploration_phase > self.max_iterations {
            return Err(SearchError::BadSpace(format!(
                "exploration phase {} exceeds budget {}",
                self.exploration_phase, self.max_iterations
            )));
        }
        Ok(())
    }
}

/// Side-channel options for a run; none of these affect the protocol.
#[derive(Default)]
pub struct SearchOptions<'a> {
    /// JSONL ledger mirror, appended record by record.
    pub ledger_path: Option<PathBuf>,
    pub train: TrainOptions,
    /// Observer invoked after every appended record.
    pub on_trial: Option<Box<dyn FnMut(&TrialRecord) + 'a>>,
}

/// Best-so-far bundle: the winning configuration and its per-fold models.
pub struct BestTrial {
    pub iteration: u64,
    pub config: SysIdConfiguration,
    pub metric: f64,
    pub fold_models: Vec<Box<dyn SequenceModel>>,
}

pub struct SearchOutcome {
    pub ledger: SearchLedger,
    pub best: Option<BestTrial>,
}

/// The iterative experimentation loop: propose → validate → score → record,
/// until the iteration budget is exhausted (or a scripted plan runs out).
///
/// During the exploration phase a proposal repeating an already-proposed
/// model class is rejected back to the proposer up to `max_retries` times,
/// then recorded as a proposal error. Proposal and training failures consume
/// an iteration. The ledger file is strictly append-only.
pub fn run_search(
    proposer: &mut dyn Proposer,
    protocol: &EvalProtocol,
    trajs: &[Trajectory],
    budget: &SearchBudget,
    mut opts: SearchOptions,
) -> Result<SearchOutcome, SearchError> {
    budget.validate()?;
    protocol
        .validate(trajs)
        .map_err(|e| SearchError::Run(e.to_string()))?;
    if let Some(path) = &opts.ledger_path {
        // fail before iteration 0 if the ledger is unwritable
        let probe = std::fs::OpenOptions::new().create(true).append(true).open(path);
        probe.map_err(|e| SearchError::Run(format!("ledger {}: {e}", path.display())))?;
    }
    let hash = protocol.content_hash();

    let mut ledger = SearchLedger::new();
    let mut best: Option<BestTrial> = None;
    let mut seen_classes: BTreeSet<ModelClass> = BTreeSet::new();
    let mut flat_iterations = 0u64;

    'iterations: for iteration in 0..budget.max_iterations {
        // proposal loop with exploration-phase rejections
        let mut rejection: Option<Rejection> = None;
        let mut attempts = 0u32;
        let proposal = loop {
            match proposer.propose(ledger.records(), rejection.as_ref()) {
                Ok(p) => {
                    if let Err(why) = p.config.validate() {
                        rejection = Some(Rejection { reason: why.to_string(), raw_reply: None });
                    } else if iteration < budget.exploration_phase
                        && seen_classes.contains(&p.config.model_class)
                    {
                        rejection = Some(Rejection {
                            reason: format!(
                                "exploration phase: model class {} was already visited; propose a different class",
                                p.config.model_class
                            ),
                            raw_reply: None,
                        });
                    } else {
                        break Some(p);
                    }
                    attempts += 1;
                    if attempts > budget.max_retries {
                        let reason = rejection
                            .take()
                            .map(|r| r.reason)
                            .unwrap_or_else(|| "proposal rejected".into());
                        record_failure(
                            &mut ledger,
                            &mut opts,
                            iteration,
                            None,
                            TrialStatus::ProposalError,
                            format!("rejected after {attempts} attempts: {reason}"),
                            &hash,
                        )?;
                        continue 'iterations;
                    }
                }
                Err(ProposeOutcome::Exhausted) => break None,
                Err(ProposeOutcome::Failed { reason, raw_reply }) => {
                    let mut rationale = format!("proposal failed: {reason}");
                    if let Some(raw) = raw_reply {
                        rationale.push_str("\nraw reply: ");
                        rationale.push_str(&raw);
                    }
                    record_failure(
                        &mut ledger,
                        &mut opts,
                        iteration,
                        None,
                        TrialStatus::ProposalError,
                        rationale,
                        &hash,
                    )?;
                    continue 'iterations;
                }
            }
        };
        let Some(proposal) = proposal else {
            break; // scripted plan exhausted
        };
        seen_classes.insert(proposal.config.model_class);

        let mut train_opts = opts.train.clone();
        if let Some(cap) = budget.per_trial_wall_seconds {
            train_opts.wall_budget_override =
                Some(train_opts.wall_budget_override.map_or(cap, |v| v.min(cap)));
        }
        let started = Instant::now();
        let outcome = cross_validation_score(&proposal.config, protocol, trajs, &train_opts)
            .map_err(|e| SearchError::Run(e.to_string()))?;
        let wall = started.elapsed().as_secs_f64();

        let record = match outcome.status {
            TrialStatus::Ok => TrialRecord::ok(
                iteration,
                proposal.config.clone(),
                outcome.report.per_fold.clone(),
                wall,
                proposal.rationale.clone(),
                &hash,
            ),
            status => TrialRecord::failed(
                iteration,
                Some(proposal.config.clone()),
                status,
                wall,
                format!(
                    "{} (fold {:?}); {}",
                    status.as_str(),
                    outcome.failing_fold,
                    proposal.rationale
                ),
                &hash,
            ),
        };
        push_record(&mut ledger, &mut opts, record.clone())?;

        let improved = match (&record.aggregate_metric, &best) {
            (Some(m), Some(b)) => *m < b.metric,
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            best = Some(BestTrial {
                iteration,
                config: proposal.config,
                metric: record.aggregate_metric.unwrap(),
                fold_models: outcome.fold_models,
            });
            flat_iterations = 0;
        } else {
            flat_iterations += 1;
            if let Some(window) = budget.saturation_window {
                if best.is_some() && flat_iterations >= window {
                    break;
                }
            }
        }
    }

    Ok(SearchOutcome { ledger, best })
}

fn record_failure(
    ledger: &mut SearchLedger,
    opts: &mut SearchOptions,
    iteration: u64,
    config: Option<SysIdConfiguration>,
    status: TrialStatus,
    rationale: String,
    hash: &str,
) -> Result<(), SearchError> {
    let record = TrialRecord::failed(iteration, config, status, 0.0, rationale, hash);
    push_record(ledger, opts, record)
}

fn push_record(
    ledger: &mut SearchLedger,
    opts: &mut SearchOptions,
    record: TrialRecord,
) -> Result<(), SearchError> {
    if let Some(path) = &opts.ledger_path {
        SearchLedger::append_to_file(path, &record)
            .map_err(|e| SearchError::Run(e.to_string()))?;
    }
    ledger.append(record.clone()).map_err(|e| SearchError::Run(e.to_string()))?;
    if let Some(cb) = opts.on_trial.as_mut() {
        cb(ledger.records().last().expect("just appended"));
    }
    Ok(())
}

/// Running minimum of the aggregate metric over ok trials; failed trials
/// carry the previous best forward. Empty when no trial succeeded.
pub fn best_so_far(records: &[TrialRecord]) -> Vec<(u64, f64)> {
    let mut curve = Vec::new();
    let mut best: Option<f64> = None;
    for r in records {
        if r.status == TrialStatus::Ok {
            if let Some(m) = r.aggregate_metric {
                best = Some(best.map_or(m, |b: f64| b.min(m)));
            }
        }
        if let Some(b) = best {
            curve.push((r.iteration, b));
        }
    }
    curve
}

/// Final-model selection: the per-fold models of the best configuration,
/// averaged at inference time, plus a one-line summary.
pub fn select_final(outcome: &SearchOutcome) -> Result<(EnsembleModel, String), SearchError> {
    let best = outcome
        .best
        .as_ref()
        .ok_or_else(|| SearchError::Run("no successful trial to select from".into()))?;
    if best.fold_models.is_empty() {
        return Err(SearchError::Run(format!(
            "trial {} retained no fold models",
            best.iteration
        )));
    }
    let members: Vec<Box<dyn SequenceModel>> =
        best.fold_models.iter().map(|m| m.clone_box()).collect();
    let ensemble =
        EnsembleModel::from_members(members).map_err(|e| SearchError::Run(e.to_string()))?;
    let summary = format!(
        "best iteration {} ({}): V = {:.6}, {}-member per-fold ensemble",
        best.iteration,
        best.config.model_class,
        best.metric,
        ensemble.member_count()
    );
    Ok((ensemble, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iteration: u64, metric: Option<f64>) -> TrialRecord {
        match metric {
            Some(m) => TrialRecord::ok(
                iteration,
                SysIdConfiguration::new(ModelClass::Lstm, 0),
                vec![m],
                0.0,
                "",
                "h",
            ),
            None => TrialRecord::failed(iteration, None, TrialStatus::ProposalError, 0.0, "", "h"),
        }
    }

    #[test]
    fn best_curve_is_the_running_minimum() {
        let records: Vec<TrialRecord> = [0.681, 0.70, 0.430, 0.55, 0.250]
            .iter()
            .enumerate()
            .map(|(i, m)| rec(i as u64, Some(*m)))
            .collect();
        let curve = best_so_far(&records);
        let values: Vec<f64> = curve.iter().map(|(_, v)| *v).collect();
        assert_eq!(values, vec![0.681, 0.681, 0.430, 0.430, 0.250]);
    }

    #[test]
    fn failures_carry_the_incumbent_forward() {
        let records = vec![rec(0, Some(0.5)), rec(1, None), rec(2, Some(0.4))];
        let curve = best_so_far(&records);
        assert_eq!(curve, vec![(0, 0.5), (1, 0.5), (2, 0.4)]);
    }

    #[test]
    fn leading_failures_produce_no_curve_entries() {
        let records = vec![rec(0, None), rec(1, None)];
        assert!(best_so_far(&records).is_empty());
        let single = vec![rec(0, Some(1.25))];
        assert_eq!(best_so_far(&single), vec![(0, 1.25)]);
    }
}
