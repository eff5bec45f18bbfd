use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SysIdConfiguration;
use super::DataError;

/// Trial outcome classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    TrainTimeout,
    ProposalError,
    NumericFailure,
}

impl TrialStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::TrainTimeout => "train_timeout",
            TrialStatus::ProposalError => "proposal_error",
            TrialStatus::NumericFailure => "numeric_failure",
        }
    }
}

/// One entry of the append-only search history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub iteration: u64,
    pub configuration: Option<SysIdConfiguration>,
    pub per_fold_metrics: Vec<f64>,
    /// V(θ): arithmetic mean of the per-fold metrics when the trial is ok.
    pub aggregate_metric: Option<f64>,
    pub wall_seconds: f64,
    pub rationale: String,
    pub status: TrialStatus,
    pub protocol_hash: String,
}

impl TrialRecord {
    /// Successful trial; the aggregate is derived from the fold metrics.
    pub fn ok(
        iteration: u64,
        configuration: SysIdConfiguration,
        per_fold_metrics: Vec<f64>,
        wall_seconds: f64,
        rationale: impl Into<String>,
        protocol_hash: impl Into<String>,
    ) -> Self {
        let aggregate = per_fold_metrics.iter().sum::<f64>() / per_fold_metrics.len() as f64;
        TrialRecord {
            iteration,
            configuration: Some(configuration),
            per_fold_metrics,
            aggregate_metric: Some(aggregate),
            wall_seconds,
            rationale: rationale.into(),
            status: TrialStatus::Ok,
            protocol_hash: protocol_hash.into(),
        }
    }

    pub fn failed(
        iteration: u64,
        configuration: Option<SysIdConfiguration>,
        status: TrialStatus,
        wall_seconds: f64,
        rationale: impl Into<String>,
        protocol_hash: impl Into<String>,
    ) -> Self {
        TrialRecord {
            iteration,
            configuration,
            per_fold_metrics: Vec::new(),
            aggregate_metric: None,
            wall_seconds,
            rationale: rationale.into(),
            status,
            protocol_hash: protocol_hash.into(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.status == TrialStatus::Ok {
            let agg = self.aggregate_metric.ok_or_else(|| {
                DataError::Invalid(format!("ok trial {} missing aggregate", self.iteration))
            })?;
            if self.per_fold_metrics.is_empty() {
                return Err(DataError::Invalid(format!(
                    "ok trial {} has no fold metrics",
                    self.iteration
                )));
            }
            let mean =
                self.per_fold_metrics.iter().sum::<f64>() / self.per_fold_metrics.len() as f64;
            if (mean - agg).abs() > 1e-12 {
                return Err(DataError::Invalid(format!(
                    "trial {}: aggregate {agg} is not the fold mean {mean}",
                    self.iteration
                )));
            }
        }
        Ok(())
    }
}

/// Append-only trial history 𝒯, mirrored to a JSON-lines file.
#[derive(Debug, Default, Clone)]
pub struct SearchLedger {
    records: Vec<TrialRecord>,
}

impl SearchLedger {
    pub fn new() -> Self {
        SearchLedger::default()
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends in memory, enforcing strictly increasing iterations and
    /// aggregate/fold-mean consistency.
    pub fn append(&mut self, record: TrialRecord) -> Result<(), DataError> {
        record.validate()?;
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(DataError::Invalid(format!(
                    "iteration {} does not increase past {}",
                    record.iteration, last.iteration
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Appends one record to the JSONL file (creating it if needed).
    pub fn append_to_file(path: &Path, record: &TrialRecord) -> Result<(), DataError> {
        record.validate()?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        let line =
            serde_json::to_string(record).map_err(|e| DataError::Invalid(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| DataError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)
            .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
        let mut ledger = SearchLedger::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| DataError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TrialRecord = serde_json::from_str(&line).map_err(|e| {
                DataError::Invalid(format!("ledger line {}: {e}", n + 1))
            })?;
            ledger.append(record)?;
        }
        Ok(ledger)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::config::ModelClass;

    fn cfg() -> SysIdConfiguration {
        SysIdConfiguration::new(ModelClass::Lstm, 0)
    }

    #[test]
    fn aggregate_is_fold_mean() {
        let r = TrialRecord::ok(0, cfg(), vec![0.2, 0.3], 1.0, "", "h");
        assert_eq!(r.aggregate_metric, Some(0.25));
        r.validate().unwrap();
    }

    #[test]
    fn non_increasing_iterations_rejected() {
        let mut ledger = SearchLedger::new();
        ledger.append(TrialRecord::ok(0, cfg(), vec![1.0], 0.0, "", "h")).unwrap();
        let err = ledger
            .append(TrialRecord::ok(0, cfg(), vec![1.0], 0.0, "", "h"))
            .unwrap_err();
        assert!(err.to_string().contains("increase"));
    }

    #[test]
    fn inconsistent_aggregate_rejected() {
        let mut r = TrialRecord::ok(0, cfg(), vec![0.2, 0.4], 0.0, "", "h");
        r.aggregate_metric = Some(0.5);
        assert!(r.validate().is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let a = TrialRecord::ok(0, cfg(), vec![0.5, 0.7], 2.0, "baseline", "h");
        let b = TrialRecord::failed(
            1,
            None,
            TrialStatus::ProposalError,
            0.1,
            "endpoint unreachable",
            "h",
        );
        SearchLedger::append_to_file(&path, &a).unwrap();
        SearchLedger::append_to_file(&path, &b).unwrap();
        let ledger = SearchLedger::load(&path).unwrap();
        assert_eq!(ledger.records(), &[a, b]);
    }
}
