use serde::{Deserialize, Serialize};

use crate::datamodel::SysIdConfiguration;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossId {
    Mse,
    Mae,
}

/// The modifiable training procedure of a configuration θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub loss: LossId,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Truncated-BPTT window, in samples.
    pub chunk_length: usize,
    /// Windows per gradient step (state-windowed training only).
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Initial probability of the linearly decaying teacher-forcing schedule.
    pub teacher_forcing_p0: f64,
    pub dropout: f64,
    /// Epochs between validation evaluations.
    pub eval_cadence: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub wall_budget_seconds: f64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            loss: LossId::Mse,
            learning_rate: 1e-2,
            epochs: 50,
            chunk_length: 50,
            batch_size: 16,
            weight_decay: 0.0,
            teacher_forcing_p0: 0.0,
            dropout: 0.0,
            eval_cadence: 1,
            patience: 10,
            wall_budget_seconds: 600.0,
        }
    }
}

impl TrainPlan {
    /// Reads the plan out of a configuration's train map, falling back to
    /// defaults for absent keys.
    pub fn from_config(cfg: &SysIdConfiguration) -> Result<TrainPlan, TrainError> {
        let d = TrainPlan::default();
        let loss = match cfg.train.get("loss").and_then(|v| v.as_text()) {
            Some("mae") => LossId::Mae,
            Some("mse") | None => LossId::Mse,
            Some(other) => return Err(TrainError::BadPlan(format!("unknown loss {other}"))),
        };
        let plan = TrainPlan {
            loss,
            learning_rate: cfg.train_f64("learning_rate", d.learning_rate),
            epochs: cfg.train_usize("epochs", d.epochs),
            chunk_length: cfg.train_usize("chunk_length", d.chunk_length),
            batch_size: cfg.train_usize("batch_size", d.batch_size),
            weight_decay: cfg.train_f64("weight_decay", d.weight_decay),
            teacher_forcing_p0: cfg.train_f64("teacher_forcing_p0", d.teacher_forcing_p0),
            dropout: cfg.train_f64("dropout", d.dropout),
            eval_cadence: cfg.train_usize("eval_cadence", d.eval_cadence),
            patience: cfg.train_usize("patience", d.patience),
            wall_budget_seconds: cfg.train_f64("wall_budget_seconds", d.wall_budget_seconds),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadPlan(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.chunk_length < 1 || self.batch_size < 1 || self.eval_cadence < 1 || self.patience < 1
        {
            return Err(TrainError::BadPlan("counts must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing_p0) {
            return Err(TrainError::BadPlan(format!(
                "teacher_forcing_p0 {} outside [0, 1]",
                self.teacher_forcing_p0
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::BadPlan(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.wall_budget_seconds > 0.0) {
            return Err(TrainError::BadPlan("wall_budget_seconds must be positive".into()));
        }
        Ok(())
    }
}

/// Linearly decaying teacher-forcing probability: `p0 * (1 - epoch/total)`.
/// Hits `p0` at epoch 0 and exactly 0 at the final epoch.
pub fn teacher_forcing_prob(epoch: usize, total_epochs: usize, p0: f64) -> f64 {
    if total_epochs == 0 {
        return 0.0;
    }
    let frac = epoch as f64 / total_epochs as f64;
    p0 * (1.0 - frac)
}

/// Contiguous, non-overlapping TBPTT chunks covering `total` samples; the
/// last chunk may be short. `carry_state` marks chunks whose forward state
/// flows in from the previous chunk (gradients stay truncated).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub start: usize,
    pub len: usize,
    pub carry_state: bool,
}

pub fn tbptt_chunks(total: usize, chunk_length: usize) -> Result<Vec<Chunk>, TrainError> {
    if total == 0 {
        return Err(TrainError::BadPlan("cannot chunk an empty trajectory".into()));
    }
    if chunk_length == 0 {
        return Err(TrainError::BadPlan("chunk_length must be >= 1".into()));
    }
    let mut chunks = Vec::with_capacity(total.div_ceil(chunk_length));
    let mut start = 0;
    while start < total {
        let len = chunk_length.min(total - start);
        chunks.push(Chunk { start, len, carry_state: start > 0 });
        start += len;
    }
    Ok(chunks)
}
