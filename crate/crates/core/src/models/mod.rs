//! The model zoo: every architecture the configuration search may visit,
//! behind one uniform sequence-model interface.
//!
//! A model is a pure state-transition function of (state, input, parameters)
//! recorded on an autodiff tape. `init_state` encodes an initialization
//! window into the recurrent state; `step` advances one sample and emits one
//! output node; `rollout` chains steps autoregressively.

mod cfc;
mod checkpoint;
mod common;
mod ensemble;
mod greybox;
mod kinematics;
mod naive;
mod recurrent;
mod residual;
mod rollout;

pub use cfc::CfcModel;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use ensemble::EnsembleModel;
pub use greybox::GreyBoxTankModel;
pub use kinematics::KinematicsLstm;
pub use naive::NaiveConstantModel;
pub use recurrent::{Cell, RecurrentModel};
pub use residual::PhysicsResidualModel;
pub use rollout::{rollout, rollout_values, RolloutOptions, RolloutResult, StepCtx};

use std::collections::BTreeMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, ParamStore, Tape};
use crate::datamodel::{DataError, ModelClass, NormalizationStats, SysIdConfiguration};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("io dimensions inconsistent: {0}")]
    Dims(String),
    #[error("init window has {got} samples, expected {expected}")]
    Window { expected: usize, got: usize },
    #[error("numeric failure at rollout step {step}")]
    NumericFailure { step: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Input/output contract a model is built against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoSpec {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub sample_period: f64,
    /// Samples in the initialization window the protocol will supply.
    pub init_window_len: usize,
    /// Statistics the training data was normalized with; physics-structured
    /// models use them to move between normalized and physical units.
    pub norm: Option<NormalizationStats>,
}

impl IoSpec {
    pub fn new(n_inputs: usize, n_outputs: usize, sample_period: f64, init_window_len: usize) -> Self {
        IoSpec { n_inputs, n_outputs, sample_period, init_window_len, norm: None }
    }

    pub fn with_norm(mut self, norm: NormalizationStats) -> Self {
        self.norm = Some(norm);
        self
    }
}

/// Initialization window: the most recent input and output samples
/// immediately preceding a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct InitWindow {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl InitWindow {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn last_output(&self) -> &[f64] {
        self.outputs.last().expect("non-empty window")
    }

    /// Interleaved flattening `[u_1, y_1, u_2, y_2, ...]`.
    pub fn flattened(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (u, y) in self.inputs.iter().zip(&self.outputs) {
            flat.extend_from_slice(u);
            flat.extend_from_slice(y);
        }
        flat
    }
}

/// Recurrent state plus the fed-back previous output, as tape nodes.
#[derive(Clone)]
pub struct ModelState {
    pub nodes: Vec<NodeId>,
    pub prev_output: NodeId,
}

/// Parameter nodes bound onto a tape for one forward pass.
pub struct Bound {
    map: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn all(tape: &Tape, params: &ParamStore) -> Bound {
        Bound { map: crate::autodiff::bind_all(tape, params) }
    }

    pub fn from_map(map: BTreeMap<String, NodeId>) -> Bound {
        Bound { map }
    }

    pub fn get(&self, name: &str) -> NodeId {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// View of names under `prefix.` with the prefix stripped.
    pub fn subview(&self, prefix: &str) -> Bound {
        let lead = format!("{prefix}.");
        Bound {
            map: self
                .map
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&lead).map(|rest| (rest.to_string(), *v)))
                .collect(),
        }
    }
}

/// Uniform interface over the zoo. `step` must be a pure function of
/// (state, input, parameters); `rollout` of T steps equals T chained steps.
/// Models own plain parameter data (no tape handles), so they move freely
/// between fold-training workers.
pub trait SequenceModel: Send {
    /// Stable label for reports and checkpoints.
    fn label(&self) -> &'static str;
    fn io(&self) -> &IoSpec;
    fn params(&self) -> &ParamStore;
    fn set_params(&mut self, params: ParamStore) -> Result<(), ModelError>;
    /// Whether the previous output is fed back into the next step.
    fn feedback(&self) -> bool;
    fn bind(&self, tape: &Tape) -> Bound {
        Bound::all(tape, self.params())
    }
    fn init_state(&self, tape: &Tape, bound: &Bound, window: &InitWindow)
        -> Result<ModelState, ModelError>;
    fn step(
        &self,
        tape: &Tape,
        bound: &Bound,
        state: &ModelState,
        input: &[f64],
        ctx: &mut StepCtx,
    ) -> Result<(ModelState, NodeId), ModelError>;
    fn clone_box(&self) -> Box<dyn SequenceModel>;
}

impl Clone for Box<dyn SequenceModel> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub(crate) fn check_set_params(current: &ParamStore, incoming: &ParamStore) -> Result<(), ModelError> {
    if current.len() != incoming.len() {
        return Err(ModelError::BadConfig(format!(
            "parameter store has {} tensors, expected {}",
            incoming.len(),
            current.len()
        )));
    }
    for (name, t) in current.iter() {
        match incoming.tensor(name) {
            Some(new) if new.shape() == t.shape() => {}
            Some(new) => {
                return Err(ModelError::BadConfig(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    new.shape(),
                    t.shape()
                )))
            }
            None => return Err(ModelError::BadConfig(format!("missing parameter {name}"))),
        }
    }
    Ok(())
}

/// Appends the element-wise squares of a 4-channel motor command,
/// `[u1..u4] -> [u1..u4, u1^2..u4^2]`.
pub fn augment_inputs(row: &[f64]) -> Result<Vec<f64>, ModelError> {
    if row.len() != 4 {
        return Err(ModelError::Dims(format!(
            "input augmentation expects 4 channels, got {}",
            row.len()
        )));
    }
    Ok(augment_any(row))
}

pub(crate) fn augment_any(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    out.extend(row.iter().map(|v| v * v));
    out
}

/// Builds a freshly initialized model for a configuration. Initialization is
/// deterministic in `cfg.seed`: the same configuration always yields
/// bit-identical parameters.
pub fn build_model(
    cfg: &SysIdConfiguration,
    io: &IoSpec,
) -> Result<Box<dyn SequenceModel>, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match cfg.model_class {
        ModelClass::VanillaRnn => {
            Ok(Box::new(RecurrentModel::from_config(Cell::Rnn, cfg, io, &mut rng)?))
        }
        ModelClass::Lstm => Ok(Box::new(RecurrentModel::from_config(Cell::Lstm, cfg, io, &mut rng)?)),
        ModelClass::Gru => Ok(Box::new(RecurrentModel::from_config(Cell::Gru, cfg, io, &mut rng)?)),
        ModelClass::Cfc => Ok(Box::new(CfcModel::from_config(cfg, io, &mut rng)?)),
        ModelClass::GreyboxTank => Ok(Box::new(GreyBoxTankModel::from_config(cfg, io)?)),
        ModelClass::KinematicsLstm => Ok(Box::new(KinematicsLstm::from_config(cfg, io, &mut rng)?)),
        ModelClass::PhysicsResidual => {
            Ok(Box::new(PhysicsResidualModel::from_config(cfg, io, &mut rng)?))
        }
        ModelClass::EnsembleOfBest => Ok(Box::new(EnsembleModel::from_config(cfg, io)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ParamValue;

    #[test]
    fn augmentation_squares_each_channel() {
        assert_eq!(
            augment_inputs(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 1.0, 4.0, 9.0, 16.0]
        );
        assert_eq!(augment_inputs(&[0.0; 4]).unwrap(), vec![0.0; 8]);
        // slicing the augmented block back recovers the original
        let aug = augment_inputs(&[0.5, -1.0, 2.0, 0.25]).unwrap();
        assert_eq!(&aug[..4], &[0.5, -1.0, 2.0, 0.25]);
        assert!(augment_inputs(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let cfg = SysIdConfiguration::new(ModelClass::Lstm, 99)
            .with_arch("hidden_size", ParamValue::Int(6))
            .with_arch("num_layers", ParamValue::Int(2));
        let io = IoSpec::new(1, 1, 4.0, 5);
        let a = build_model(&cfg, &io).unwrap();
        let b = build_model(&cfg, &io).unwrap();
        assert_eq!(a.params(), b.params());
        let other = SysIdConfiguration { seed: 100, ..cfg };
        let c = build_model(&other, &io).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn baseline_tank_config_is_a_four_unit_rnn() {
        let cfg = SysIdConfiguration::new(ModelClass::VanillaRnn, 0)
            .with_arch("hidden_size", ParamValue::Int(4));
        let io = IoSpec::new(1, 1, 4.0, 5);
        let m = build_model(&cfg, &io).unwrap();
        assert_eq!(m.label(), "vanilla_rnn");
        assert_eq!(m.params().tensor("l0.b").unwrap().len(), 4);
    }

    #[test]
    fn cfc_config_with_64_states_builds() {
        let cfg = SysIdConfiguration::new(ModelClass::Cfc, 5)
            .with_arch("hidden_size", ParamValue::Int(64));
        let io = IoSpec::new(1, 1, 4.0, 5);
        let m = build_model(&cfg, &io).unwrap();
        assert_eq!(m.params().tensor("tau_raw").unwrap().len(), 64);
    }
}
