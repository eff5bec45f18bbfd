use crate::autodiff::{NodeId, ParamStore, Tape};

use super::common::const_vec;
use super::rollout::StepCtx;
use super::{Bound, InitWindow, IoSpec, ModelError, ModelState, SequenceModel};

/// Lower-bound reference: holds the initialization state constant over the
/// whole horizon. No parameters, no dynamics.
#[derive(Clone)]
pub struct NaiveConstantModel {
    io: IoSpec,
    params: ParamStore,
}

impl NaiveConstantModel {
    pub fn new(io: IoSpec) -> Self {
        NaiveConstantModel { io, params: ParamStore::new() }
    }
}

impl SequenceModel for NaiveConstantModel {
    fn label(&self) -> &'static str {
        "naive_constant"
    }

    fn io(&self) -> &IoSpec {
        &self.io
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn set_params(&mut self, params: ParamStore) -> Result<(), ModelError> {
        super::check_set_params(&self.params, &params)?;
        Ok(())
    }

    fn feedback(&self) -> bool {
        true
    }

    fn init_state(
        &self,
        tape: &Tape,
        _bound: &Bound,
        window: &InitWindow,
    ) -> Result<ModelState, ModelError> {
        if window.is_empty() {
            return Err(ModelError::Window { expected: 1, got: 0 });
        }
        let prev_output = const_vec(tape, window.last_output());
        Ok(ModelState { nodes: vec![], prev_output })
    }

    fn step(
        &self,
        _tape: &Tape,
        _bound: &Bound,
        state: &ModelState,
        _input: &[f64],
        _ctx: &mut StepCtx,
    ) -> Result<(ModelState, NodeId), ModelError> {
        Ok((state.clone(), state.prev_output))
    }

    fn clone_box(&self) -> Box<dyn SequenceModel> {
        Box::new(self.clone())
    }
}
