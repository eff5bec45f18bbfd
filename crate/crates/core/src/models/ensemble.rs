use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::datamodel::{ModelClass, ParamValue, SysIdConfiguration};

use super::rollout::StepCtx;
use super::{build_model, Bound, InitWindow, IoSpec, ModelError, ModelState, SequenceModel};

/// Unweighted prediction average over member models of identical signature.
///
/// The ensemble behaves as one sequence model: at every step each member is
/// advanced with the ensemble's fed-back output, and the emitted output is
/// the arithmetic mean of the member outputs.
#[derive(Clone)]
pub struct EnsembleModel {
    members: Vec<Box<dyn SequenceModel>>,
    state_lens: Vec<usize>,
    io: IoSpec,
    combined: ParamStore,
}

impl EnsembleModel {
    pub fn from_members(members: Vec<Box<dyn SequenceModel>>) -> Result<Self, ModelError> {
        if members.is_empty() {
            return Err(ModelError::BadConfig("ensemble needs at least one member".into()));
        }
        let io = members[0].io().clone();
        for m in &members[1..] {
            if m.io().n_inputs != io.n_inputs || m.io().n_outputs != io.n_outputs {
                return Err(ModelError::Dims(
                    "ensemble members must share the io signature".into(),
                ));
            }
        }
        let mut combined = ParamStore::new();
        for (i, m) in members.iter().enumerate() {
            combined.absorb_prefixed(&format!("m{i}"), m.params());
        }
        // dry-run init on a scratch tape to learn each member's state width
        let scratch = Tape::new();
        let zero_window = InitWindow {
            inputs: vec![vec![0.0; io.n_inputs]; io.init_window_len],
            outputs: vec![vec![0.0; io.n_outputs]; io.init_window_len],
        };
        let state_lens = members
            .iter()
            .map(|m| {
                let bound = m.bind(&scratch);
                Ok(m.init_state(&scratch, &bound, &zero_window)?.nodes.len())
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(EnsembleModel { state_lens, members, io, combined })
    }

    /// Builds `members` fresh copies of `member_class` with derived seeds.
    pub fn from_config(cfg: &SysIdConfiguration, io: &IoSpec) -> Result<Self, ModelError> {
        let count = cfg.arch_usize("members", 2);
        let class = match cfg.arch.get("member_class").and_then(ParamValue::as_text) {
            Some("vanilla_rnn") => ModelClass::VanillaRnn,
            Some("lstm") | None => ModelClass::Lstm,
            Some("gru") => ModelClass::Gru,
            Some("cfc") => ModelClass::Cfc,
            Some("kinematics_lstm") => ModelClass::KinematicsLstm,
            Some(other) => {
                return Err(ModelError::BadConfig(format!("bad ensemble member class {other}")))
            }
        };
        let mut member_cfg = SysIdConfiguration {
            model_class: class,
            arch: cfg.arch.clone(),
            train: cfg.train.clone(),
            seed: cfg.seed,
        };
        member_cfg.arch.remove("member_class");
        member_cfg.arch.remove("members");
        let members = (0..count)
            .map(|i| {
                let cfg_i = SysIdConfiguration {
                    seed: cfg.seed.wrapping_add(1_000_003 * i as u64),
                    ..member_cfg.clone()
                };
                build_model(&cfg_i, io)
            })
            .collect::<Result<Vec<_>, _>>()?;
        EnsembleModel::from_members(members)
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Box<dyn SequenceModel>] {
        &self.members
    }
}

impl SequenceModel for EnsembleModel {
    fn label(&self) -> &'static str {
        "ensemble_of_best"
    }

    fn io(&self) -> &IoSpec {
        &self.io
    }

    fn params(&self) -> &ParamStore {
        &self.combined
    }

    fn set_params(&mut self, params: ParamStore) -> Result<(), ModelError> {
        super::check_set_params(&self.combined, &params)?;
        for (i, m) in self.members.iter_mut().enumerate() {
            m.set_params(params.extract_prefixed(&format!("m{i}")))?;
        }
        self.combined = params;
        Ok(())
    }

    fn feedback(&self) -> bool {
        self.members.iter().any(|m| m.feedback())
    }

    fn init_state(
        &self,
        tape: &Tape,
        bound: &Bound,
        window: &InitWindow,
    ) -> Result<ModelState, ModelError> {
        let mut nodes = Vec::new();
        let mut prev = None;
        for (i, m) in self.members.iter().enumerate() {
            let sub = bound.subview(&format!("m{i}"));
            let state = m.init_state(tape, &sub, window)?;
            prev.get_or_insert(state.prev_output);
            nodes.extend(state.nodes);
        }
        Ok(ModelState { nodes, prev_output: prev.expect("at least one member") })
    }

    fn step(
        &self,
        tape: &Tape,
        bound: &Bound,
        state: &ModelState,
        input: &[f64],
        ctx: &mut StepCtx,
    ) -> Result<(ModelState, NodeId), ModelError> {
        let mut new_nodes = Vec::with_capacity(state.nodes.len());
        let mut outputs = Vec::with_capacity(self.members.len());
        let mut offset = 0;
        for (i, m) in self.members.iter().enumerate() {
            let sub = bound.subview(&format!("m{i}"));
            let len = self.state_lens[i];
            let member_state = ModelState {
                nodes: state.nodes[offset..offset + len].to_vec(),
                prev_output: state.prev_output,
            };
            offset += len;
            let (next, out) = m.step(tape, &sub, &member_state, input, ctx)?;
            new_nodes.extend(next.nodes);
            outputs.push(out);
        }
        let mut acc = outputs[0];
        for out in &outputs[1..] {
            acc = tape.add(acc, *out)?;
        }
        let mean = tape.scale(acc, 1.0 / outputs.len() as f64);
        Ok((ModelState { nodes: new_nodes, prev_output: mean }, mean))
    }

    fn clone_box(&self) -> Box<dyn SequenceModel> {
        Box::new(self.clone())
    }
}
