use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::datamodel::SysIdConfiguration;

use super::common::{const_vec, dropout, init_weight, insert_linear, linear, zeros_vec};
use super::rollout::StepCtx;
use super::{augment_any, check_set_params, Bound, InitWindow, IoSpec, ModelError, ModelState, SequenceModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Rnn,
    Lstm,
    Gru,
}

impl Cell {
    fn label(&self) -> &'static str {
        match self {
            Cell::Rnn => "vanilla_rnn",
            Cell::Lstm => "lstm",
            Cell::Gru => "gru",
        }
    }

    /// Recurrent memory slots per layer (LSTM carries a cell state too).
    fn slots(&self) -> usize {
        match self {
            Cell::Lstm => 2,
            _ => 1,
        }
    }
}

/// Stacked recurrent network with a linear output map.
///
/// Without feedback the initial state comes from a learned linear encoding of
/// the flattened init window; with feedback the previous (or true initial)
/// output is part of every step input and the memory starts at zero.
#[derive(Clone)]
pub struct RecurrentModel {
    cell: Cell,
    layers: usize,
    hidden: usize,
    feedback: bool,
    augment: bool,
    io: IoSpec,
    params: ParamStore,
}

impl RecurrentModel {
    pub fn from_config(
        cell: Cell,
        cfg: &SysIdConfiguration,
        io: &IoSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        let hidden = cfg.arch_usize("hidden_size", 32);
        let layers = cfg.arch_usize("num_layers", 1);
        let feedback = cfg.arch_bool("feedback", false);
        let augment = cfg.arch_bool("augment_inputs", false);
        RecurrentModel::new(cell, hidden, layers, feedback, augment, io.clone(), rng)
    }

    pub fn new(
        cell: Cell,
        hidden: usize,
        layers: usize,
        feedback: bool,
        augment: bool,
        io: IoSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        if hidden < 1 || layers < 1 {
            return Err(ModelError::BadConfig(format!(
                "hidden_size {hidden} and num_layers {layers} must be >= 1"
            )));
        }
        let mut model = RecurrentModel {
            cell,
            layers,
            hidden,
            feedback,
            augment,
            io,
            params: ParamStore::new(),
        };
        let mut params = ParamStore::new();
        let d0 = model.step_input_dim();
        for l in 0..layers {
            let d_in = if l == 0 { d0 } else { hidden };
            match cell {
                Cell::Rnn => insert_linear(&mut params, rng, &format!("l{l}"), hidden, d_in + hidden),
                Cell::Lstm => {
                    insert_linear(&mut params, rng, &format!("l{l}"), 4 * hidden, d_in + hidden);
                    // forget-gate bias starts open
                    let b = params.tensor_mut(&format!("l{l}.b")).unwrap();
                    for v in &mut b.data_mut()[hidden..2 * hidden] {
                        *v = 1.0;
                    }
                }
                Cell::Gru => {
                    insert_linear(&mut params, rng, &format!("l{l}.zr"), 2 * hidden, d_in + hidden);
                    insert_linear(&mut params, rng, &format!("l{l}.n"), hidden, d_in + hidden);
                }
            }
        }
        if !feedback {
            let window_dim = model.io.init_window_len * (model.io.n_inputs + model.io.n_outputs);
            let state_dim = layers * hidden * cell.slots();
            params.insert("enc.w", init_weight(rng, state_dim, window_dim));
            params.insert("enc.b", zeros_vec(state_dim));
        }
        insert_linear(&mut params, rng, "out", model.io.n_outputs, hidden);
        model.params = params;
        Ok(model)
    }

    fn step_input_dim(&self) -> usize {
        let n_u = if self.augment { 2 * self.io.n_inputs } else { self.io.n_inputs };
        n_u + if self.feedback { self.io.n_outputs } else { 0 }
    }

    fn layer_step(
        &self,
        tape: &Tape,
        bound: &Bound,
        l: usize,
        state: &[NodeId],
        x: NodeId,
    ) -> Result<(Vec<NodeId>, NodeId), ModelError> {
        let h = state[0];
        match self.cell {
            Cell::Rnn => {
                let joint = tape.concat(&[h, x])?;
                let z = linear(tape, bound, &format!("l{l}"), joint)?;
                let h_new = tape.tanh(z);
                Ok((vec![h_new], h_new))
            }
            Cell::Lstm => {
                let c = state[1];
                let joint = tape.concat(&[h, x])?;
                let z = linear(tape, bound, &format!("l{l}"), joint)?;
                let n = self.hidden;
                let i = tape.sigmoid(tape.slice(z, 0, n)?);
                let f = tape.sigmoid(tape.slice(z, n, n)?);
                let g = tape.tanh(tape.slice(z, 2 * n, n)?);
                let o = tape.sigmoid(tape.slice(z, 3 * n, n)?);
                let keep = tape.mul(f, c)?;
                let write = tape.mul(i, g)?;
                let c_new = tape.add(keep, write)?;
                let h_new = tape.mul(o, tape.tanh(c_new))?;
                Ok((vec![h_new, c_new], h_new))
            }
            Cell::Gru => {
                let joint = tape.concat(&[h, x])?;
                let zr = linear(tape, bound, &format!("l{l}.zr"), joint)?;
                let n = self.hidden;
                let z = tape.sigmoid(tape.slice(zr, 0, n)?);
                let r = tape.sigmoid(tape.slice(zr, n, n)?);
                let gated = tape.mul(r, h)?;
                let n_in = tape.concat(&[gated, x])?;
                let cand = tape.tanh(linear(tape, bound, &format!("l{l}.n"), n_in)?);
                // h' = (1 - z) ⊙ h + z ⊙ n
                let zh = tape.mul(z, h)?;
                let hold = tape.sub(h, zh)?;
                let write = tape.mul(z, cand)?;
                let h_new = tape.add(hold, write)?;
                Ok((vec![h_new], h_new))
            }
        }
    }
}

impl SequenceModel for RecurrentModel {
    fn label(&self) -> &'static str {
        self.cell.label()
    }

    fn io(&self) -> &IoSpec {
        &self.io
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn set_params(&mut self, params: ParamStore) -> Result<(), ModelError> {
        check_set_params(&self.params, &params)?;
        self.params = params;
        Ok(())
    }

    fn feedback(&self) -> bool {
        self.feedback
    }

    fn init_state(
        &self,
        tape: &Tape,
        bound: &Bound,
        window: &InitWindow,
    ) -> Result<ModelState, ModelError> {
        if window.len() != self.io.init_window_len {
            return Err(ModelError::Window {
                expected: self.io.init_window_len,
                got: window.len(),
            });
        }
        let prev_output = const_vec(tape, window.last_output());
        let slots = self.cell.slots();
        let nodes = if self.feedback {
            vec![tape.constant(crate::autodiff::Tensor::zeros(&[self.hidden])); self.layers * slots]
        } else {
            let flat = const_vec(tape, &window.flattened());
            let wx = tape.matmul(bound.get("enc.w"), flat)?;
            let enc = tape.add(wx, bound.get("enc.b"))?;
            let mut nodes = Vec::with_capacity(self.layers * slots);
            for i in 0..self.layers * slots {
                nodes.push(tape.slice(enc, i * self.hidden, self.hidden)?);
            }
            nodes
        };
        Ok(ModelState { nodes, prev_output })
    }

    fn step(
        &self,
        tape: &Tape,
        bound: &Bound,
        state: &ModelState,
        input: &[f64],
        ctx: &mut StepCtx,
    ) -> Result<(ModelState, NodeId), ModelError> {
        if input.len() != self.io.n_inputs {
            return Err(ModelError::Dims(format!(
                "step input has {} channels, expected {}",
                input.len(),
                self.io.n_inputs
            )));
        }
        let u = if self.augment { augment_any(input) } else { input.to_vec() };
        let u_node = const_vec(tape, &u);
        let mut x = if self.feedback {
            tape.concat(&[state.prev_output, u_node])?
        } else {
            u_node
        };

        let slots = self.cell.slots();
        let mut new_nodes = Vec::with_capacity(state.nodes.len());
        for l in 0..self.layers {
            if l > 0 {
                x = dropout(tape, x, ctx.dropout, ctx.train, ctx.rng)?;
            }
            let layer_state = &state.nodes[l * slots..(l + 1) * slots];
            let (next, h_out) = self.layer_step(tape, bound, l, layer_state, x)?;
            new_nodes.extend(next);
            x = h_out;
        }
        let y = linear(tape, bound, "out", x)?;
        Ok((ModelState { nodes: new_nodes, prev_output: y }, y))
    }

    fn clone_box(&self) -> Box<dyn SequenceModel> {
        Box::new(self.clone())
    }
}
