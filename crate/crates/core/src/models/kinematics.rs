use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParamStore, Tape, Tensor};
use crate::datamodel::SysIdConfiguration;

use super::common::{const_vec, dropout, insert_linear, linear};
use super::rollout::StepCtx;
use super::{augment_any, check_set_params, Bound, InitWindow, IoSpec, ModelError, ModelState, SequenceModel};

/// Hybrid drone model: an LSTM core predicts velocity and angular-velocity
/// increments only, while position and attitude are recovered by explicit
/// kinematic integration with learnable gains,
///
/// `p_t = p_{t-1} + γ_p ⊙ v_{t-1}`, `Φ_t = Φ_{t-1} + γ_Φ ⊙ ω_{t-1}`.
///
/// Position and attitude channels are never produced by the network
/// directly. Motor-speed inputs may be augmented with their element-wise
/// squares as a thrust proxy.
#[derive(Clone)]
pub struct KinematicsLstm {
    hidden: usize,
    layers: usize,
    augment: bool,
    io: IoSpec,
    params: ParamStore,
}

impl KinematicsLstm {
    pub fn from_config(
        cfg: &SysIdConfiguration,
        io: &IoSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        let hidden = cfg.arch_usize("hidden_size", 32);
        let layers = cfg.arch_usize("num_layers", 1);
        let augment = cfg.arch_bool("augment_inputs", true);
        KinematicsLstm::new(hidden, layers, augment, io.clone(), rng)
    }

    pub fn new(
        hidden: usize,
        layers: usize,
        augment: bool,
        io: IoSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        if io.n_outputs != 12 || io.n_inputs != 4 {
            return Err(ModelError::Dims(format!(
                "kinematics model expects the 12-state / 4-input drone layout, got {}x{}",
                io.n_inputs, io.n_outputs
            )));
        }
        if hidden < 1 || layers < 1 {
            return Err(ModelError::BadConfig("hidden_size and num_layers must be >= 1".into()));
        }
        let n_u = if augment { 8 } else { 4 };
        let d0 = 12 + n_u;
        let mut params = ParamStore::new();
        for l in 0..layers {
            let d_in = if l == 0 { d0 } else { hidden };
            insert_linear(&mut params, rng, &format!("l{l}"), 4 * hidden, d_in + hidden);
            let b = params.tensor_mut(&format!("l{l}.b")).unwrap();
            for v in &mut b.data_mut()[hidden..2 * hidden] {
                *v = 1.0;
            }
        }
        insert_linear(&mut params, rng, "delta", 6, hidden);

        // integration gains start at the sample period, corrected for the
        // scale ratio between the integrated and integrating channels when
        // normalization statistics are available
        let dt = io.sample_period;
        let (gain_p, gain_phi) = match &io.norm {
            Some(n) => {
                let s = &n.outputs.scale;
                (
                    (0..3).map(|i| dt * s[3 + i] / s[i]).collect::<Vec<f64>>(),
                    (0..3).map(|i| dt * s[9 + i] / s[6 + i]).collect::<Vec<f64>>(),
                )
            }
            None => (vec![dt; 3], vec![dt; 3]),
        };
        params.insert("gain_p", Tensor::vector(gain_p));
        params.insert("gain_phi", Tensor::vector(gain_phi));

        Ok(KinematicsLstm { hidden, layers, augment, io, params })
    }

    pub fn gains(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.params.tensor("gain_p").unwrap().data().to_vec(),
            self.params.tensor("gain_phi").unwrap().data().to_vec(),
        )
    }
}

impl SequenceModel for KinematicsLstm {
    fn label(&self) -> &'static str {
        "kinematics_lstm"
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
        true
    }

    fn init_state(
        &self,
        tape: &Tape,
        _bound: &Bound,
        window: &InitWindow,
    ) -> Result<ModelState, ModelError> {
        if window.len() != self.io.init_window_len {
            return Err(ModelError::Window {
                expected: self.io.init_window_len,
                got: window.len(),
            });
        }
        // true state seeds the feedback path; recurrent memory starts blank
        let prev_output = const_vec(tape, window.last_output());
        let zero = tape.constant(Tensor::zeros(&[self.hidden]));
        Ok(ModelState { nodes: vec![zero; self.layers * 2], prev_output })
    }

    fn step(
        &self,
        tape: &Tape,
        bound: &Bound,
        state: &ModelState,
        input: &[f64],
        ctx: &mut StepCtx,
    ) -> Result<(ModelState, NodeId), ModelError> {
        if input.len() != 4 {
            return Err(ModelError::Dims(format!("drone input has {} channels", input.len())));
        }
        let prev = state.prev_output;
        let u = if self.augment { augment_any(input) } else { input.to_vec() };
        let u_node = const_vec(tape, &u);
        let mut x = tape.concat(&[prev, u_node])?;

        let mut new_nodes = Vec::with_capacity(self.layers * 2);
        for l in 0..self.layers {
            if l > 0 {
                x = dropout(tape, x, ctx.dropout, ctx.train, ctx.rng)?;
            }
            let h = state.nodes[l * 2];
            let c = state.nodes[l * 2 + 1];
            let joint = tape.concat(&[h, x])?;
            let z = linear(tape, bound, &format!("l{l}"), joint)?;
            let n = self.hidden;
            let i = tape.sigmoid(tape.slice(z, 0, n)?);
            let f = tape.sigmoid(tape.slice(z, n, n)?);
            let g = tape.tanh(tape.slice(z, 2 * n, n)?);
            let o = tape.sigmoid(tape.slice(z, 3 * n, n)?);
            let c_new = tape.add(tape.mul(f, c)?, tape.mul(i, g)?)?;
            let h_new = tape.mul(o, tape.tanh(c_new))?;
            new_nodes.push(h_new);
            new_nodes.push(c_new);
            x = h_new;
        }

        let deltas = linear(tape, bound, "delta", x)?;
        let dv = tape.slice(deltas, 0, 3)?;
        let dw = tape.slice(deltas, 3, 3)?;

        let p_prev = tape.slice(prev, 0, 3)?;
        let v_prev = tape.slice(prev, 3, 3)?;
        let phi_prev = tape.slice(prev, 6, 3)?;
        let w_prev = tape.slice(prev, 9, 3)?;

        // network updates the rates only
        let v = tape.add(v_prev, dv)?;
        let w = tape.add(w_prev, dw)?;
        // kinematic integration recovers position and attitude
        let p = tape.add(p_prev, tape.mul(bound.get("gain_p"), v_prev)?)?;
        let phi = tape.add(phi_prev, tape.mul(bound.get("gain_phi"), w_prev)?)?;

        let out = tape.concat(&[p, v, phi, w])?;
        Ok((ModelState { nodes: new_nodes, prev_output: out }, out))
    }

    fn clone_box(&self) -> Box<dyn SequenceModel> {
        Box::new(self.clone())
    }
}
