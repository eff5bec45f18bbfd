use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParamStore, Tape, Tensor, Val};
use crate::datamodel::{ChannelStats, SysIdConfiguration};
use crate::simulate::dynamics::{drone_rates, rk4_step};
use crate::simulate::DroneParams;

use super::common::{const_vec, dropout, insert_linear, linear, zeros_vec};
use super::rollout::StepCtx;
use super::{augment_any, check_set_params, Bound, InitWindow, IoSpec, ModelError, ModelState, SequenceModel};

/// Physics-prior drone model: a fixed nominal rigid-body RK4 one-step
/// predictor plus an LSTM residual added to the velocity and angular-velocity
/// blocks.
///
/// The residual head is zero-initialized, so a freshly built model starts out
/// as the nominal physics rollout; with the head weights at zero it
/// reproduces it exactly.
#[derive(Clone)]
pub struct PhysicsResidualModel {
    hidden: usize,
    layers: usize,
    augment: bool,
    nominal: DroneParams,
    io: IoSpec,
    params: ParamStore,
    out_stats: ChannelStats,
    in_stats: ChannelStats,
}

impl PhysicsResidualModel {
    pub fn from_config(
        cfg: &SysIdConfiguration,
        io: &IoSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        let hidden = cfg.arch_usize("hidden_size", 32);
        let layers = cfg.arch_usize("num_layers", 1);
        let augment = cfg.arch_bool("augment_inputs", false);
        PhysicsResidualModel::new(hidden, layers, augment, DroneParams::default(), io.clone(), rng)
    }

    pub fn new(
        hidden: usize,
        layers: usize,
        augment: bool,
        nominal: DroneParams,
        io: IoSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        if io.n_outputs != 12 || io.n_inputs != 4 {
            return Err(ModelError::Dims(format!(
                "physics-residual model expects the 12-state / 4-input drone layout, got {}x{}",
                io.n_inputs, io.n_outputs
            )));
        }
        nominal.validate().map_err(|e| ModelError::BadConfig(e.to_string()))?;
        let (in_stats, out_stats) = match &io.norm {
            Some(n) => (
                n.inputs.clone().unwrap_or_else(|| ChannelStats::identity(4)),
                n.outputs.clone(),
            ),
            None => (ChannelStats::identity(4), ChannelStats::identity(12)),
        };
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
        // the residual head starts silent: the model begins as pure physics
        params.insert("res.w", Tensor::zeros(&[6, hidden]));
        params.insert("res.b", zeros_vec(6));
        Ok(PhysicsResidualModel { hidden, layers, augment, nominal, io, params, out_stats, in_stats })
    }
}

impl SequenceModel for PhysicsResidualModel {
    fn label(&self) -> &'static str {
        "physics_residual"
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

        // nominal physics step in physical units
        let u_phys = self.in_stats.denormalize_row(input);
        let u_vals: [Val; 4] = std::array::from_fn(|i| tape.scalar(u_phys[i]));
        let prev_phys = {
            let scale = const_vec(tape, &self.out_stats.scale);
            let mean = const_vec(tape, &self.out_stats.mean);
            tape.add(tape.mul(prev, scale)?, mean)?
        };
        let x_vals: [Val; 12] = {
            let mut vals = Vec::with_capacity(12);
            for i in 0..12 {
                vals.push(tape.as_val(tape.slice(prev_phys, i, 1)?));
            }
            vals.try_into().ok().expect("12 components")
        };
        let nom = rk4_step(&x_vals, self.io.sample_period, |s| {
            drone_rates(s, &u_vals, &self.nominal)
        });
        let nom_ids: Vec<NodeId> = nom.iter().map(Val::id).collect();
        let nom_phys = tape.concat(&nom_ids)?;
        let nom_norm = {
            let mean = const_vec(tape, &self.out_stats.mean);
            let scale = const_vec(tape, &self.out_stats.scale);
            tape.div(tape.sub(nom_phys, mean)?, scale)?
        };

        // LSTM residual on the normalized signals
        let u_aug = if self.augment { augment_any(input) } else { input.to_vec() };
        let u_node = const_vec(tape, &u_aug);
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
        let res = linear(tape, bound, "res", x)?;

        // residual corrects the rate blocks only
        let p = tape.slice(nom_norm, 0, 3)?;
        let v = tape.add(tape.slice(nom_norm, 3, 3)?, tape.slice(res, 0, 3)?)?;
        let phi = tape.slice(nom_norm, 6, 3)?;
        let w = tape.add(tape.slice(nom_norm, 9, 3)?, tape.slice(res, 3, 3)?)?;
        let out = tape.concat(&[p, v, phi, w])?;

        Ok((ModelState { nodes: new_nodes, prev_output: out }, out))
    }

    fn clone_box(&self) -> Box<dyn SequenceModel> {
        Box::new(self.clone())
    }
}
