use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, ParamStore, Tape, Tensor};
use crate::datamodel::SysIdConfiguration;

use super::common::{const_vec, init_weight, insert_linear, linear, softplus_inverse, zeros_vec};
use super::rollout::StepCtx;
use super::{augment_any, check_set_params, Bound, InitWindow, IoSpec, ModelError, ModelState, SequenceModel};

/// Closed-form continuous-time recurrent cell with learnable per-unit time
/// constants.
///
/// The hidden state relaxes toward an input-driven candidate target:
///
/// `h' = g ⊙ c + (1 - g) ⊙ h ⊙ exp(-Δt / τ)`
///
/// with gate `g = σ(W_g [h, u] + b_g)`, candidate `c = tanh(W_c u + b_c)`,
/// and `τ = softplus(τ_raw) + 1e-4`. Because the candidate depends on the
/// input only, zero input with zero biases makes `‖h‖∞` non-increasing for
/// any weights: the unit is structurally biased toward decaying solutions.
#[derive(Clone)]
pub struct CfcModel {
    hidden: usize,
    feedback: bool,
    augment: bool,
    io: IoSpec,
    params: ParamStore,
}

impl CfcModel {
    pub fn from_config(
        cfg: &SysIdConfiguration,
        io: &IoSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        if cfg.arch_usize("num_layers", 1) != 1 {
            return Err(ModelError::BadConfig("the cfc cell is single-layer".into()));
        }
        let hidden = cfg.arch_usize("hidden_size", 32);
        let feedback = cfg.arch_bool("feedback", false);
        let augment = cfg.arch_bool("augment_inputs", false);
        CfcModel::new(hidden, feedback, augment, io.clone(), rng)
    }

    pub fn new(
        hidden: usize,
        feedback: bool,
        augment: bool,
        io: IoSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ModelError> {
        if hidden < 1 {
            return Err(ModelError::BadConfig("hidden_size must be >= 1".into()));
        }
        let mut model =
            CfcModel { hidden, feedback, augment, io, params: ParamStore::new() };
        let d_in = model.step_input_dim();
        let mut params = ParamStore::new();
        insert_linear(&mut params, rng, "gate", hidden, hidden + d_in);
        insert_linear(&mut params, rng, "cand", hidden, d_in);
        // time constants seeded between half and five sample periods
        let dt = model.io.sample_period;
        let tau: Vec<f64> = (0..hidden)
            .map(|_| softplus_inverse(rng.gen_range(0.5 * dt..5.0 * dt)))
            .collect();
        params.insert("tau_raw", Tensor::vector(tau));
        if !feedback {
            let window_dim = model.io.init_window_len * (model.io.n_inputs + model.io.n_outputs);
            params.insert("enc.w", init_weight(rng, hidden, window_dim));
            params.insert("enc.b", zeros_vec(hidden));
        }
        insert_linear(&mut params, rng, "out", model.io.n_outputs, hidden);
        model.params = params;
        Ok(model)
    }

    fn step_input_dim(&self) -> usize {
        let n_u = if self.augment { 2 * self.io.n_inputs } else { self.io.n_inputs };
        n_u + if self.feedback { self.io.n_outputs } else { 0 }
    }
}

impl SequenceModel for CfcModel {
    fn label(&self) -> &'static str {
        "cfc"
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
        let h = if self.feedback {
            tape.constant(Tensor::zeros(&[self.hidden]))
        } else {
            let flat = const_vec(tape, &window.flattened());
            let wx = tape.matmul(bound.get("enc.w"), flat)?;
            tape.add(wx, bound.get("enc.b"))?
        };
        Ok(ModelState { nodes: vec![h], prev_output })
    }

    fn step(
        &self,
        tape: &Tape,
        bound: &Bound,
        state: &ModelState,
        input: &[f64],
        _ctx: &mut StepCtx,
    ) -> Result<(ModelState, NodeId), ModelError> {
        if input.len() != self.io.n_inputs {
            return Err(ModelError::Dims(format!(
                "step input has {} channels, expected {}",
                input.len(),
                self.io.n_inputs
            )));
        }
        let h = state.nodes[0];
        let u = if self.augment { augment_any(input) } else { input.to_vec() };
        let u_node = const_vec(tape, &u);
        let u_eff = if self.feedback {
            tape.concat(&[state.prev_output, u_node])?
        } else {
            u_node
        };

        let gate_in = tape.concat(&[h, u_eff])?;
        let g = tape.sigmoid(linear(tape, bound, "gate", gate_in)?);
        let c = tape.tanh(linear(tape, bound, "cand", u_eff)?);

        let tau = tape.add_scalar(tape.softplus(bound.get("tau_raw")), 1e-4);
        let dt = tape.constant(Tensor::filled(&[self.hidden], self.io.sample_period));
        let decay = tape.exp(tape.neg(tape.div(dt, tau)?));

        // h' = g ⊙ c + (1 - g) ⊙ h ⊙ decay
        let toward = tape.mul(g, c)?;
        let retained = {
            let gh = tape.mul(g, h)?;
            let hold = tape.sub(h, gh)?;
            tape.mul(hold, decay)?
        };
        let h_new = tape.add(toward, retained)?;
        let y = linear(tape, bound, "out", h_new)?;
        Ok((ModelState { nodes: vec![h_new], prev_output: y }, y))
    }

    fn clone_box(&self) -> Box<dyn SequenceModel> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn zero_input_zero_bias_state_norm_never_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let io = IoSpec::new(1, 1, 4.0, 1);
        let mut m = CfcModel::new(6, false, false, io, &mut rng).unwrap();
        // zero both biases; weights stay random
        let mut params = m.params().clone();
        for name in ["gate.b", "cand.b"] {
            for v in params.tensor_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        m.set_params(params).unwrap();

        let tape = Tape::new();
        let bound = m.bind(&tape);
        // seed a nonzero state directly
        let h0 = tape.constant(Tensor::vector(vec![0.9, -1.4, 0.3, 2.0, -0.2, 0.6]));
        let mut state = ModelState { nodes: vec![h0], prev_output: const_vec(&tape, &[0.0]) };
        let mut rng2 = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = StepCtx::eval(&mut rng2);
        let mut prev_norm = f64::INFINITY;
        for _ in 0..100 {
            let norm = tape
                .value_data(state.nodes[0])
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(norm <= prev_norm + 1e-12, "norm grew: {norm} > {prev_norm}");
            prev_norm = norm;
            let (next, _) = m.step(&tape, &bound, &state, &[0.0], &mut ctx).unwrap();
            state = next;
        }
    }

    #[test]
    fn time_constants_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let io = IoSpec::new(1, 1, 0.01, 1);
        let m = CfcModel::new(8, false, false, io, &mut rng).unwrap();
        let raw = m.params().tensor("tau_raw").unwrap();
        for v in raw.data() {
            let tau = (1.0 + v.exp()).ln() + 1e-4;
            assert!(tau > 0.0 && tau.is_finite());
        }
    }
}
