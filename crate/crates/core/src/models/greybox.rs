use crate::autodiff::{NodeId, ParamStore, Tape, Tensor, Val};
use crate::datamodel::{ChannelStats, SysIdConfiguration};
use crate::simulate::dynamics::{rk4_step, tank_rates_core};

use super::common::{const_vec, softplus_inverse};
use super::rollout::StepCtx;
use super::{check_set_params, Bound, InitWindow, IoSpec, ModelError, ModelState, SequenceModel};

/// Physics-structured tank model: an RK4 one-step discretization of the
/// two-tank ODE with learnable positive rate coefficients.
///
/// The model runs in physical units internally. Incoming (normalized) inputs
/// are mapped back to physical units, the ODE is stepped, levels are clamped
/// at zero, and the lower level is re-normalized on the way out. The unknown
/// initial upper-tank level is itself a learnable positive parameter unless
/// pinned via the `fixed_initial_upper` architecture parameter.
///
/// The output alone fixes the coefficients only up to the state rescaling
/// `x1 -> a*x1` with `(k1, k2, k4) -> (k1*sqrt(a), k2/sqrt(a), k4*a)`: the
/// upper level is never measured, so its scale is free. A calibrated pump
/// gain (`fixed_pump_gain`) anchors that scale when full coefficient
/// recovery matters.
#[derive(Clone)]
pub struct GreyBoxTankModel {
    io: IoSpec,
    params: ParamStore,
    fixed_x1: Option<f64>,
    fixed_k4: Option<f64>,
    in_stats: ChannelStats,
    out_stats: ChannelStats,
}

impl GreyBoxTankModel {
    pub fn from_config(cfg: &SysIdConfiguration, io: &IoSpec) -> Result<Self, ModelError> {
        let rate_init = cfg.arch_f64("rate_init").unwrap_or(0.05);
        let fixed_x1 = cfg.arch_f64("fixed_initial_upper");
        let fixed_k4 = cfg.arch_f64("fixed_pump_gain");
        GreyBoxTankModel::new(io.clone(), rate_init, fixed_x1, fixed_k4)
    }

    pub fn new(
        io: IoSpec,
        rate_init: f64,
        fixed_x1: Option<f64>,
        fixed_k4: Option<f64>,
    ) -> Result<Self, ModelError> {
        if io.n_inputs != 1 || io.n_outputs != 1 {
            return Err(ModelError::Dims(format!(
                "tank grey-box expects 1 input and 1 output channel, got {}x{}",
                io.n_inputs, io.n_outputs
            )));
        }
        if !(rate_init > 0.0) {
            return Err(ModelError::BadConfig(format!("rate_init must be positive, got {rate_init}")));
        }
        let (in_stats, out_stats) = match &io.norm {
            Some(n) => (
                n.inputs.clone().unwrap_or_else(|| ChannelStats::identity(1)),
                n.outputs.clone(),
            ),
            None => (ChannelStats::identity(1), ChannelStats::identity(1)),
        };
        let learnable = if fixed_k4.is_some() { 3 } else { 4 };
        let mut params = ParamStore::new();
        params.insert("k_raw", Tensor::vector(vec![softplus_inverse(rate_init); learnable]));
        if fixed_x1.is_none() {
            params.insert("x1_raw", Tensor::vector(vec![softplus_inverse(0.1)]));
        }
        Ok(GreyBoxTankModel { io, params, fixed_x1, fixed_k4, in_stats, out_stats })
    }

    /// Current rate coefficients k1..k4 (through the softplus; the pump gain
    /// reads back as its calibrated value when fixed).
    pub fn rates(&self) -> [f64; 4] {
        let raw = self.params.tensor("k_raw").unwrap();
        match self.fixed_k4 {
            Some(k4) => [
                softplus(raw.data()[0]),
                softplus(raw.data()[1]),
                softplus(raw.data()[2]),
                k4,
            ],
            None => std::array::from_fn(|i| softplus(raw.data()[i])),
        }
    }

    pub fn initial_upper_level(&self) -> f64 {
        match self.fixed_x1 {
            Some(v) => v,
            None => softplus(self.params.tensor("x1_raw").unwrap().data()[0]),
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl SequenceModel for GreyBoxTankModel {
    fn label(&self) -> &'static str {
        "greybox_tank"
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
        false
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
        // measured lower level at the window end, back in physical units
        let y_phys = self.out_stats.denormalize_row(window.last_output())[0];
        let x2 = tape.constant_scalar(y_phys);
        let x1 = match self.fixed_x1 {
            Some(v) => tape.constant_scalar(v),
            None => tape.softplus(bound.get("x1_raw")),
        };
        let prev_output = const_vec(tape, window.last_output());
        Ok(ModelState { nodes: vec![x1, x2], prev_output })
    }

    fn step(
        &self,
        tape: &Tape,
        bound: &Bound,
        state: &ModelState,
        input: &[f64],
        _ctx: &mut StepCtx,
    ) -> Result<(ModelState, NodeId), ModelError> {
        if input.len() != 1 {
            return Err(ModelError::Dims(format!("tank input has {} channels", input.len())));
        }
        let u_phys = self.in_stats.denormalize_row(input)[0];
        let u = tape.scalar(u_phys);

        let k_raw = bound.get("k_raw");
        let learnable = if self.fixed_k4.is_some() { 3 } else { 4 };
        let mut k: Vec<Val> = (0..learnable)
            .map(|i| Ok(tape.as_val(tape.softplus(tape.slice(k_raw, i, 1)?))))
            .collect::<Result<_, ModelError>>()?;
        if let Some(k4) = self.fixed_k4 {
            k.push(tape.scalar(k4));
        }

        let x = [tape.as_val(state.nodes[0]), tape.as_val(state.nodes[1])];
        let next = rk4_step(&x, self.io.sample_period, |s| {
            tank_rates_core(s, &u, [&k[0], &k[1], &k[2], &k[3]])
        });
        let x1 = next[0].clone().relu();
        let x2 = next[1].clone().relu();

        // lower level back to normalized units: (x2 - mean) / scale
        let (m, s) = (self.out_stats.mean[0], self.out_stats.scale[0]);
        let y = (x2.clone() - m) / s;

        Ok((
            ModelState { nodes: vec![x1.id(), x2.id()], prev_output: y.id() },
            y.id(),
        ))
    }

    fn clone_box(&self) -> Box<dyn SequenceModel> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::rollout::rollout_values;
    use crate::simulate::{simulate_tank, TankParams};

    #[test]
    fn true_coefficients_reproduce_the_simulator() {
        let p = TankParams { overflow_coupling: false, level_max: 10.0, ..TankParams::default() };
        let input: Vec<f64> = (0..200)
            .map(|k| 0.4 + 0.3 * ((k as f64) * 0.05).sin())
            .collect();
        let run = simulate_tank(&p, &input, 4.0, [0.05, 0.04], 0.0, 0).unwrap();

        let io = IoSpec::new(1, 1, 4.0, 5);
        let mut model = GreyBoxTankModel::new(io, 0.05, None, None).unwrap();
        let mut params = model.params().clone();
        let raw = params.tensor_mut("k_raw").unwrap();
        for (slot, k) in raw.data_mut().iter_mut().zip([p.k1, p.k2, p.k3, p.k4]) {
            *slot = softplus_inverse(k);
        }
        let x1_at_window_end = run.states[4][0];
        params.tensor_mut("x1_raw").unwrap().data_mut()[0] = softplus_inverse(x1_at_window_end);
        model.set_params(params).unwrap();

        let traj = &run.trajectory;
        let window = InitWindow {
            inputs: traj.input_rows(0..5),
            outputs: traj.output_rows(0..5),
        };
        // predict samples 5..200 from inputs 4..199
        let inputs = traj.input_rows(4..199);
        let preds = rollout_values(&model, &window, &inputs, inputs.len()).unwrap();
        for (k, pred) in preds.iter().enumerate() {
            let truth = traj.output_row(5 + k)[0];
            assert!(
                (pred[0] - truth).abs() <= 1e-9,
                "sample {}: {} vs {}",
                5 + k,
                pred[0],
                truth
            );
        }
    }

    #[test]
    fn parameters_stay_strictly_positive() {
        let io = IoSpec::new(1, 1, 4.0, 5);
        let mut model = GreyBoxTankModel::new(io, 0.05, None, None).unwrap();
        let mut params = model.params().clone();
        for v in params.tensor_mut("k_raw").unwrap().data_mut() {
            *v = -40.0;
        }
        model.set_params(params).unwrap();
        for k in model.rates() {
            assert!(k > 0.0, "softplus keeps rates positive, got {k}");
        }
    }

    #[test]
    fn levels_clamp_at_zero_during_rollout() {
        let io = IoSpec::new(1, 1, 4.0, 1);
        let model = GreyBoxTankModel::new(io, 0.5, Some(0.0), None).unwrap();
        let window = InitWindow { inputs: vec![vec![0.0]], outputs: vec![vec![0.0]] };
        let inputs = vec![vec![0.0]; 50];
        let preds = rollout_values(&model, &window, &inputs, 50).unwrap();
        for p in preds {
            assert!(p[0] >= 0.0);
        }
    }
}
