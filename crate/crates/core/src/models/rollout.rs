use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};

use super::common::const_vec;
use super::{InitWindow, ModelError, ModelState, SequenceModel};

/// Per-step execution context: training mode (enables dropout and teacher
/// forcing) and the random stream that drives both.
pub struct StepCtx<'a> {
    pub train: bool,
    pub dropout: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl<'a> StepCtx<'a> {
    pub fn eval(rng: &'a mut ChaCha8Rng) -> Self {
        StepCtx { train: false, dropout: 0.0, rng }
    }

    pub fn train(dropout: f64, rng: &'a mut ChaCha8Rng) -> Self {
        StepCtx { train: true, dropout, rng }
    }
}

#[derive(Default)]
pub struct RolloutOptions<'a> {
    /// True outputs aligned with the rollout steps; `teacher[t]` is the truth
    /// the model should have produced at step `t`.
    pub teacher: Option<&'a [Vec<f64>]>,
    /// Probability that a fed-back output is replaced by the teacher value.
    pub forcing_prob: f64,
}

pub struct RolloutResult {
    pub outputs: Vec<NodeId>,
    pub final_state: ModelState,
}

/// Autoregressive rollout of `horizon` steps.
///
/// At step `t > 0`, when scheduled sampling is active, the fed-back previous
/// output is replaced by `teacher[t-1]` with probability `forcing_prob`.
/// With `forcing_prob == 0` neither the teacher argument nor the random
/// stream is touched, so the result is a pure open-loop simulation.
pub fn rollout(
    model: &dyn SequenceModel,
    tape: &Tape,
    bound: &super::Bound,
    state: ModelState,
    inputs: &[Vec<f64>],
    horizon: usize,
    opts: &RolloutOptions,
    ctx: &mut StepCtx,
) -> Result<RolloutResult, ModelError> {
    if horizon > inputs.len() {
        return Err(ModelError::Dims(format!(
            "horizon {horizon} exceeds {} available inputs",
            inputs.len()
        )));
    }
    if opts.forcing_prob > 0.0 && opts.teacher.is_none() {
        return Err(ModelError::BadConfig(
            "forcing_prob must be 0 when no teacher outputs are given".into(),
        ));
    }
    if let Some(teacher) = opts.teacher {
        if opts.forcing_prob > 0.0 && teacher.len() < horizon {
            return Err(ModelError::Dims(format!(
                "teacher covers {} steps, rollout needs {horizon}",
                teacher.len()
            )));
        }
    }

    let forcing = opts.forcing_prob > 0.0;
    let mut state = state;
    let mut outputs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if forcing && t > 0 && ctx.rng.gen::<f64>() < opts.forcing_prob {
            let teacher = opts.teacher.expect("checked above");
            state.prev_output = const_vec(tape, &teacher[t - 1]);
        }
        let (next, out) = model.step(tape, bound, &state, &inputs[t], ctx)?;
        if !tape.is_finite(out) || next.nodes.iter().any(|n| !tape.is_finite(*n)) {
            return Err(ModelError::NumericFailure { step: t });
        }
        outputs.push(out);
        state = next;
        state.prev_output = out;
    }
    Ok(RolloutResult { outputs, final_state: state })
}

/// Convenience open-loop rollout on a fresh tape, returning plain values.
pub fn rollout_values(
    model: &dyn SequenceModel,
    window: &InitWindow,
    inputs: &[Vec<f64>],
    horizon: usize,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let state = model.init_state(&tape, &bound, window)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = StepCtx::eval(&mut rng);
    let result = rollout(
        model,
        &tape,
        &bound,
        state,
        inputs,
        horizon,
        &RolloutOptions::default(),
        &mut ctx,
    )?;
    Ok(result.outputs.iter().map(|id| tape.value_data(*id)).collect())
}
