use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::models::{rollout, InitWindow, ModelState, RolloutOptions, SequenceModel, StepCtx};

use super::adam::{optimizer_step, OptimizerState};
use super::plan::{tbptt_chunks, teacher_forcing_prob, LossId, TrainPlan};
use super::TrainError;

/// One input/output series in training-ready (normalized) form.
#[derive(Clone, Debug)]
pub struct SeqPair {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

/// Training data layouts.
///
/// `CarriedSequence` is classic TBPTT over one long record: the forward state
/// carries across chunk boundaries while gradients stay truncated. `inputs`
/// and `targets` are aligned so that consuming `inputs[i]` predicts
/// `targets[i]`.
///
/// `StateWindows` trains on fixed-length windows, each initialized from the
/// measured state immediately preceding it — the natural layout when the full
/// state is observed and scheduled sampling applies.
#[derive(Clone, Debug)]
pub enum TrainData {
    CarriedSequence {
        window: InitWindow,
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    },
    StateWindows { trajs: Vec<SeqPair> },
}

/// Read-only scorer used for early stopping; implemented by the evaluation
/// pipeline.
pub trait Validator {
    fn score(&self, model: &dyn SequenceModel) -> Result<f64, String>;
}

impl<F> Validator for F
where
    F: Fn(&dyn SequenceModel) -> Result<f64, String>,
{
    fn score(&self, model: &dyn SequenceModel) -> Result<f64, String> {
        self(model)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// Epoch limit reached (including zero-epoch plans).
    Converged,
    Patience,
    Budget,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FitStatus {
    Ok,
    /// Budget expired before any validation produced a metric.
    TimedOut,
    NumericFailure(String),
}

#[derive(Clone, Copy, Debug)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_metric: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub curve: Vec<CurvePoint>,
    pub stop: StopReason,
    pub status: FitStatus,
    pub best_val: Option<f64>,
    pub wall_seconds: f64,
}

/// Writes a learning curve as `epoch,train_loss,val_metric,wall_seconds`.
pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,train_loss,val_metric,wall_seconds\n");
    for p in curve {
        let tl = p.train_loss.map(|v| v.to_string()).unwrap_or_default();
        let vm = p.val_metric.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", p.epoch, tl, vm, p.wall_seconds));
    }
    out
}

struct StateValues {
    nodes: Vec<Tensor>,
    prev_output: Tensor,
}

fn snapshot_state(tape: &Tape, state: &ModelState) -> StateValues {
    StateValues {
        nodes: state.nodes.iter().map(|n| tape.value(*n)).collect(),
        prev_output: tape.value(state.prev_output),
    }
}

fn restore_state(tape: &Tape, values: &StateValues) -> ModelState {
    ModelState {
        nodes: values.nodes.iter().map(|t| tape.constant(t.clone())).collect(),
        prev_output: tape.constant(values.prev_output.clone()),
    }
}

fn loss_node(
    tape: &Tape,
    outputs: &[NodeId],
    targets: &[Vec<f64>],
    loss: LossId,
) -> Result<NodeId, TrainError> {
    let stacked = tape.concat(outputs).map_err(TrainError::from)?;
    let flat: Vec<f64> = targets.iter().flatten().copied().collect();
    let truth = tape.constant(Tensor::vector(flat));
    let err = tape.sub(stacked, truth).map_err(TrainError::from)?;
    let per_entry = match loss {
        LossId::Mse => tape.square(err),
        LossId::Mae => tape.abs(err),
    };
    Ok(tape.mean(per_entry))
}

fn apply_gradients(
    model: &mut dyn SequenceModel,
    tape: &Tape,
    bound: &crate::models::Bound,
    loss: NodeId,
    opt: &mut OptimizerState,
    plan: &TrainPlan,
) -> Result<(), TrainError> {
    let grads = tape.backward(loss).map_err(TrainError::from)?;
    let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
    for name in model.params().names() {
        let id = bound.get(name);
        if let Some(g) = grads.get(id) {
            by_name.insert(name.clone(), g.clone());
        }
    }
    let mut params = model.params().clone();
    optimizer_step(&mut params, &by_name, opt, plan.learning_rate, plan.weight_decay)?;
    model
        .set_params(params)
        .map_err(|e| TrainError::BadPlan(e.to_string()))?;
    Ok(())
}

/// Open-loop chunked forward pass (no training): used to verify that chunking
/// only truncates gradients, never changes the forward computation.
pub fn chunked_forward(
    model: &dyn SequenceModel,
    window: &InitWindow,
    inputs: &[Vec<f64>],
    chunk_length: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Tensor>), TrainError> {
    let chunks = tbptt_chunks(inputs.len(), chunk_length)?;
    let mut carry: Option<StateValues> = None;
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in chunks {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let state = match &carry {
            Some(values) => restore_state(&tape, values),
            None => model
                .init_state(&tape, &bound, window)
                .map_err(|e| TrainError::Model(e.to_string()))?,
        };
        let mut ctx = StepCtx::eval(&mut rng);
        let slice = &inputs[chunk.start..chunk.start + chunk.len];
        let result = rollout(
            model,
            &tape,
            &bound,
            state,
            slice,
            chunk.len,
            &RolloutOptions::default(),
            &mut ctx,
        )
        .map_err(|e| TrainError::Model(e.to_string()))?;
        outputs.extend(result.outputs.iter().map(|id| tape.value_data(*id)));
        carry = Some(snapshot_state(&tape, &result.final_state));
    }
    let final_state = carry.expect("at least one chunk").nodes;
    Ok((outputs, final_state))
}

/// Fits a model in place and returns the learning curve, stop reason, and
/// fit status. The best-validation parameter snapshot is restored into the
/// model before returning. Deterministic given (model, data, plan, seed).
pub fn fit(
    model: &mut dyn SequenceModel,
    data: &TrainData,
    plan: &TrainPlan,
    validator: &dyn Validator,
    seed: u64,
) -> Result<FitOutcome, TrainError> {
    plan.validate()?;
    let start = Instant::now();
    let mut opt = OptimizerState::new(model.params());
    // the schedule stream (forcing + dropout) is independent of the
    // initialization stream, which already consumed the config seed
    let mut rng_sched = ChaCha8Rng::seed_from_u64(seed ^ 0x73a9_55df_0f15_c401);
    let mut rng_data = ChaCha8Rng::seed_from_u64(seed ^ 0x1b2f_9e86_44ce_aa17);

    let mut curve: Vec<CurvePoint> = Vec::new();
    let mut best: Option<(f64, crate::autodiff::ParamStore)> = None;
    let mut bad_evals = 0usize;
    let mut stop = StopReason::Converged;
    let mut status = FitStatus::Ok;

    let validate = |model: &dyn SequenceModel| -> Result<f64, String> { validator.score(model) };

    let mut epoch = 0usize;
    loop {
        if start.elapsed().as_secs_f64() >= plan.wall_budget_seconds {
            stop = StopReason::Budget;
            break;
        }
        if epoch >= plan.epochs {
            stop = StopReason::Converged;
            break;
        }

        let train_loss = match run_epoch(model, data, plan, epoch, &mut opt, &mut rng_sched, &mut rng_data)
        {
            Ok(loss) => loss,
            Err(TrainError::NumericFailure(msg)) => {
                status = FitStatus::NumericFailure(msg);
                break;
            }
            Err(other) => return Err(other),
        };
        epoch += 1;

        let mut point = CurvePoint {
            epoch,
            train_loss: Some(train_loss),
            val_metric: None,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if epoch % plan.eval_cadence == 0 {
            match validate(model) {
                Ok(val) => {
                    point.val_metric = Some(val);
                    if best.as_ref().map_or(true, |(b, _)| val < *b) {
                        best = Some((val, model.params().clone()));
                        bad_evals = 0;
                    } else {
                        bad_evals += 1;
                    }
                }
                Err(msg) => {
                    status = FitStatus::NumericFailure(format!("validation failed: {msg}"));
                    curve.push(point);
                    break;
                }
            }
        }
        point.wall_seconds = start.elapsed().as_secs_f64();
        curve.push(point);
        if bad_evals >= plan.patience {
            stop = StopReason::Patience;
            break;
        }
    }

    // ensure a metric exists when the loop never validated (short plans)
    if best.is_none() && matches!(status, FitStatus::Ok) {
        if start.elapsed().as_secs_f64() < plan.wall_budget_seconds {
            match validate(&*model) {
                Ok(val) => {
                    curve.push(CurvePoint {
                        epoch,
                        train_loss: None,
                        val_metric: Some(val),
                        wall_seconds: start.elapsed().as_secs_f64(),
                    });
                    best = Some((val, model.params().clone()));
                }
                Err(msg) => status = FitStatus::NumericFailure(format!("validation failed: {msg}")),
            }
        } else {
            status = FitStatus::TimedOut;
        }
    }

    let best_val = best.as_ref().map(|(v, _)| *v);
    if let Some((_, params)) = best {
        model
            .set_params(params)
            .map_err(|e| TrainError::BadPlan(e.to_string()))?;
    }
    Ok(FitOutcome {
        curve,
        stop,
        status,
        best_val,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_epoch(
    model: &mut dyn SequenceModel,
    data: &TrainData,
    plan: &TrainPlan,
    epoch: usize,
    opt: &mut OptimizerState,
    rng_sched: &mut ChaCha8Rng,
    rng_data: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    match data {
        TrainData::CarriedSequence { window, inputs, targets } => {
            if inputs.len() != targets.len() || inputs.is_empty() {
                return Err(TrainError::BadPlan(format!(
                    "carried sequence needs aligned non-empty inputs/targets, got {}/{}",
                    inputs.len(),
                    targets.len()
                )));
            }
            let p_force = teacher_forcing_prob(epoch, plan.epochs, plan.teacher_forcing_p0);
            let chunks = tbptt_chunks(inputs.len(), plan.chunk_length)?;
            let mut carry: Option<StateValues> = None;
            let mut weighted_loss = 0.0;
            for chunk in chunks {
                let tape = Tape::new();
                let bound = model.bind(&tape);
                let state = match &carry {
                    Some(values) => restore_state(&tape, values),
                    None => model
                        .init_state(&tape, &bound, window)
                        .map_err(|e| TrainError::Model(e.to_string()))?,
                };
                let in_slice = &inputs[chunk.start..chunk.start + chunk.len];
                let tgt_slice = &targets[chunk.start..chunk.start + chunk.len];
                let mut ctx = StepCtx::train(plan.dropout, rng_sched);
                let opts = RolloutOptions {
                    teacher: (p_force > 0.0 && model.feedback()).then_some(tgt_slice),
                    forcing_prob: if model.feedback() { p_force } else { 0.0 },
                };
                let result =
                    rollout(model, &tape, &bound, state, in_slice, chunk.len, &opts, &mut ctx)
                        .map_err(map_rollout_err)?;
                let loss = loss_node(&tape, &result.outputs, tgt_slice, plan.loss)?;
                let loss_value = tape.scalar_value(loss);
                if !loss_value.is_finite() {
                    return Err(TrainError::NumericFailure(format!(
                        "non-finite loss in chunk starting at {}",
                        chunk.start
                    )));
                }
                // the carried state is read before the update, as usual for
                // TBPTT with per-chunk updates
                carry = Some(snapshot_state(&tape, &result.final_state));
                apply_gradients(model, &tape, &bound, loss, opt, plan)?;
                weighted_loss += loss_value * chunk.len as f64;
            }
            Ok(weighted_loss / inputs.len() as f64)
        }
        TrainData::StateWindows { trajs } => {
            let h = plan.chunk_length;
            let mut windows: Vec<(usize, usize)> = Vec::new();
            for (ti, t) in trajs.iter().enumerate() {
                if t.inputs.len() != t.outputs.len() {
                    return Err(TrainError::BadPlan("misaligned trajectory".into()));
                }
                let mut s = 1;
                while s + h <= t.inputs.len() {
                    windows.push((ti, s));
                    s += h;
                }
            }
            if windows.is_empty() {
                return Err(TrainError::BadPlan(format!(
                    "no training windows of length {h} fit the data"
                )));
            }
            windows.shuffle(rng_data);
            let p_force = teacher_forcing_prob(epoch, plan.epochs, plan.teacher_forcing_p0);

            let mut weighted_loss = 0.0;
            for batch in windows.chunks(plan.batch_size) {
                let tape = Tape::new();
                let bound = model.bind(&tape);
                let mut terms = Vec::with_capacity(batch.len());
                for (ti, s) in batch {
                    let t = &trajs[*ti];
                    let window = InitWindow {
                        inputs: vec![t.inputs[s - 1].clone()],
                        outputs: vec![t.outputs[s - 1].clone()],
                    };
                    let state = model
                        .init_state(&tape, &bound, &window)
                        .map_err(|e| TrainError::Model(e.to_string()))?;
                    let in_slice = &t.inputs[s - 1..s - 1 + h];
                    let tgt_slice = &t.outputs[*s..s + h];
                    let mut ctx = StepCtx::train(plan.dropout, rng_sched);
                    let opts = RolloutOptions {
                        teacher: (p_force > 0.0).then_some(tgt_slice),
                        forcing_prob: p_force,
                    };
                    let result = rollout(model, &tape, &bound, state, in_slice, h, &opts, &mut ctx)
                        .map_err(map_rollout_err)?;
                    terms.push(loss_node(&tape, &result.outputs, tgt_slice, plan.loss)?);
                }
                let total = tape.concat(&terms).map_err(TrainError::from)?;
                let loss = tape.mean(total);
                let loss_value = tape.scalar_value(loss);
                if !loss_value.is_finite() {
                    return Err(TrainError::NumericFailure("non-finite batch loss".into()));
                }
                apply_gradients(model, &tape, &bound, loss, opt, plan)?;
                weighted_loss += loss_value * batch.len() as f64;
            }
            Ok(weighted_loss / windows.len() as f64)
        }
    }
}

fn map_rollout_err(e: crate::models::ModelError) -> TrainError {
    match e {
        crate::models::ModelError::NumericFailure { step } => {
            TrainError::NumericFailure(format!("rollout diverged at step {step}"))
        }
        other => TrainError::Model(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Cell, IoSpec, RecurrentModel};
    use rand_chacha::rand_core::SeedableRng;

    fn tiny_model() -> RecurrentModel {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        RecurrentModel::new(Cell::Rnn, 3, 1, false, false, IoSpec::new(1, 1, 4.0, 2), &mut rng).unwrap()
    }

    fn tiny_data(n: usize) -> TrainData {
        let inputs: Vec<Vec<f64>> = (0..n).map(|k| vec![(k as f64 * 0.3).sin()]).collect();
        let targets: Vec<Vec<f64>> =
            (0..n).map(|k| vec![0.5 * (k as f64 * 0.3).sin()]).collect();
        TrainData::CarriedSequence {
            window: InitWindow {
                inputs: vec![vec![0.0], vec![0.0]],
                outputs: vec![vec![0.0], vec![0.0]],
            },
            inputs,
            targets,
        }
    }

    struct TrainLossProxy;
    impl Validator for TrainLossProxy {
        fn score(&self, model: &dyn SequenceModel) -> Result<f64, String> {
            // cheap stand-in: norm of the output weights (deterministic)
            Ok(model.params().tensor("out.w").unwrap().data().iter().map(|v| v * v).sum())
        }
    }

    #[test]
    fn zero_epoch_plan_returns_initial_parameters() {
        let mut model = tiny_model();
        let before = model.params().clone();
        let plan = TrainPlan { epochs: 0, ..TrainPlan::default() };
        let out = fit(&mut model, &tiny_data(30), &plan, &TrainLossProxy, 0).unwrap();
        assert_eq!(out.stop, StopReason::Converged);
        assert_eq!(model.params(), &before);
        assert!(out.best_val.is_some(), "initial parameters still get scored");
    }

    #[test]
    fn near_zero_budget_stops_on_budget_without_metric() {
        let mut model = tiny_model();
        let plan = TrainPlan { epochs: 50, wall_budget_seconds: 1e-9, ..TrainPlan::default() };
        let out = fit(&mut model, &tiny_data(30), &plan, &TrainLossProxy, 0).unwrap();
        assert_eq!(out.stop, StopReason::Budget);
        assert!(out.curve.is_empty());
        assert_eq!(out.status, FitStatus::TimedOut);
    }

    #[test]
    fn chunked_forward_matches_unchunked_state_for_state() {
        let model = tiny_model();
        let inputs: Vec<Vec<f64>> = (0..97).map(|k| vec![(k as f64 * 0.1).cos()]).collect();
        let window = InitWindow {
            inputs: vec![vec![0.2], vec![0.4]],
            outputs: vec![vec![0.1], vec![0.3]],
        };
        let (full_out, full_state) = chunked_forward(&model, &window, &inputs, 1000).unwrap();
        let (chunk_out, chunk_state) = chunked_forward(&model, &window, &inputs, 10).unwrap();
        assert_eq!(full_out.len(), chunk_out.len());
        for (a, b) in full_out.iter().zip(&chunk_out) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
        for (a, b) in full_state.iter().zip(&chunk_state) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let run = || {
            let mut model = tiny_model();
            let plan = TrainPlan {
                epochs: 5,
                learning_rate: 0.02,
                chunk_length: 10,
                ..TrainPlan::default()
            };
            fit(&mut model, &tiny_data(40), &plan, &TrainLossProxy, 7).unwrap();
            model.params().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_reduces_the_loss() {
        let mut model = tiny_model();
        let plan = TrainPlan {
            epochs: 30,
            learning_rate: 0.05,
            chunk_length: 30,
            patience: 100,
            ..TrainPlan::default()
        };
        let out = fit(&mut model, &tiny_data(60), &plan, &TrainLossProxy, 0).unwrap();
        let first = out.curve.first().and_then(|p| p.train_loss).unwrap();
        let last = out.curve.iter().rev().find_map(|p| p.train_loss).unwrap();
        assert!(last < first * 0.5, "loss {first} -> {last}");
    }
}
