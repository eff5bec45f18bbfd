use crate::datamodel::{
    normalize, NormalizationStats, SysIdConfiguration, Trajectory, TrialStatus,
};
use crate::models::{
    build_model, rollout_values, InitWindow, IoSpec, NaiveConstantModel, SequenceModel,
};
use crate::train::{fit, FitOutcome, FitStatus, TrainData, TrainPlan, SeqPair, Validator};

use super::metrics::{mae_rows, rmse, MetricReport, WindowSet};
use super::protocol::{EvalProtocol, InitPolicy, MetricId, Segment};
use super::EvalError;

/// Options that govern how fold trainings run, without touching the
/// protocol itself.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Caps every fold's wall budget when set.
    pub wall_budget_override: Option<f64>,
    /// Fold trainings run on up to this many worker threads (0 or 1: serial).
    pub jobs: usize,
}

/// Everything a cross-validation run produces: the metric report, the
/// per-fold trained models (retained for ensembling), learning curves, and
/// the failure classification when a fold did not complete.
pub struct CvOutcome {
    pub report: MetricReport,
    pub fold_models: Vec<Box<dyn SequenceModel>>,
    pub fold_outcomes: Vec<FitOutcome>,
    pub status: TrialStatus,
    pub failing_fold: Option<usize>,
}

fn window_of(traj: &Trajectory, seg: &Segment) -> InitWindow {
    InitWindow {
        inputs: traj.input_rows(seg.init()),
        outputs: traj.output_rows(seg.init()),
    }
}

/// Open-loop predictions for a validation segment: the model is initialized
/// from the segment's window and driven by the inputs `[start-1, start+len-1)`,
/// producing one prediction per body sample.
pub fn open_loop_predictions(
    model: &dyn SequenceModel,
    traj: &Trajectory,
    seg: &Segment,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let window = window_of(traj, seg);
    let inputs = traj.input_rows(seg.start - 1..seg.start + seg.len - 1);
    rollout_values(model, &window, &inputs, seg.len)
        .map_err(|e| EvalError::Scoring(e.to_string()))
}

/// Open-loop simulation RMSE over a whole validation segment (no internal
/// discard; channel-mean over multivariate outputs).
pub fn open_loop_rmse(
    model: &dyn SequenceModel,
    traj: &Trajectory,
    seg: &Segment,
) -> Result<f64, EvalError> {
    let preds = open_loop_predictions(model, traj, seg)?;
    let truth = traj.output_rows(seg.body());
    let n_y = traj.n_outputs();
    let mut acc = 0.0;
    for ch in 0..n_y {
        let t: Vec<f64> = truth.iter().map(|r| r[ch]).collect();
        let p: Vec<f64> = preds.iter().map(|r| r[ch]).collect();
        acc += rmse(&t, &p, 1)?;
    }
    Ok(acc / n_y as f64)
}

/// Starts of the non-overlapping `horizon`-step windows of a trajectory,
/// each needing the sample immediately before it for initialization.
/// A trailing partial window is dropped.
pub fn window_starts(total: usize, horizon: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 1;
    while s + horizon <= total {
        starts.push(s);
        s += horizon;
    }
    starts
}

/// Rolls a model over every window of the segment's trajectory region,
/// initializing from the true state before each window. Returns (truth,
/// prediction) rows per window, in the trajectory's current units.
pub fn windowed_predictions(
    model: &dyn SequenceModel,
    traj: &Trajectory,
    horizon: usize,
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>), EvalError> {
    if traj.len() < horizon + 1 {
        return Err(EvalError::Scoring(format!(
            "trajectory of {} samples cannot host a {horizon}-step window",
            traj.len()
        )));
    }
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for s in window_starts(traj.len(), horizon) {
        let window = InitWindow {
            inputs: traj.input_rows(s - 1..s),
            outputs: traj.output_rows(s - 1..s),
        };
        let inputs = traj.input_rows(s - 1..s - 1 + horizon);
        let p = rollout_values(model, &window, &inputs, horizon)
            .map_err(|e| EvalError::Scoring(e.to_string()))?;
        truth.push(traj.output_rows(s..s + horizon));
        pred.push(p);
    }
    Ok((truth, pred))
}

/// Windowed open-loop MAE (the drone selection metric): the mean absolute
/// error over all windows, steps, and channels of a (normalized) trajectory.
pub fn windowed_rollout_mae(
    model: &dyn SequenceModel,
    traj_normalized: &Trajectory,
    horizon: usize,
) -> Result<f64, EvalError> {
    let (truth, pred) = windowed_predictions(model, traj_normalized, horizon)?;
    let flat_t: Vec<Vec<f64>> = truth.into_iter().flatten().collect();
    let flat_p: Vec<Vec<f64>> = pred.into_iter().flatten().collect();
    mae_rows(&flat_t, &flat_p)
}

/// Windowed predictions in physical units for MEE reporting: the model runs
/// in normalized space, predictions are denormalized, truth stays raw.
pub fn mee_windows(
    model: &dyn SequenceModel,
    traj_raw: &Trajectory,
    stats: &NormalizationStats,
    horizon: usize,
) -> Result<WindowSet, EvalError> {
    let traj_norm = normalize(traj_raw, stats)?;
    let (_, pred_norm) = windowed_predictions(model, &traj_norm, horizon)?;
    let pred: Vec<Vec<Vec<f64>>> = pred_norm
        .into_iter()
        .map(|w| w.into_iter().map(|row| stats.outputs.denormalize_row(&row)).collect())
        .collect();
    let truth: Vec<Vec<Vec<f64>>> = window_starts(traj_raw.len(), horizon)
        .into_iter()
        .map(|s| traj_raw.output_rows(s..s + horizon))
        .collect();
    Ok(WindowSet { horizon, truth, pred })
}

/// Scores one model on one fold's validation data per the protocol metric.
pub fn score_fold_validation(
    model: &dyn SequenceModel,
    protocol: &EvalProtocol,
    val_traj_normalized: &Trajectory,
    val_seg: &Segment,
) -> Result<f64, EvalError> {
    match protocol.metric {
        MetricId::OpenLoopRmse => open_loop_rmse(model, val_traj_normalized, val_seg),
        MetricId::WindowedMae => {
            // windows tile the validation segment, including its init sample
            let region = val_traj_normalized.clone_region(val_seg.init_start, val_seg.start + val_seg.len)?;
            windowed_rollout_mae(model, &region, protocol.horizon)
        }
    }
}

struct FoldValidator {
    protocol: EvalProtocol,
    val_traj: Trajectory,
    val_seg: Segment,
}

impl Validator for FoldValidator {
    fn score(&self, model: &dyn SequenceModel) -> Result<f64, String> {
        score_fold_validation(model, &self.protocol, &self.val_traj, &self.val_seg)
            .map_err(|e| e.to_string())
    }
}

fn fold_stats(
    protocol: &EvalProtocol,
    trajs: &[Trajectory],
    fold: usize,
) -> Result<NormalizationStats, EvalError> {
    let segs: Vec<(&Trajectory, std::ops::Range<usize>)> = protocol.folds[fold]
        .train
        .iter()
        .map(|s| (&trajs[s.traj], s.body()))
        .collect();
    NormalizationStats::from_segments(
        &segs,
        protocol.normalize_inputs,
        format!("fold{fold}-train"),
    )
    .map_err(|e| EvalError::Scoring(e.to_string()))
}

struct FoldResult {
    metric: Option<f64>,
    model: Box<dyn SequenceModel>,
    outcome: FitOutcome,
}

fn run_fold(
    cfg: &SysIdConfiguration,
    protocol: &EvalProtocol,
    trajs: &[Trajectory],
    fold: usize,
    opts: &TrainOptions,
) -> Result<FoldResult, EvalError> {
    let stats = fold_stats(protocol, trajs, fold)?;
    let normalized: Vec<Trajectory> =
        trajs.iter().map(|t| normalize(t, &stats)).collect::<Result<_, _>>()?;

    let sample_period = trajs[0].sample_period();
    let io = IoSpec {
        n_inputs: trajs[0].n_inputs(),
        n_outputs: trajs[0].n_outputs(),
        sample_period,
        init_window_len: protocol.init_window_len,
        norm: Some(stats.clone()),
    };
    let mut model = build_model(cfg, &io).map_err(|e| EvalError::Scoring(e.to_string()))?;

    let mut plan = TrainPlan::from_config(cfg).map_err(|e| EvalError::Scoring(e.to_string()))?;
    if let Some(cap) = opts.wall_budget_override {
        plan.wall_budget_seconds = plan.wall_budget_seconds.min(cap);
    }

    let split = &protocol.folds[fold];
    let data = match protocol.init_policy {
        InitPolicy::EncoderWindow => {
            let seg = &split.train[0];
            let t = &normalized[seg.traj];
            TrainData::CarriedSequence {
                window: window_of(t, seg),
                inputs: t.input_rows(seg.start - 1..seg.start + seg.len - 1),
                targets: t.output_rows(seg.body()),
            }
        }
        InitPolicy::TrueState => TrainData::StateWindows {
            trajs: split
                .train
                .iter()
                .map(|seg| {
                    let t = &normalized[seg.traj];
                    SeqPair {
                        inputs: t.input_rows(seg.init_start..seg.start + seg.len),
                        outputs: t.output_rows(seg.init_start..seg.start + seg.len),
                    }
                })
                .collect(),
        },
    };

    let validator = FoldValidator {
        protocol: protocol.clone(),
        val_traj: normalized[split.val.traj].clone(),
        val_seg: split.val.clone(),
    };
    let outcome = fit(
        model.as_mut(),
        &data,
        &plan,
        &validator,
        cfg.seed.wrapping_add(fold as u64),
    )
    .map_err(|e| EvalError::Scoring(e.to_string()))?;
    Ok(FoldResult { metric: outcome.best_val, model, outcome })
}

/// Trains a fresh model per fold (normalization statistics from the fold's
/// training data only), scores each on its held-out data, and aggregates by
/// the arithmetic mean. Fold models are retained for ensembling.
pub fn cross_validation_score(
    cfg: &SysIdConfiguration,
    protocol: &EvalProtocol,
    trajs: &[Trajectory],
    opts: &TrainOptions,
) -> Result<CvOutcome, EvalError> {
    protocol.validate(trajs)?;
    cfg.validate().map_err(|e| EvalError::Scoring(e.to_string()))?;

    let n_folds = protocol.folds.len();
    let results: Vec<Result<FoldResult, EvalError>> = if opts.jobs > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n_folds)
                .map(|fold| scope.spawn(move || run_fold(cfg, protocol, trajs, fold, opts)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("fold thread")).collect()
        })
    } else {
        (0..n_folds).map(|fold| run_fold(cfg, protocol, trajs, fold, opts)).collect()
    };

    let hash = protocol.content_hash();
    let mut per_fold = Vec::with_capacity(n_folds);
    let mut fold_models = Vec::with_capacity(n_folds);
    let mut fold_outcomes = Vec::with_capacity(n_folds);
    let mut status = TrialStatus::Ok;
    let mut failing_fold = None;
    for (k, res) in results.into_iter().enumerate() {
        match res {
            Ok(FoldResult { metric: Some(m), model, outcome }) if m.is_finite() => {
                per_fold.push(m);
                fold_models.push(model);
                fold_outcomes.push(outcome);
            }
            Ok(FoldResult { model, outcome, .. }) => {
                status = match outcome.status {
                    FitStatus::TimedOut => TrialStatus::TrainTimeout,
                    _ => TrialStatus::NumericFailure,
                };
                failing_fold.get_or_insert(k);
                fold_models.push(model);
                fold_outcomes.push(outcome);
            }
            Err(e) => {
                return Err(e);
            }
        }
    }
    let report = if status == TrialStatus::Ok {
        MetricReport::from_folds(per_fold, hash)
    } else {
        MetricReport { per_fold, aggregate: None, protocol_hash: hash, mee: None }
    };
    Ok(CvOutcome { report, fold_models, fold_outcomes, status, failing_fold })
}

/// Scores the naive constant predictor under the protocol: it holds each
/// initialization state over the whole horizon and is scored like any model.
pub fn naive_predictor_score(
    protocol: &EvalProtocol,
    trajs: &[Trajectory],
) -> Result<MetricReport, EvalError> {
    protocol.validate(trajs)?;
    let mut per_fold = Vec::new();
    for fold in 0..protocol.folds.len() {
        let stats = fold_stats(protocol, trajs, fold)?;
        let split = &protocol.folds[fold];
        let val = normalize(&trajs[split.val.traj], &stats)?;
        let io = IoSpec {
            n_inputs: val.n_inputs(),
            n_outputs: val.n_outputs(),
            sample_period: val.sample_period(),
            init_window_len: protocol.init_window_len,
            norm: Some(stats),
        };
        let model = NaiveConstantModel::new(io);
        per_fold.push(score_fold_validation(&model, protocol, &val, &split.val)?);
    }
    Ok(MetricReport::from_folds(per_fold, protocol.content_hash()))
}

/// Full-sequence open-loop test scoring for the tank benchmark: the model is
/// initialized from the first `init_window_len` samples and simulates the
/// rest; the RMSE discards the first `test_discard_k0 - 1` samples and is
/// reported in both normalized and physical units.
pub fn score_tank_test(
    model: &dyn SequenceModel,
    test_raw: &Trajectory,
    stats: &NormalizationStats,
    protocol: &EvalProtocol,
) -> Result<(f64, f64), EvalError> {
    let test = normalize(test_raw, stats)?;
    let w = protocol.init_window_len;
    let seg = Segment { traj: 0, start: w, len: test.len() - w, init_start: 0, init_len: w };
    let preds = open_loop_predictions(model, &test, &seg)?;
    // assemble the full-length prediction series; the window samples carry
    // the measured values and fall inside the discard anyway
    let mut yhat: Vec<f64> = test.output_rows(0..w).iter().map(|r| r[0]).collect();
    yhat.extend(preds.iter().map(|r| r[0]));
    let y: Vec<f64> = test.output_channel(0);
    let r_norm = rmse(&y, &yhat, protocol.test_discard_k0)?;
    let scale = stats.outputs.scale[0];
    Ok((r_norm, r_norm * scale))
}

impl Trajectory {
    /// Contiguous sub-trajectory view `[from, to)` as an owned trajectory.
    pub fn clone_region(&self, from: usize, to: usize) -> Result<Trajectory, EvalError> {
        if from >= to || to > self.len() {
            return Err(EvalError::Scoring(format!(
                "region [{from}, {to}) out of bounds for {} samples",
                self.len()
            )));
        }
        Trajectory::new(
            self.sample_period(),
            self.input_names().to_vec(),
            self.output_names().to_vec(),
            self.input_rows(from..to),
            self.output_rows(from..to),
        )
        .map_err(|e| EvalError::Scoring(e.to_string()))
    }
}
