use serde::{Deserialize, Serialize};

use crate::simulate::euler_to_rotation;

use super::EvalError;

/// Open-loop simulation RMSE with a 1-based discard index:
/// `sqrt(mean over k = k0..=K of (y_k - yhat_k)^2)`, so `N = K - k0 + 1`
/// terms enter the mean.
pub fn rmse(y_true: &[f64], y_pred: &[f64], k0: usize) -> Result<f64, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::Metric(format!(
            "length mismatch: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let k_max = y_true.len();
    if k0 < 1 || k0 > k_max {
        return Err(EvalError::Metric(format!(
            "discard index k0 = {k0} outside 1..={k_max}"
        )));
    }
    let n = k_max - k0 + 1;
    let sum: f64 = y_true[k0 - 1..]
        .iter()
        .zip(&y_pred[k0 - 1..])
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok((sum / n as f64).sqrt())
}

/// Mean absolute error over equally shaped row sets.
pub fn mae_rows(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64, EvalError> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(EvalError::Metric(format!(
            "row count mismatch: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, p) in truth.iter().zip(pred) {
        if t.len() != p.len() {
            return Err(EvalError::Metric("row width mismatch".into()));
        }
        for (a, b) in t.iter().zip(p) {
            sum += (a - b).abs();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Geodesic distance on SO(3) between two ZYX Euler attitudes:
/// `arccos((trace(R_a^T R_b) - 1) / 2)`, trace argument clamped into
/// [-1, 1] against floating-point drift. Angles outside principal ranges
/// are handled by the rotation construction itself.
pub fn geodesic_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let ra = euler_to_rotation(a);
    let rb = euler_to_rotation(b);
    let mut trace = 0.0;
    for i in 0..3 {
        for k in 0..3 {
            trace += ra[k][i] * rb[k][i];
        }
    }
    let arg = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    arg.acos()
}

/// 3-component state groups of the drone state vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateGroup {
    Position,
    Velocity,
    Attitude,
    AngularVelocity,
}

impl StateGroup {
    pub const ALL: [StateGroup; 4] = [
        StateGroup::Position,
        StateGroup::Velocity,
        StateGroup::Attitude,
        StateGroup::AngularVelocity,
    ];

    pub fn offset(&self) -> usize {
        match self {
            StateGroup::Position => 0,
            StateGroup::Velocity => 3,
            StateGroup::Attitude => 6,
            StateGroup::AngularVelocity => 9,
        }
    }

    pub fn short(&self) -> &'static str {
        match self {
            StateGroup::Position => "p",
            StateGroup::Velocity => "v",
            StateGroup::Attitude => "R",
            StateGroup::AngularVelocity => "w",
        }
    }
}

fn group_of(row: &[f64], g: StateGroup) -> [f64; 3] {
    let o = g.offset();
    [row[o], row[o + 1], row[o + 2]]
}

fn group_error(truth: &[f64], pred: &[f64], g: StateGroup) -> f64 {
    let a = group_of(truth, g);
    let b = group_of(pred, g);
    match g {
        StateGroup::Attitude => geodesic_distance(a, b),
        _ => {
            let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            d.sqrt()
        }
    }
}

/// Per-window true/predicted 12-state sequences in physical units, all of
/// one fixed horizon.
pub struct WindowSet {
    pub horizon: usize,
    /// Each entry: `horizon` rows of 12 channels.
    pub truth: Vec<Vec<Vec<f64>>>,
    pub pred: Vec<Vec<Vec<f64>>>,
}

/// Mean Euclidean error of one state group at a 1-based horizon step:
/// the mean over windows of the step-`h` error norm (geodesic for the
/// attitude group).
pub fn mee(windows: &WindowSet, group: StateGroup, h: usize) -> Result<f64, EvalError> {
    if h < 1 || h > windows.horizon {
        return Err(EvalError::Metric(format!(
            "horizon step {h} outside 1..={}",
            windows.horizon
        )));
    }
    if windows.truth.len() != windows.pred.len() || windows.truth.is_empty() {
        return Err(EvalError::Metric("empty or mismatched window set".into()));
    }
    let mut sum = 0.0;
    for (t, p) in windows.truth.iter().zip(&windows.pred) {
        sum += group_error(&t[h - 1], &p[h - 1], group);
    }
    Ok(sum / windows.truth.len() as f64)
}

/// Cumulative error `Σ = sum over h = 1..=horizon of MEE(g, h)`.
pub fn cumulative_mee(windows: &WindowSet, group: StateGroup) -> Result<f64, EvalError> {
    let mut total = 0.0;
    for h in 1..=windows.horizon {
        total += mee(windows, group, h)?;
    }
    Ok(total)
}

/// MEE table over all groups: values at every horizon step plus cumulative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeeTable {
    pub horizon: usize,
    /// Keyed in [`StateGroup::ALL`] order; each vector holds MEE at
    /// h = 1..=horizon.
    pub per_horizon: Vec<Vec<f64>>,
    pub cumulative: Vec<f64>,
}

impl MeeTable {
    pub fn from_windows(windows: &WindowSet) -> Result<MeeTable, EvalError> {
        let mut per_horizon = Vec::with_capacity(4);
        let mut cumulative = Vec::with_capacity(4);
        for g in StateGroup::ALL {
            let series: Result<Vec<f64>, EvalError> =
                (1..=windows.horizon).map(|h| mee(windows, g, h)).collect();
            let series = series?;
            cumulative.push(series.iter().sum());
            per_horizon.push(series);
        }
        Ok(MeeTable { horizon: windows.horizon, per_horizon, cumulative })
    }

    pub fn at(&self, group: StateGroup, h: usize) -> f64 {
        let gi = StateGroup::ALL.iter().position(|g| *g == group).unwrap();
        self.per_horizon[gi][h - 1]
    }

    pub fn cumulative_for(&self, group: StateGroup) -> f64 {
        let gi = StateGroup::ALL.iter().position(|g| *g == group).unwrap();
        self.cumulative[gi]
    }
}

/// Per-fold metrics and their mean: the scalar V(θ) plus optional MEE detail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_fold: Vec<f64>,
    pub aggregate: Option<f64>,
    pub protocol_hash: String,
    pub mee: Option<MeeTable>,
}

impl MetricReport {
    pub fn from_folds(per_fold: Vec<f64>, protocol_hash: impl Into<String>) -> MetricReport {
        let aggregate = if per_fold.is_empty() {
            None
        } else {
            Some(per_fold.iter().sum::<f64>() / per_fold.len() as f64)
        };
        MetricReport { per_fold, aggregate, protocol_hash: protocol_hash.into(), mee: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn perfect_prediction_scores_zero() {
        let y: Vec<f64> = (0..100).map(|k| (k as f64).sin()).collect();
        assert_eq!(rmse(&y, &y, 1).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_the_offset() {
        let y: Vec<f64> = (0..64).map(|k| k as f64 * 0.1).collect();
        let p: Vec<f64> = y.iter().map(|v| v + 0.25).collect();
        let r = rmse(&y, &p, 10).unwrap();
        assert!((r - 0.25).abs() < 1e-12);
    }

    #[test]
    fn benchmark_discard_keeps_974_terms() {
        // K = 1024, k0 = 51: only the error at the one retained index
        // contributes 1/974 of the mean square
        let mut y = vec![0.0; 1024];
        let p = vec![0.0; 1024];
        y[50] = 1.0; // 1-based sample 51, first retained
        let r = rmse(&y, &p, 51).unwrap();
        assert!((r - (1.0f64 / 974.0).sqrt()).abs() < 1e-15);
        // an error before the discard must not count
        let mut y2 = vec![0.0; 1024];
        y2[49] = 100.0; // sample 50, discarded
        assert_eq!(rmse(&y2, &p, 51).unwrap(), 0.0);
    }

    #[test]
    fn discard_past_end_rejected() {
        assert!(rmse(&[0.0; 10], &[0.0; 10], 11).is_err());
    }

    #[test]
    fn geodesic_identity_and_quarter_yaw() {
        assert_eq!(geodesic_distance([0.1, -0.2, 0.4], [0.1, -0.2, 0.4]), 0.0);
        let d = geodesic_distance([0.0, 0.0, 0.0], [0.0, 0.0, FRAC_PI_2]);
        assert!((d - FRAC_PI_2).abs() < 1e-12, "yaw error of pi/2 is pi/2, got {d}");
    }

    #[test]
    fn geodesic_is_symmetric_and_bounded() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
            let b: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-3.0..3.0));
            let dab = geodesic_distance(a, b);
            let dba = geodesic_distance(b, a);
            assert!((dab - dba).abs() < 1e-12);
            assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&dab));
        }
    }

    #[test]
    fn out_of_range_angles_are_wrapped_not_rejected() {
        let d = geodesic_distance([0.0, 0.0, 7.0 * std::f64::consts::PI], [0.0, 0.0, std::f64::consts::PI]);
        assert!(d < 1e-9, "equivalent attitudes, got {d}");
    }

    #[test]
    fn constant_mee_accumulates_linearly() {
        // constant error of 0.1 at every step over h = 1..=50 sums to 5.0
        let truth: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; 12]; 50]];
        let mut pred = truth.clone();
        for row in &mut pred[0] {
            row[0] = 0.1; // position-x offset of 0.1
        }
        let w = WindowSet { horizon: 50, truth, pred };
        let sigma = cumulative_mee(&w, StateGroup::Position).unwrap();
        assert!((sigma - 5.0).abs() < 1e-12, "{sigma}");
    }

    #[test]
    fn fold_mean_is_the_aggregate() {
        let r = MetricReport::from_folds(vec![0.2, 0.3], "h");
        assert_eq!(r.aggregate, Some(0.25));
    }
}
